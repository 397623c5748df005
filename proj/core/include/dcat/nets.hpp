#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "dcat/autodiff.hpp"
#include "dcat/tensor.hpp"

namespace dcat::nets {

enum class HistVariant { kCausalTransformer, kCnn };
enum class CmdVariant { kCrossAttention, kSelfAttention };

const char* to_string(HistVariant v);
const char* to_string(CmdVariant v);
HistVariant hist_variant_from_string(const std::string& s);
CmdVariant cmd_variant_from_string(const std::string& s);

struct NetConfig {
  int obs_dim = 0;
  int cmd_dim = 0;
  int action_dim = 0;
  int critic_dim = 0;
  int K = 9;        // history window covers K+1 steps
  int L = 10;       // command window covers 2L+1 steps
  int n_embd = 64;
  int n_heads = 4;
  int token_hidden = 0;  // 0 -> n_embd
  int block_hidden = 0;  // 0 -> 2*n_embd
  std::vector<int> actor_hidden{128, 128};
  std::vector<int> critic_hidden{128, 128};
  HistVariant hist_variant = HistVariant::kCausalTransformer;
  CmdVariant cmd_variant = CmdVariant::kCrossAttention;
  double init_log_std = -0.6931471805599453;  // ln(0.5)
  double ln_eps = 1e-5;
  int cnn_kernel = 3;

  int hist_len() const { return K + 1; }
  int cmd_len() const { return 2 * L + 1; }
  int resolved_token_hidden() const { return token_hidden > 0 ? token_hidden : n_embd; }
  int resolved_block_hidden() const { return block_hidden > 0 ? block_hidden : 2 * n_embd; }
  void validate() const;
};

// Creates every learnable tensor for the configured variants. Hidden layers
// get orthogonal-like init; actor/critic output layers are zero-initialized
// unless `random_heads` is set (gradient checks need live head gradients).
void init_policy_params(const NetConfig& cfg, uint64_t seed, ad::ParamStore& params,
                        bool random_heads = false);

// Orthogonal-like init: Gram-Schmidt on gaussian rows/columns, scaled by gain.
ad::Tensor orthogonal_init(int rows, int cols, double gain, uint64_t seed);

struct EncodeResult {
  ad::Var out;                       // {1, n_embd}
  ad::Var pre_pool;                  // token features before pooling (when meaningful)
  std::vector<ad::Tensor> attn;      // per-head attention weights, rows sum to 1
};

struct ActorResult {
  ad::Var mean;     // {1, action_dim}
  ad::Var log_std;  // {1, action_dim}, state-independent
};

// Multi-head attention with scale 1/sqrt(d/n_heads); heads are column slices,
// concatenated and output-projected. `mask` uses -inf to forbid positions.
ad::Var mha(ad::Tape& tape, ad::ParamStore& params, const std::string& prefix, int n_heads,
            ad::Var query, ad::Var kv, const ad::Tensor* mask,
            std::vector<ad::Tensor>* attn_out = nullptr);

EncodeResult history_encode(ad::Tape& tape, ad::ParamStore& params, const NetConfig& cfg,
                            const ad::Tensor& obs_window);
EncodeResult history_encode_cnn(ad::Tape& tape, ad::ParamStore& params, const NetConfig& cfg,
                                const ad::Tensor& obs_window);
EncodeResult command_encode(ad::Tape& tape, ad::ParamStore& params, const NetConfig& cfg,
                            ad::Var h, const ad::Tensor& cmd_window);
EncodeResult command_encode_selfattn(ad::Tape& tape, ad::ParamStore& params, const NetConfig& cfg,
                                     ad::Var h, const ad::Tensor& cmd_window);

// Variant dispatchers.
EncodeResult encode_history(ad::Tape& tape, ad::ParamStore& params, const NetConfig& cfg,
                            const ad::Tensor& obs_window);
EncodeResult encode_command(ad::Tape& tape, ad::ParamStore& params, const NetConfig& cfg,
                            ad::Var h, const ad::Tensor& cmd_window);

ActorResult actor_forward(ad::Tape& tape, ad::ParamStore& params, const NetConfig& cfg,
                          const ad::Tensor& obs, ad::Var u);
ad::Var critic_forward(ad::Tape& tape, ad::ParamStore& params, const NetConfig& cfg,
                       const ad::Tensor& critic_input);

// Config plus parameters; the unit the trainer snapshots and checkpoints.
struct Policy {
  NetConfig cfg;
  ad::ParamStore params;

  // Full actor path: windows in, Gaussian (mean, log_std) out. No gradients.
  void act(const ad::Tensor& obs_window, const ad::Tensor& cmd_window,
           std::vector<double>& mean, std::vector<double>& log_std);
  double value(const ad::Tensor& critic_input);
};

}  // namespace dcat::nets
