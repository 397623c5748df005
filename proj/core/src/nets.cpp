#include "dcat/nets.hpp"

#include <cmath>

#include "dcat/errors.hpp"
#include "dcat/rng.hpp"

namespace dcat::nets {

using ad::ParamStore;
using ad::Tape;
using ad::Tensor;
using ad::Var;

const char* to_string(HistVariant v) {
  return v == HistVariant::kCausalTransformer ? "causal_transformer" : "cnn";
}
const char* to_string(CmdVariant v) {
  return v == CmdVariant::kCrossAttention ? "cross_attention" : "self_attention";
}

HistVariant hist_variant_from_string(const std::string& s) {
  if (s == "causal_transformer") return HistVariant::kCausalTransformer;
  if (s == "cnn") return HistVariant::kCnn;
  throw ConfigError("unknown hist_variant: " + s);
}

CmdVariant cmd_variant_from_string(const std::string& s) {
  if (s == "cross_attention") return CmdVariant::kCrossAttention;
  if (s == "self_attention") return CmdVariant::kSelfAttention;
  throw ConfigError("unknown cmd_variant: " + s);
}

void NetConfig::validate() const {
  if (obs_dim < 1 || cmd_dim < 1 || action_dim < 1 || critic_dim < 1) {
    throw ConfigError("net: dimensions must be >= 1");
  }
  if (K < 0 || L < 0) throw ConfigError("net: K and L must be >= 0");
  if (n_embd < 2 || n_embd % 2 != 0) throw ConfigError("net: n_embd must be even and >= 2");
  if (n_heads < 1 || n_embd % n_heads != 0) {
    throw ConfigError("net: n_embd must be divisible by n_heads");
  }
  if (cnn_kernel < 1) throw ConfigError("net: cnn_kernel must be >= 1");
  if (actor_hidden.empty() || critic_hidden.empty()) {
    throw ConfigError("net: actor/critic hidden layers must be non-empty");
  }
}

Tensor orthogonal_init(int rows, int cols, double gain, uint64_t seed) {
  Rng rng(seed);
  // Gram-Schmidt over the smaller index set; the other dimension holds the
  // vectors being orthonormalized.
  const bool by_cols = cols <= rows;
  const int nvec = by_cols ? cols : rows;
  const int dim = by_cols ? rows : cols;
  std::vector<std::vector<double>> v(nvec, std::vector<double>(dim));
  for (auto& vec : v) {
    for (auto& x : vec) x = rng.normal();
  }
  for (int i = 0; i < nvec; ++i) {
    for (int j = 0; j < i; ++j) {
      double dot = 0.0;
      for (int k = 0; k < dim; ++k) dot += v[i][k] * v[j][k];
      for (int k = 0; k < dim; ++k) v[i][k] -= dot * v[j][k];
    }
    double norm = 0.0;
    for (double x : v[i]) norm += x * x;
    norm = std::sqrt(norm);
    if (norm < 1e-12) {
      // Degenerate draw; fall back to a unit vector.
      for (auto& x : v[i]) x = 0.0;
      v[i][i % dim] = 1.0;
      norm = 1.0;
    }
    for (auto& x : v[i]) x /= norm;
  }
  Tensor w({rows, cols});
  for (int r = 0; r < rows; ++r) {
    for (int c = 0; c < cols; ++c) {
      w.at(r, c) = gain * (by_cols ? v[c][r] : v[r][c]);
    }
  }
  return w;
}

namespace {

struct Init {
  ParamStore& p;
  uint64_t seed;
  int counter = 0;

  void linear(const std::string& name, int in, int out, double gain) {
    p.create(name + ".w", orthogonal_init(in, out, gain, derive_seed(seed, ++counter)));
    p.create(name + ".b", Tensor({out}));
  }
  void linear_zero(const std::string& name, int in, int out) {
    p.create(name + ".w", Tensor({in, out}));
    p.create(name + ".b", Tensor({out}));
  }
  void layer_norm(const std::string& name, int d) {
    p.create(name + ".g", Tensor::filled({d}, 1.0));
    p.create(name + ".b", Tensor({d}));
  }
  void attention(const std::string& name, int d) {
    linear(name + ".q", d, d, 1.0);
    linear(name + ".k", d, d, 1.0);
    linear(name + ".v", d, d, 1.0);
    linear(name + ".o", d, d, 1.0);
  }
  void conv(const std::string& name, int k, int cin, int cout, double gain) {
    Tensor w({k, cin, cout});
    Rng rng(derive_seed(seed, ++counter));
    const double scale = gain / std::sqrt(static_cast<double>(k * cin));
    for (auto& x : w.raw()) x = scale * rng.normal();
    p.create(name + ".w", std::move(w));
    p.create(name + ".b", Tensor({cout}));
  }
};

constexpr double kSqrt2 = 1.4142135623730951;

// y = x W + b
Var linear(Tape& t, ParamStore& p, const std::string& name, Var x) {
  return t.add_rowvec(t.matmul(x, t.param(p, name + ".w")), t.param(p, name + ".b"));
}

Var mlp2(Tape& t, ParamStore& p, const std::string& name, Var x) {
  return linear(t, p, name + ".l2", t.gelu(linear(t, p, name + ".l1", x)));
}

Var layer_norm(Tape& t, ParamStore& p, const std::string& name, Var x, double eps) {
  return t.layer_norm(x, t.param(p, name + ".g"), t.param(p, name + ".b"), eps);
}

}  // namespace

void init_policy_params(const NetConfig& cfg, uint64_t seed, ParamStore& params,
                        bool random_heads) {
  cfg.validate();
  Init init{params, seed};
  const int d = cfg.n_embd;
  const int th = cfg.resolved_token_hidden();
  const int bh = cfg.resolved_block_hidden();

  if (cfg.hist_variant == HistVariant::kCausalTransformer) {
    init.linear("hist.tok.l1", cfg.obs_dim, th, kSqrt2);
    init.linear("hist.tok.l2", th, d, 1.0);
    init.layer_norm("hist.ln1", d);
    init.attention("hist.attn", d);
    init.layer_norm("hist.ln2", d);
    init.linear("hist.mlp.l1", d, bh, kSqrt2);
    init.linear("hist.mlp.l2", bh, d, 1.0);
    init.layer_norm("hist.lnf", d);
  } else {
    init.conv("hist.conv1", cfg.cnn_kernel, cfg.obs_dim, d, kSqrt2);
    init.conv("hist.conv2", cfg.cnn_kernel, d, d, 1.0);
  }

  init.linear("cmd.query.l1", d, th, kSqrt2);
  init.linear("cmd.query.l2", th, d, 1.0);
  init.linear("cmd.tok.l1", cfg.cmd_dim, th, kSqrt2);
  init.linear("cmd.tok.l2", th, d, 1.0);
  init.layer_norm("cmd.ln1", d);
  init.attention("cmd.attn", d);
  init.layer_norm("cmd.ln2", d);
  init.linear("cmd.mlp.l1", d, bh, kSqrt2);
  init.linear("cmd.mlp.l2", bh, d, 1.0);
  init.layer_norm("cmd.lnf", d);

  int in = cfg.obs_dim + d;
  for (size_t i = 0; i < cfg.actor_hidden.size(); ++i) {
    init.linear("actor.h" + std::to_string(i), in, cfg.actor_hidden[i], kSqrt2);
    in = cfg.actor_hidden[i];
  }
  if (random_heads) {
    init.linear("actor.out", in, cfg.action_dim, 0.1);
  } else {
    init.linear_zero("actor.out", in, cfg.action_dim);
  }
  params.create("actor.log_std", Tensor::filled({1, cfg.action_dim}, cfg.init_log_std));

  in = cfg.critic_dim;
  for (size_t i = 0; i < cfg.critic_hidden.size(); ++i) {
    init.linear("critic.h" + std::to_string(i), in, cfg.critic_hidden[i], kSqrt2);
    in = cfg.critic_hidden[i];
  }
  if (random_heads) {
    init.linear("critic.out", in, 1, 0.1);
  } else {
    init.linear_zero("critic.out", in, 1);
  }
}

Var mha(Tape& tape, ParamStore& params, const std::string& prefix, int n_heads,
        Var query, Var kv, const Tensor* mask, std::vector<Tensor>* attn_out) {
  const int d = tape.value(query).cols();
  if (d % n_heads != 0) throw UsageError("mha: width not divisible by head count");
  const int dh = d / n_heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

  const Var q = linear(tape, params, prefix + ".q", query);
  const Var k = linear(tape, params, prefix + ".k", kv);
  const Var v = linear(tape, params, prefix + ".v", kv);

  std::vector<Var> heads;
  heads.reserve(n_heads);
  for (int h = 0; h < n_heads; ++h) {
    const Var qh = tape.slice_cols(q, h * dh, dh);
    const Var kh = tape.slice_cols(k, h * dh, dh);
    const Var vh = tape.slice_cols(v, h * dh, dh);
    const Var scores = tape.scale(tape.matmul(qh, tape.transpose(kh)), scale);
    const Var weights = tape.softmax_rows(scores, mask);
    if (attn_out) attn_out->push_back(tape.value(weights));
    heads.push_back(tape.matmul(weights, vh));
  }
  return linear(tape, params, prefix + ".o", tape.concat_cols(heads));
}

EncodeResult history_encode(Tape& tape, ParamStore& params, const NetConfig& cfg,
                            const Tensor& obs_window) {
  const int T = cfg.hist_len();
  if (obs_window.rank() != 2 || obs_window.shape()[0] != T ||
      obs_window.shape()[1] != cfg.obs_dim) {
    throw UsageError("history_encode: window must be {K+1, obs_dim}");
  }
  EncodeResult res;
  const Var w = tape.leaf(obs_window);
  const Var tokens = mlp2(tape, params, "hist.tok", w);
  const Var h0 = tape.add(tokens, tape.leaf(ad::sinusoidal_pe(T, cfg.n_embd)));

  const Tensor mask = ad::causal_mask(T);
  const Var ln1 = layer_norm(tape, params, "hist.ln1", h0, cfg.ln_eps);
  const Var h1 = tape.add(h0, mha(tape, params, "hist.attn", cfg.n_heads, ln1, ln1, &mask, &res.attn));
  const Var ln2 = layer_norm(tape, params, "hist.ln2", h1, cfg.ln_eps);
  const Var h2 = tape.add(h1, mlp2(tape, params, "hist.mlp", ln2));
  res.pre_pool = layer_norm(tape, params, "hist.lnf", h2, cfg.ln_eps);
  res.out = tape.max_over_rows(res.pre_pool);
  return res;
}

EncodeResult history_encode_cnn(Tape& tape, ParamStore& params, const NetConfig& cfg,
                                const Tensor& obs_window) {
  const int T = cfg.hist_len();
  if (obs_window.rank() != 2 || obs_window.shape()[0] != T ||
      obs_window.shape()[1] != cfg.obs_dim) {
    throw UsageError("history_encode_cnn: window must be {K+1, obs_dim}");
  }
  EncodeResult res;
  const Var w = tape.leaf(obs_window);
  const Var c1 = tape.gelu(tape.conv1d_causal(w, tape.param(params, "hist.conv1.w"),
                                              tape.param(params, "hist.conv1.b")));
  res.pre_pool = tape.conv1d_causal(c1, tape.param(params, "hist.conv2.w"),
                                    tape.param(params, "hist.conv2.b"));
  res.out = tape.max_over_rows(res.pre_pool);
  return res;
}

EncodeResult command_encode(Tape& tape, ParamStore& params, const NetConfig& cfg,
                            Var h, const Tensor& cmd_window) {
  const int T = cfg.cmd_len();
  if (cmd_window.rank() != 2 || cmd_window.shape()[0] != T ||
      cmd_window.shape()[1] != cfg.cmd_dim) {
    throw UsageError("command_encode: window must be {2L+1, cmd_dim}");
  }
  EncodeResult res;
  const Var q = mlp2(tape, params, "cmd.query", h);
  const Var tokens = mlp2(tape, params, "cmd.tok", tape.leaf(cmd_window));
  const Var z = tape.add(tokens, tape.leaf(ad::sinusoidal_pe(T, cfg.n_embd)));

  const Var lnq = layer_norm(tape, params, "cmd.ln1", q, cfg.ln_eps);
  const Var s1 = tape.add(q, mha(tape, params, "cmd.attn", cfg.n_heads, lnq, z, nullptr, &res.attn));
  const Var ln2 = layer_norm(tape, params, "cmd.ln2", s1, cfg.ln_eps);
  const Var s2 = tape.add(s1, mlp2(tape, params, "cmd.mlp", ln2));
  res.out = layer_norm(tape, params, "cmd.lnf", s2, cfg.ln_eps);
  res.pre_pool = res.out;
  return res;
}

EncodeResult command_encode_selfattn(Tape& tape, ParamStore& params, const NetConfig& cfg,
                                     Var h, const Tensor& cmd_window) {
  const int T = cfg.cmd_len();
  if (cmd_window.rank() != 2 || cmd_window.shape()[0] != T ||
      cmd_window.shape()[1] != cfg.cmd_dim) {
    throw UsageError("command_encode_selfattn: window must be {2L+1, cmd_dim}");
  }
  EncodeResult res;
  const Var hq = mlp2(tape, params, "cmd.query", h);  // dynamics token, never a query
  const Var tokens = mlp2(tape, params, "cmd.tok", tape.leaf(cmd_window));
  const Var z = tape.add(tokens, tape.leaf(ad::sinusoidal_pe(T, cfg.n_embd)));
  const Var zkv = tape.concat_rows({z, hq});

  const Var lnq = layer_norm(tape, params, "cmd.ln1", z, cfg.ln_eps);
  const Var lnkv = layer_norm(tape, params, "cmd.ln1", zkv, cfg.ln_eps);
  const Var s1 = tape.add(z, mha(tape, params, "cmd.attn", cfg.n_heads, lnq, lnkv, nullptr, &res.attn));
  const Var ln2 = layer_norm(tape, params, "cmd.ln2", s1, cfg.ln_eps);
  const Var s2 = tape.add(s1, mlp2(tape, params, "cmd.mlp", ln2));
  res.pre_pool = layer_norm(tape, params, "cmd.lnf", s2, cfg.ln_eps);
  res.out = tape.mean_over_rows(res.pre_pool);
  return res;
}

EncodeResult encode_history(Tape& tape, ParamStore& params, const NetConfig& cfg,
                            const Tensor& obs_window) {
  return cfg.hist_variant == HistVariant::kCausalTransformer
             ? history_encode(tape, params, cfg, obs_window)
             : history_encode_cnn(tape, params, cfg, obs_window);
}

EncodeResult encode_command(Tape& tape, ParamStore& params, const NetConfig& cfg,
                            Var h, const Tensor& cmd_window) {
  return cfg.cmd_variant == CmdVariant::kCrossAttention
             ? command_encode(tape, params, cfg, h, cmd_window)
             : command_encode_selfattn(tape, params, cfg, h, cmd_window);
}

ActorResult actor_forward(Tape& tape, ParamStore& params, const NetConfig& cfg,
                          const Tensor& obs, Var u) {
  if (obs.numel() != cfg.obs_dim) throw UsageError("actor_forward: bad observation size");
  Var x = tape.concat_cols({tape.leaf(obs.reshaped({1, cfg.obs_dim})), u});
  for (size_t i = 0; i < cfg.actor_hidden.size(); ++i) {
    x = tape.tanh(linear(tape, params, "actor.h" + std::to_string(i), x));
  }
  ActorResult res;
  res.mean = linear(tape, params, "actor.out", x);
  res.log_std = tape.param(params, "actor.log_std");
  return res;
}

Var critic_forward(Tape& tape, ParamStore& params, const NetConfig& cfg,
                   const Tensor& critic_input) {
  if (critic_input.numel() != cfg.critic_dim) {
    throw UsageError("critic_forward: bad input size");
  }
  Var x = tape.leaf(critic_input.reshaped({1, cfg.critic_dim}));
  for (size_t i = 0; i < cfg.critic_hidden.size(); ++i) {
    x = tape.tanh(linear(tape, params, "critic.h" + std::to_string(i), x));
  }
  return linear(tape, params, "critic.out", x);
}

void Policy::act(const Tensor& obs_window, const Tensor& cmd_window,
                 std::vector<double>& mean, std::vector<double>& log_std) {
  Tape tape;
  const EncodeResult h = encode_history(tape, params, cfg, obs_window);
  const EncodeResult u = encode_command(tape, params, cfg, h.out, cmd_window);
  const Tensor obs = obs_window.rank() == 2
                         ? Tensor({1, cfg.obs_dim},
                                  std::vector<double>(
                                      obs_window.raw().end() - cfg.obs_dim,
                                      obs_window.raw().end()))
                         : obs_window;
  const ActorResult a = actor_forward(tape, params, cfg, obs, u.out);
  mean = tape.value(a.mean).raw();
  log_std = tape.value(a.log_std).raw();
}

double Policy::value(const Tensor& critic_input) {
  Tape tape;
  return tape.value(critic_forward(tape, params, cfg, critic_input)).item();
}

}  // namespace dcat::nets
