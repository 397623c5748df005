#include "dcat/gradsuite.hpp"

#include "dcat/errors.hpp"
#include "dcat/rng.hpp"

namespace dcat::ad {

namespace {

Tensor random_tensor(std::vector<int> shape, Rng& rng, double scale) {
  Tensor t(std::move(shape));
  for (auto& v : t.raw()) v = scale * rng.normal();
  return t;
}

Op fault_op_from_string(const std::string& s) {
  if (s == "tanh") return Op::kTanh;
  if (s == "matmul") return Op::kMatmul;
  if (s == "layer_norm") return Op::kLayerNorm;
  if (s == "softmax_rows") return Op::kSoftmaxRows;
  if (s == "gelu") return Op::kGelu;
  if (s == "conv1d_causal") return Op::kConv1dCausal;
  throw UsageError("unknown fault op: " + s);
}

}  // namespace

std::vector<std::pair<std::string, GradCheckReport>> run_policy_gradcheck(
    const nets::NetConfig& cfg, uint64_t seed, const GradCheckOptions& opt,
    const std::string& fault_op) {
  cfg.validate();
  Rng rng(derive_seed(seed, 0xCCEEDD));
  const Tensor obs_window = random_tensor({cfg.hist_len(), cfg.obs_dim}, rng, 0.5);
  const Tensor cmd_window = random_tensor({cfg.cmd_len(), cfg.cmd_dim}, rng, 0.5);
  const Tensor h_const = random_tensor({1, cfg.n_embd}, rng, 0.5);
  const Tensor obs_cur = random_tensor({1, cfg.obs_dim}, rng, 0.5);
  const Tensor critic_in = random_tensor({cfg.critic_dim}, rng, 0.5);

  const bool has_fault = !fault_op.empty();
  const Op fop = has_fault ? fault_op_from_string(fault_op) : Op::kLeaf;
  auto prepare = [&](Tape& tape) {
    if (has_fault) tape.set_backward_fault(fop, 1.02);
  };

  std::vector<std::pair<std::string, GradCheckReport>> results;

  auto check = [&](const std::string& name, const nets::NetConfig& c, const LossFn& f,
                   const std::string& prefix) {
    ParamStore params;
    nets::init_policy_params(c, derive_seed(seed, 7), params, /*random_heads=*/true);
    GradCheckOptions o = opt;
    o.param_prefix = prefix;
    results.emplace_back(name, grad_check(f, params, o));
  };

  {
    nets::NetConfig c = cfg;
    c.hist_variant = nets::HistVariant::kCausalTransformer;
    check("history_encoder", c,
          [&](Tape& tape, ParamStore& p) {
            prepare(tape);
            const auto r = nets::history_encode(tape, p, c, obs_window);
            return tape.mean(tape.mul(r.out, r.out));
          },
          "hist.");
    check("command_encoder", c,
          [&](Tape& tape, ParamStore& p) {
            prepare(tape);
            const auto r = nets::command_encode(tape, p, c, tape.leaf(h_const), cmd_window);
            return tape.mean(tape.mul(r.out, r.out));
          },
          "cmd.");
    check("actor", c,
          [&](Tape& tape, ParamStore& p) {
            prepare(tape);
            const auto a = nets::actor_forward(tape, p, c, obs_cur, tape.leaf(h_const));
            return tape.add(tape.mean(tape.mul(a.mean, a.mean)),
                            tape.mean(tape.mul(a.log_std, a.log_std)));
          },
          "actor.");
    check("critic", c,
          [&](Tape& tape, ParamStore& p) {
            prepare(tape);
            const Var v = nets::critic_forward(tape, p, c, critic_in);
            return tape.reshape(tape.mul(v, v), {1});
          },
          "critic.");
    check("end_to_end", c,
          [&](Tape& tape, ParamStore& p) {
            prepare(tape);
            const auto h = nets::history_encode(tape, p, c, obs_window);
            const auto u = nets::command_encode(tape, p, c, h.out, cmd_window);
            const auto a = nets::actor_forward(tape, p, c, obs_cur, u.out);
            return tape.add(tape.mean(tape.mul(a.mean, a.mean)),
                            tape.mean(tape.mul(a.log_std, a.log_std)));
          },
          "");
  }
  {
    nets::NetConfig c = cfg;
    c.hist_variant = nets::HistVariant::kCnn;
    check("history_encoder_cnn", c,
          [&](Tape& tape, ParamStore& p) {
            prepare(tape);
            const auto r = nets::history_encode_cnn(tape, p, c, obs_window);
            return tape.mean(tape.mul(r.out, r.out));
          },
          "hist.");
  }
  {
    nets::NetConfig c = cfg;
    c.cmd_variant = nets::CmdVariant::kSelfAttention;
    check("command_encoder_selfattn", c,
          [&](Tape& tape, ParamStore& p) {
            prepare(tape);
            const auto r = nets::command_encode_selfattn(tape, p, c, tape.leaf(h_const), cmd_window);
            return tape.mean(tape.mul(r.out, r.out));
          },
          "cmd.");
  }
  return results;
}

}  // namespace dcat::ad
