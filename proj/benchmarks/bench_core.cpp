#include <benchmark/benchmark.h>

#include "dcat/autodiff.hpp"
#include "dcat/motion.hpp"
#include "dcat/nets.hpp"
#include "dcat/rng.hpp"
#include "dcat/sim.hpp"
#include "dcat/task.hpp"

using namespace dcat;

namespace {

ad::Tensor random_tensor(std::vector<int> shape, Rng& rng) {
  ad::Tensor t(std::move(shape));
  for (auto& v : t.raw()) v = rng.normal();
  return t;
}

nets::NetConfig bench_cfg(int n_embd) {
  const sim::RobotModel model = sim::make_biped_model();
  nets::NetConfig cfg;
  cfg.obs_dim = task::obs_dim(model);
  cfg.cmd_dim = task::cmd_dim(model);
  cfg.action_dim = model.n_joints;
  cfg.critic_dim = task::critic_dim(model);
  cfg.n_embd = n_embd;
  cfg.n_heads = 4;
  return cfg;
}

void BM_Matmul(benchmark::State& state) {
  const int n = static_cast<int>(state.range(0));
  Rng rng(1);
  ad::Tape tape;
  const ad::Var a = tape.leaf(random_tensor({n, n}, rng));
  const ad::Var b = tape.leaf(random_tensor({n, n}, rng));
  for (auto _ : state) {
    ad::Tape t;
    const ad::Var x = t.matmul(t.leaf(tape.value(a)), t.leaf(tape.value(b)));
    benchmark::DoNotOptimize(t.value(x).data());
  }
  state.SetItemsProcessed(state.iterations() * 2 * int64_t(n) * n * n);
}
BENCHMARK(BM_Matmul)->Arg(32)->Arg(64)->Arg(128);

void BM_PolicyForward(benchmark::State& state) {
  const nets::NetConfig cfg = bench_cfg(static_cast<int>(state.range(0)));
  ad::ParamStore params;
  nets::init_policy_params(cfg, 3, params);
  Rng rng(2);
  const ad::Tensor obs_w = random_tensor({cfg.hist_len(), cfg.obs_dim}, rng);
  const ad::Tensor cmd_w = random_tensor({cfg.cmd_len(), cfg.cmd_dim}, rng);
  const ad::Tensor obs = random_tensor({1, cfg.obs_dim}, rng);
  for (auto _ : state) {
    ad::Tape tape;
    const auto h = nets::history_encode(tape, params, cfg, obs_w);
    const auto u = nets::command_encode(tape, params, cfg, h.out, cmd_w);
    const auto act = nets::actor_forward(tape, params, cfg, obs, u.out);
    benchmark::DoNotOptimize(tape.value(act.mean).data());
  }
}
BENCHMARK(BM_PolicyForward)->Arg(32)->Arg(64)->Arg(128);

void BM_PolicyBackward(benchmark::State& state) {
  const nets::NetConfig cfg = bench_cfg(static_cast<int>(state.range(0)));
  ad::ParamStore params;
  nets::init_policy_params(cfg, 3, params, /*random_heads=*/true);
  Rng rng(2);
  const ad::Tensor obs_w = random_tensor({cfg.hist_len(), cfg.obs_dim}, rng);
  const ad::Tensor cmd_w = random_tensor({cfg.cmd_len(), cfg.cmd_dim}, rng);
  const ad::Tensor obs = random_tensor({1, cfg.obs_dim}, rng);
  for (auto _ : state) {
    params.zero_grad();
    ad::Tape tape;
    const auto h = nets::history_encode(tape, params, cfg, obs_w);
    const auto u = nets::command_encode(tape, params, cfg, h.out, cmd_w);
    const auto act = nets::actor_forward(tape, params, cfg, obs, u.out);
    tape.backward(tape.mean(tape.mul(act.mean, act.mean)));
    benchmark::DoNotOptimize(params.grad(0).data());
  }
}
BENCHMARK(BM_PolicyBackward)->Arg(32)->Arg(64);

void BM_SimStep(benchmark::State& state) {
  const sim::RobotModel model = sim::make_biped_model();
  sim::SimState s = sim::make_default_state(model);
  const std::vector<double> q_tar(model.n_joints, 0.1);
  const sim::ControlConfig cc;
  // volatile sink: DoNotOptimize on double lvalues miscompiles on gcc 11 -O3
  volatile double sink = 0.0;
  for (auto _ : state) {
    s = sim::control_step(model, s, q_tar, {}, cc);
    sink = s.base_pos.z;
  }
  (void)sink;
}
BENCHMARK(BM_SimStep);

void BM_EnvStep(benchmark::State& state) {
  const sim::RobotModel model = sim::make_biped_model();
  std::vector<motion::MotionClip> lib{
      motion::generate_clip(motion::ClipKind::kWalk, model, 6.0, 1)};
  task::TaskConfig cfg;
  cfg.recovery_prob = 0.0;
  task::Env env(model, &lib, cfg, 9, 10, Rng(3));
  const std::vector<double> action(model.n_joints, 0.0);
  volatile double sink = 0.0;
  for (auto _ : state) {
    const auto res = env.step(action);
    if (res.done) env.reset(0.0);
    sink = res.reward.total();
  }
  (void)sink;
}
BENCHMARK(BM_EnvStep);

}  // namespace

BENCHMARK_MAIN();
