#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "dcat/errors.hpp"
#include "dcat/rng.hpp"
#include "dcat/trainer.hpp"

using namespace dcat;
using namespace dcat::train;

namespace {

nets::NetConfig tiny_net(const sim::RobotModel& model) {
  nets::NetConfig cfg;
  cfg.obs_dim = task::obs_dim(model);
  cfg.cmd_dim = task::cmd_dim(model);
  cfg.action_dim = model.n_joints;
  cfg.critic_dim = task::critic_dim(model);
  cfg.K = 3;
  cfg.L = 2;
  cfg.n_embd = 8;
  cfg.n_heads = 2;
  cfg.actor_hidden = {16};
  cfg.critic_hidden = {16};
  return cfg;
}

TrainSetup tiny_setup(const std::string& run_dir, uint64_t seed) {
  TrainSetup setup;
  setup.model = sim::make_biped_model();
  setup.task = task::TaskConfig{};
  setup.net = tiny_net(setup.model);
  setup.ppo.num_envs = 3;
  setup.ppo.rollout_length = 6;
  setup.ppo.epochs = 2;
  setup.ppo.minibatches = 2;
  setup.ppo.iterations = 4;
  setup.ppo.anneal_iterations = 4;
  setup.ppo.checkpoint_every = 2;
  setup.ppo.seed = seed;
  setup.library.push_back(
      motion::generate_clip(motion::ClipKind::kSquat, setup.model, 2.0, 21));
  setup.library.push_back(
      motion::generate_clip(motion::ClipKind::kGetup, setup.model, 2.0, 22));
  setup.run_dir = run_dir;
  return setup;
}

nets::Policy make_policy(const nets::NetConfig& cfg, uint64_t seed, bool random_heads = false) {
  nets::Policy policy;
  policy.cfg = cfg;
  nets::init_policy_params(cfg, seed, policy.params, random_heads);
  return policy;
}

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in.good());
  return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

}  // namespace

TEST_CASE("gae reductions and hand recursion") {
  // Single env, 3 steps, bootstrap value 0.
  RolloutBuffer buf;
  PpoConfig cfg;
  cfg.num_envs = 1;
  cfg.rollout_length = 3;
  buf.resize(cfg, 1, 1, 1, 1, 1, 1);
  buf.rewards = {1.0, 1.0, 1.0};
  buf.values = {0.5, 0.5, 0.5};
  buf.bootstrap = {0.0};
  std::vector<double> adv, ret;

  SUBCASE("gamma = 0 gives A = r - V") {
    compute_gae(buf, 0.0, 0.95, adv, ret);
    for (int t = 0; t < 3; ++t) CHECK(adv[t] == doctest::Approx(0.5).epsilon(1e-15));
  }
  SUBCASE("lambda = 0 gives the TD residual") {
    compute_gae(buf, 0.9, 0.0, adv, ret);
    CHECK(adv[0] == doctest::Approx(1.0 + 0.9 * 0.5 - 0.5).epsilon(1e-15));
    CHECK(adv[2] == doctest::Approx(1.0 + 0.0 - 0.5).epsilon(1e-15));
  }
  SUBCASE("three-step hand recursion") {
    compute_gae(buf, 0.9, 0.95, adv, ret);
    // Explicit recursive evaluation.
    const double d2 = 1.0 + 0.9 * 0.0 - 0.5;
    const double d1 = 1.0 + 0.9 * 0.5 - 0.5;
    const double d0 = 1.0 + 0.9 * 0.5 - 0.5;
    const double a2 = d2;
    const double a1 = d1 + 0.9 * 0.95 * a2;
    const double a0 = d0 + 0.9 * 0.95 * a1;
    CHECK(adv[2] == doctest::Approx(a2).epsilon(1e-15));
    CHECK(adv[1] == doctest::Approx(a1).epsilon(1e-15));
    CHECK(adv[0] == doctest::Approx(a0).epsilon(1e-15));
    for (int t = 0; t < 3; ++t) {
      CHECK(ret[t] == doctest::Approx(adv[t] + buf.values[t]).epsilon(1e-15));
    }
  }
}

TEST_CASE("gae matches brute force on random buffers with dones") {
  Rng rng(17);
  for (int trial = 0; trial < 20; ++trial) {
    PpoConfig cfg;
    cfg.num_envs = 1 + static_cast<int>(rng.integer(5));
    cfg.rollout_length = 2 + static_cast<int>(rng.integer(7));
    RolloutBuffer buf;
    buf.resize(cfg, 1, 1, 1, 1, 1, 1);
    for (int i = 0; i < buf.rows(); ++i) {
      buf.rewards[i] = rng.normal();
      buf.values[i] = rng.normal();
      buf.dones[i] = rng.bernoulli(0.25) ? 1 : 0;
    }
    for (int e = 0; e < cfg.num_envs; ++e) buf.bootstrap[e] = rng.normal();
    const double gamma = rng.uniform(0.8, 1.0), lam = rng.uniform(0.8, 1.0);

    std::vector<double> adv, ret;
    compute_gae(buf, gamma, lam, adv, ret);

    // Brute force: truncated forward sums of discounted deltas per step.
    for (int e = 0; e < cfg.num_envs; ++e) {
      for (int t = 0; t < cfg.rollout_length; ++t) {
        double expect = 0.0, w = 1.0;
        for (int k = t; k < cfg.rollout_length; ++k) {
          const int r = buf.row(e, k);
          const double nonterm = buf.dones[r] ? 0.0 : 1.0;
          const double next_v = (k == cfg.rollout_length - 1) ? buf.bootstrap[e]
                                                              : buf.values[buf.row(e, k + 1)];
          const double delta = buf.rewards[r] + gamma * next_v * nonterm - buf.values[r];
          expect += w * delta;
          if (!nonterm) break;
          w *= gamma * lam;
        }
        CHECK(adv[buf.row(e, t)] == doctest::Approx(expect).epsilon(1e-12));
      }
    }
  }
}

TEST_CASE("advantage normalization") {
  Rng rng(23);
  std::vector<double> adv(777);
  for (auto& a : adv) a = 3.0 + 2.5 * rng.normal();
  normalize_advantages(adv);
  double mu = 0.0;
  for (double a : adv) mu += a;
  mu /= adv.size();
  double var = 0.0;
  for (double a : adv) var += (a - mu) * (a - mu);
  var /= adv.size();
  CHECK(std::fabs(mu) < 1e-10);
  CHECK(std::fabs(std::sqrt(var) - 1.0) < 1e-6);
}

TEST_CASE("gaussian logprob matches the closed form") {
  const std::vector<double> a{0.3, -0.2}, m{0.1, 0.0}, s{std::log(0.5), std::log(2.0)};
  const double lp = gaussian_logprob(a, m, s);
  double expect = 0.0;
  for (int j = 0; j < 2; ++j) {
    const double sd = std::exp(s[j]);
    expect += -0.5 * std::pow((a[j] - m[j]) / sd, 2) - s[j] - 0.5 * std::log(2 * M_PI);
  }
  CHECK(lp == doctest::Approx(expect).epsilon(1e-12));
}

TEST_CASE("rollout collection: shape, determinism, auto-reset") {
  const sim::RobotModel model = sim::make_biped_model();
  std::vector<motion::MotionClip> lib{
      motion::generate_clip(motion::ClipKind::kSquat, model, 2.0, 31)};
  const nets::NetConfig ncfg = tiny_net(model);
  task::TaskConfig tcfg;
  tcfg.recovery_prob = 0.2;

  PpoConfig cfg;
  cfg.num_envs = 4;
  cfg.rollout_length = 8;
  cfg.seed = 77;

  auto make_envs = [&]() {
    std::vector<task::Env> envs;
    for (int i = 0; i < cfg.num_envs; ++i) {
      envs.emplace_back(model, &lib, tcfg, ncfg.K, ncfg.L,
                        Rng(derive_seed(cfg.seed, 1000 + i)));
    }
    return envs;
  };

  nets::Policy policy = make_policy(ncfg, 5);
  RolloutBuffer b1, b2;
  b1.resize(cfg, ncfg.hist_len(), ncfg.obs_dim, ncfg.cmd_len(), ncfg.cmd_dim, ncfg.critic_dim,
            ncfg.action_dim);
  b2 = b1;

  auto e1 = make_envs();
  auto e2 = make_envs();
  const RolloutStats s1 = collect_rollouts(policy, e1, cfg, 10.0, b1);
  const RolloutStats s2 = collect_rollouts(policy, e2, cfg, 10.0, b2);

  CHECK(static_cast<int>(b1.logprobs.size()) == cfg.num_envs * cfg.rollout_length);
  CHECK(b1.obs_windows == b2.obs_windows);
  CHECK(b1.cmd_windows == b2.cmd_windows);
  CHECK(b1.actions == b2.actions);
  CHECK(b1.logprobs == b2.logprobs);
  CHECK(b1.rewards == b2.rewards);
  CHECK(b1.values == b2.values);
  CHECK(b1.dones == b2.dones);
  CHECK(s1.reward_sum == s2.reward_sum);

  SUBCASE("threaded collection is bit-identical to sequential") {
    PpoConfig threaded = cfg;
    threaded.threads = 2;
    auto e3 = make_envs();
    RolloutBuffer b3 = b1;
    collect_rollouts(policy, e3, threaded, 10.0, b3);
    CHECK(b1.actions == b3.actions);
    CHECK(b1.rewards == b3.rewards);
    CHECK(b1.logprobs == b3.logprobs);
  }

  SUBCASE("terminating every step keeps the buffer rectangular") {
    task::TaskConfig tiny = tcfg;
    tiny.max_episode_s = 0.02;  // one control step
    tiny.recovery_prob = 0.0;
    std::vector<task::Env> envs;
    for (int i = 0; i < cfg.num_envs; ++i) {
      envs.emplace_back(model, &lib, tiny, ncfg.K, ncfg.L, Rng(derive_seed(9, i)));
    }
    RolloutBuffer b = b1;
    const RolloutStats st = collect_rollouts(policy, envs, cfg, 0.0, b);
    CHECK(st.resets == cfg.num_envs * cfg.rollout_length);
    for (uint8_t d : b.dones) CHECK(d == 1);
    CHECK(static_cast<int>(b.rewards.size()) == cfg.num_envs * cfg.rollout_length);
  }
}

TEST_CASE("ppo update invariants") {
  const sim::RobotModel model = sim::make_biped_model();
  std::vector<motion::MotionClip> lib{
      motion::generate_clip(motion::ClipKind::kSquat, model, 2.0, 41)};
  const nets::NetConfig ncfg = tiny_net(model);
  task::TaskConfig tcfg;
  tcfg.recovery_prob = 0.0;

  PpoConfig cfg;
  cfg.num_envs = 2;
  cfg.rollout_length = 5;
  cfg.epochs = 1;
  cfg.minibatches = 1;
  cfg.seed = 3;

  std::vector<task::Env> envs;
  for (int i = 0; i < cfg.num_envs; ++i) {
    envs.emplace_back(model, &lib, tcfg, ncfg.K, ncfg.L, Rng(derive_seed(3, i)));
  }
  nets::Policy policy = make_policy(ncfg, 6, /*random_heads=*/true);
  RolloutBuffer buf;
  buf.resize(cfg, ncfg.hist_len(), ncfg.obs_dim, ncfg.cmd_len(), ncfg.cmd_dim, ncfg.critic_dim,
             ncfg.action_dim);
  collect_rollouts(policy, envs, cfg, 0.0, buf);
  std::vector<double> adv, ret;
  compute_gae(buf, cfg.gamma, cfg.lam, adv, ret);

  SUBCASE("zero advantages with zero entropy leave the actor untouched") {
    PpoConfig zcfg = cfg;
    zcfg.entropy_coef = 0.0;
    std::vector<double> zero_adv(adv.size(), 0.0);
    std::vector<ad::Tensor> actor_before;
    for (int i = 0; i < policy.params.size(); ++i) {
      if (policy.params.name(i).rfind("actor.", 0) == 0) {
        actor_before.push_back(policy.params.value(i));
      }
    }
    Adam adam(policy.params, zcfg.lr);
    Rng rng(4);
    ppo_update(policy, adam, buf, zero_adv, ret, zcfg, rng);
    size_t k = 0;
    bool critic_changed = false;
    for (int i = 0; i < policy.params.size(); ++i) {
      const std::string& name = policy.params.name(i);
      if (name.rfind("actor.", 0) == 0) {
        CHECK(policy.params.value(i).bit_equal(actor_before[k]));
        ++k;
      } else if (name.rfind("critic.", 0) == 0 && !policy.params.value(i).bit_equal(
                     ad::Tensor::zeros_like(policy.params.value(i)))) {
        critic_changed = true;
      }
    }
    CHECK(critic_changed);
  }

  SUBCASE("ratio is exactly one before the first parameter step") {
    PpoConfig one = cfg;
    one.lr = 0.0;  // keep parameters fixed through the epoch
    Adam adam(policy.params, one.lr);
    Rng rng(4);
    const UpdateStats st = ppo_update(policy, adam, buf, adv, ret, one, rng);
    CHECK(st.clip_fraction == 0.0);
    CHECK(std::fabs(st.approx_kl) < 1e-12);
  }

  SUBCASE("descent on a tiny fixed batch") {
    PpoConfig tiny = cfg;
    tiny.num_envs = 1;
    tiny.rollout_length = 2;
    tiny.epochs = 1;
    tiny.minibatches = 1;
    tiny.lr = 1e-4;
    RolloutBuffer b1;
    b1.resize(tiny, ncfg.hist_len(), ncfg.obs_dim, ncfg.cmd_len(), ncfg.cmd_dim, ncfg.critic_dim,
              ncfg.action_dim);
    std::vector<task::Env> env1;
    env1.emplace_back(model, &lib, tcfg, ncfg.K, ncfg.L, Rng(1));
    collect_rollouts(policy, env1, tiny, 0.0, b1);
    const std::vector<double> a1{1.0, 2.0}, r1{2.0, 1.0};
    Adam adam(policy.params, tiny.lr);
    Rng rng(4);
    double prev_loss = 1e18;
    for (int step = 0; step < 10; ++step) {
      const UpdateStats st = ppo_update(policy, adam, b1, a1, r1, tiny, rng);
      const double loss = st.policy_loss + tiny.value_coef * st.value_loss -
                          tiny.entropy_coef * st.entropy;
      CHECK(loss < prev_loss);
      prev_loss = loss;
    }
  }
}

TEST_CASE("training loop writes logs and checkpoints, resumes exactly") {
  namespace fs = std::filesystem;
  const std::string dir_a = "trainer_test_run_a";
  const std::string dir_b = "trainer_test_run_b";
  fs::remove_all(dir_a);
  fs::remove_all(dir_b);

  // Full run.
  TrainSetup sa = tiny_setup(dir_a, 55);
  nets::Policy pa = make_policy(sa.net, sa.ppo.seed);
  const TrainResult ra = dcat::train::train(sa, pa);
  CHECK(ra.iterations_run == 4);
  CHECK(fs::exists(ra.checkpoint_path));
  CHECK(fs::exists(fs::path(dir_a) / "resume.bin"));

  // Interrupted at iteration 2 (checkpoint_every = 2), then resumed.
  TrainSetup sb = tiny_setup(dir_b, 55);
  {
    TrainSetup half = sb;
    half.ppo.iterations = 2;
    nets::Policy pb = make_policy(sb.net, sb.ppo.seed);
    dcat::train::train(half, pb);
  }
  {
    nets::Policy pb = make_policy(sb.net, sb.ppo.seed);
    dcat::train::train(sb, pb, /*resume=*/true);
  }
  CHECK(slurp((fs::path(dir_a) / "metrics.csv").string()) ==
        slurp((fs::path(dir_b) / "metrics.csv").string()));

  // Assist cap column decays linearly to zero over the schedule.
  {
    std::ifstream in((fs::path(dir_a) / "metrics.csv").string());
    std::string line;
    std::getline(in, line);  // header
    std::vector<double> caps;
    while (std::getline(in, line)) {
      size_t pos = 0;
      for (int c = 0; c < 13; ++c) pos = line.find(',', pos) + 1;
      caps.push_back(std::atof(line.c_str() + pos));
    }
    REQUIRE(caps.size() == 4);
    CHECK(caps[0] > caps[1]);
    CHECK(caps[1] > caps[2]);
    CHECK(caps[3] == doctest::Approx(caps[0] / 4.0).epsilon(1e-9));
  }

  fs::remove_all(dir_a);
  fs::remove_all(dir_b);
}

TEST_CASE("ppo config validation") {
  PpoConfig cfg;
  cfg.gamma = 1.5;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = PpoConfig{};
  cfg.clip_ratio = 0.0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = PpoConfig{};
  cfg.num_envs = 0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
}
