#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "dcat/nets.hpp"
#include "dcat/task.hpp"

namespace dcat::train {

struct PpoConfig {
  int num_envs = 64;
  int rollout_length = 24;
  double gamma = 0.99;
  double lam = 0.95;
  double clip_ratio = 0.2;
  int epochs = 4;
  int minibatches = 4;
  double lr = 3e-4;
  double entropy_coef = 0.005;
  double value_coef = 0.5;
  double grad_clip = 1.0;
  int iterations = 300;
  int anneal_iterations = 200;
  int checkpoint_every = 50;
  uint64_t seed = 0;
  int threads = 1;
  bool deterministic = false;  // forces sequential rollout collection
  void validate() const;
};

// Rectangular per-env, per-step storage. Row index: env * T + t.
struct RolloutBuffer {
  int num_envs = 0, T = 0;
  int obs_window_len = 0, obs_dim = 0;
  int cmd_window_len = 0, cmd_dim = 0;
  int critic_dim = 0, action_dim = 0;

  std::vector<double> obs_windows;    // [rows][obs_window_len * obs_dim]
  std::vector<double> cmd_windows;    // [rows][cmd_window_len * cmd_dim]
  std::vector<double> critic_inputs;  // [rows][critic_dim]
  std::vector<double> actions;        // [rows][action_dim]
  std::vector<double> logprobs, rewards, values;  // [rows]
  std::vector<uint8_t> dones, reasons;            // [rows]
  std::vector<double> bootstrap;                  // [num_envs]

  void resize(const PpoConfig& cfg, int owl, int od, int cwl, int cd, int crd, int ad);
  int rows() const { return num_envs * T; }
  int row(int env, int t) const { return env * T + t; }
};

// Per-rollout aggregates for the metrics log.
struct RolloutStats {
  double reward_sum = 0.0;
  double r_kp = 0.0, r_rel = 0.0, r_vel = 0.0;
  double p_rate = 0.0, p_limit = 0.0, p_contact = 0.0;
  int episodes_done = 0;
  double episode_len_sum = 0.0;
  int recovery_done = 0;
  int recovery_success = 0;
  int resets = 0;
};

// Fixed-length rollout with auto-reset. Deterministic given the seed and the
// parameter snapshot; env streams are independent, so threading does not
// change the contents.
RolloutStats collect_rollouts(nets::Policy& policy, std::vector<task::Env>& envs,
                              const PpoConfig& cfg, double assist_cap, RolloutBuffer& buffer);

// delta_t = r_t + gamma V_{t+1} (1 - done) - V_t
// A_t = delta_t + gamma lam (1 - done) A_{t+1};  returns = A + V.
void compute_gae(const RolloutBuffer& buffer, double gamma, double lam,
                 std::vector<double>& advantages, std::vector<double>& returns);

// Gaussian diagnostics shared by rollout and update.
double gaussian_logprob(const std::vector<double>& action, const std::vector<double>& mean,
                        const std::vector<double>& log_std);

// In-place batch normalization to mean 0, std 1 (eps-guarded), as applied to
// advantages before the PPO epochs.
void normalize_advantages(std::vector<double>& advantages);

class Adam {
 public:
  Adam(ad::ParamStore& params, double lr, double beta1 = 0.9, double beta2 = 0.999,
       double eps = 1e-8);
  void step();
  void set_lr(double lr) { lr_ = lr; }
  int64_t t() const { return t_; }

  void serialize(BinWriter& w) const;
  void deserialize(BinReader& r);

 private:
  ad::ParamStore& params_;
  double lr_, beta1_, beta2_, eps_;
  int64_t t_ = 0;
  std::vector<ad::Tensor> m_, v_;
};

struct UpdateStats {
  double policy_loss = 0.0;
  double value_loss = 0.0;
  double entropy = 0.0;
  double clip_fraction = 0.0;
  double approx_kl = 0.0;
  double grad_norm = 0.0;
};

// Clipped-surrogate PPO epoch loop over shuffled minibatches. Advantages are
// normalized over the whole batch first (mean 0, std 1, eps-guarded).
UpdateStats ppo_update(nets::Policy& policy, Adam& adam, const RolloutBuffer& buffer,
                       std::vector<double> advantages, const std::vector<double>& returns,
                       const PpoConfig& cfg, Rng& rng);

struct IterRow {
  int iteration = 0;
  int64_t env_steps = 0;
  double reward_mean = 0.0;
  double r_kp = 0.0, r_rel = 0.0, r_vel = 0.0;
  double p_rate = 0.0, p_limit = 0.0, p_contact = 0.0;
  double episode_len_mean = 0.0;
  int episodes_done = 0;
  double recovery_fraction = 0.0;
  double recovery_success_fraction = 0.0;
  double assist_cap = 0.0;
  UpdateStats update;
};

struct TrainSetup {
  sim::RobotModel model;
  task::TaskConfig task;
  nets::NetConfig net;  // dims must already be resolved against the model
  PpoConfig ppo;
  std::vector<motion::MotionClip> library;
  std::string run_dir;
};

struct TrainResult {
  int iterations_run = 0;
  std::string checkpoint_path;
  std::string metrics_path;
};

// Full loop: anneal -> collect -> GAE -> update -> log; checkpoints and a
// resume bundle land in the run directory. `resume` continues a previous run
// bit-exactly in deterministic mode.
TrainResult train(const TrainSetup& setup, nets::Policy& policy, bool resume = false,
                  const std::function<void(const IterRow&)>& on_iter = nullptr);

std::string metrics_csv_header();
std::string metrics_csv_row(const IterRow& row);

}  // namespace dcat::train
