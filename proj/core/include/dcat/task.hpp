#pragma once

#include <cstdint>
#include <deque>
#include <string>
#include <vector>

#include "dcat/binio.hpp"
#include "dcat/motion.hpp"
#include "dcat/rng.hpp"
#include "dcat/sim.hpp"
#include "dcat/tensor.hpp"

namespace dcat::task {

// Actor observation noise: uniform per channel, applied after assembly.
// Defaults mirror the command-noise table scaled by 0.1.
struct ObsNoise {
  bool enabled = false;
  double gravity = 0.005;
  double ang_vel = 0.052;
  double joint_pos = 0.01;
  double joint_vel = 0.05;
};

struct InstabilityThresholds {
  double max_pitch = 1.0;              // rad
  double min_base_height_frac = 0.4;   // of standing height
  double min_keypoint_frac = 0.15;     // head/torso keypoints, of standing height
};

struct RewardConfig {
  double w_kp = 1.0;
  double sigma_kp = 0.25;      // m; 0.3 scaled by leg length / 0.6 m nominal
  double w_vel = 0.5;
  double sigma_vel = 1.0;      // m/s
  double w_rel = 0.5;
  double sigma_rel = 0.2;      // m
  double action_rate_c = 0.01;
  double joint_limit_c = 1.0;
  double joint_limit_margin_frac = 0.05;
  double contact_c = 0.5;      // per non-foot link in contact
};

struct TaskConfig {
  double recovery_prob = 0.15;
  double recovery_window_s = 3.0;
  double recovered_pitch = 0.4;        // |pitch| below this counts as upright
  double recovered_height_frac = 0.75; // of standing height
  double recovered_hold_s = 0.5;
  double assist_fmax = 200.0;          // N at nominal mass, scaled by mass ratio
  double max_episode_s = 10.0;
  double init_noise_q = 0.05;
  double init_noise_vel = 0.1;
  double train_cmd_noise_level = 0.0;  // % of the noise table during training
  InstabilityThresholds instability;
  RewardConfig reward;
  ObsNoise obs_noise;
  motion::NoiseSpec noise_spec;
};

// Assist force cap scaled to this robot's mass.
double scaled_assist_fmax(const TaskConfig& cfg, const sim::RobotModel& model);

// Linear annealing of the assist cap; reaches the floor (0) at schedule end.
double anneal_assist(int iteration, int total_anneal_iters, double fmax);

// Eq-style observation: [projected gravity (2), base angular velocity (1),
// q - q_default (N), qd (N), previous action (N)].
int obs_dim(const sim::RobotModel& model);
std::vector<double> build_observation(const sim::SimState& state,
                                      const std::vector<double>& prev_action,
                                      const sim::RobotModel& model,
                                      const ObsNoise* noise = nullptr, Rng* rng = nullptr);

// Command record: [ref lin vel (2), ref ang vel (1), ref gravity (2), ref q (N)].
int cmd_dim(const sim::RobotModel& model);
std::vector<double> build_cmd_vector(const motion::Frame& frame);

// Critic input: noise-free observation + command + privileged part
// [h_ref (1), robot keypoints world (2K), base lin vel world (2)].
int critic_dim(const sim::RobotModel& model);
std::vector<double> build_critic_input(const sim::SimState& state,
                                       const std::vector<double>& obs_clean,
                                       const std::vector<double>& cmd,
                                       const motion::Frame& frame,
                                       const sim::RobotModel& model);

struct RewardBreakdown {
  double r_kp = 0.0;
  double r_rel = 0.0;
  double r_vel = 0.0;
  double p_action_rate = 0.0;
  double p_joint_limit = 0.0;
  double p_contact = 0.0;
  double total() const { return r_kp + r_rel + r_vel - p_action_rate - p_joint_limit - p_contact; }
  double tracking() const { return r_kp + r_rel + r_vel; }
};

// Exponential tracking kernels on keypoints plus regularization penalties.
// `t` indexes the clip frame matching `state`; frame t-1 pairs with
// `prev_state` for the velocity term.
RewardBreakdown compute_reward(const sim::RobotModel& model, const RewardConfig& cfg,
                               const sim::SimState& state, const sim::SimState& prev_state,
                               const std::vector<double>& action,
                               const std::vector<double>& prev_action,
                               const motion::MotionClip& clip, int t);

struct EpisodeConfig {
  bool is_recovery = false;
  double recovery_window_s = 3.0;
  double assist_magnitude = 0.0;
  double max_length_s = 10.0;
  InstabilityThresholds instability;
};

enum class TerminationReason : uint8_t {
  kNone = 0,
  kTimeLimit,
  kOrientation,
  kBaseHeight,
  kKeypointHeight,
  kRecoveryTimeout,
};
const char* to_string(TerminationReason r);

struct TerminationResult {
  bool done = false;
  TerminationReason reason = TerminationReason::kNone;
};

// Normal episodes terminate on the time limit or any instability condition.
// Recovery episodes ignore instability until the window elapses, then
// terminate unless recovered. Orientation and base height are measured as
// deviation from the reference frame so ground-interaction references
// (crawl, getup) remain trainable; the keypoint check is absolute collapse.
TerminationResult check_termination(const sim::RobotModel& model, const sim::SimState& state,
                                    const EpisodeConfig& cfg, double elapsed_s, bool recovered,
                                    double ref_pitch, double ref_height);

struct EpisodeInit {
  sim::SimState state;
  EpisodeConfig config;
  int clip_index = 0;
  int t0 = 0;  // starting frame
};

// With probability `recovery_prob` a recovery episode (randomized unstable
// pose near the ground, assist magnitude ~ U[0, cap]); otherwise a tracking
// episode initialized on a random clip at a random phase.
EpisodeInit init_episode(const sim::RobotModel& model,
                         const std::vector<motion::MotionClip>& library, const TaskConfig& cfg,
                         Rng& rng, double assist_cap);

// Per-environment episode machinery: windows, reward, termination, reset.
class Env {
 public:
  Env(const sim::RobotModel& model, const std::vector<motion::MotionClip>* library,
      const TaskConfig& cfg, int K, int L, Rng rng);

  void reset(double assist_cap);

  struct StepResult {
    RewardBreakdown reward;
    bool done = false;
    TerminationReason reason = TerminationReason::kNone;
    bool recovered = false;  // recovery episodes only, valid at done
  };
  StepResult step(const std::vector<double>& action);

  // Actor inputs (history window carries actor observation noise).
  ad::Tensor obs_window() const;            // {K+1, obs_dim}
  ad::Tensor cmd_window();                  // {2L+1, cmd_dim}, train noise applied
  std::vector<double> critic_input() const; // noise-free
  const std::vector<double>& current_obs() const { return obs_history_.back(); }

  const sim::SimState& state() const { return state_; }
  const EpisodeConfig& episode() const { return episode_; }
  const motion::MotionClip& clip() const { return (*library_)[static_cast<size_t>(clip_index_)]; }
  int frame_index() const;
  double elapsed_s() const;
  bool recovered() const { return recovered_latched_; }
  const std::vector<double>& prev_action() const { return prev_action_; }
  Rng& rng() { return rng_; }

  // Exact state capture for resumable training.
  void serialize(BinWriter& w) const;
  void deserialize(BinReader& r);

 private:
  void push_observation();

  const sim::RobotModel& model_;
  const std::vector<motion::MotionClip>* library_;
  TaskConfig cfg_;
  int K_, L_;
  Rng rng_;
  sim::ControlConfig control_;

  sim::SimState state_;
  EpisodeConfig episode_;
  int clip_index_ = 0;
  int t0_ = 0;
  int steps_ = 0;
  std::vector<double> prev_action_;
  std::deque<std::vector<double>> obs_history_;       // noisy (actor view)
  std::vector<double> obs_clean_;                     // current, noise-free
  double upright_time_ = 0.0;
  bool recovered_latched_ = false;
};

}  // namespace dcat::task
