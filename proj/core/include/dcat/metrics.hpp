#pragma once

#include <string>
#include <vector>

#include "dcat/motion.hpp"
#include "dcat/nets.hpp"
#include "dcat/sim.hpp"
#include "dcat/task.hpp"

namespace dcat::metrics {

struct EvalConfig {
  double fall_threshold_m = 0.2;        // at nominal scale
  double nominal_base_height = 0.75;    // reference robot standing base height
  int episodes = 10;
  uint64_t seed = 0;
  double threshold(const sim::RobotModel& model) const {
    return fall_threshold_m * model.standing_height / nominal_base_height;
  }
};

// Time-aligned rollout against a reference clip: deterministic actor mean,
// clean proprioception, optional command-window noise. One entry per frame.
struct EvalRollout {
  std::vector<double> base_heights;
  std::vector<std::vector<sim::Vec2>> keypoints;  // [frame][keypoint]
  std::vector<std::vector<sim::Vec2>> joints;     // [frame][joint]
  std::vector<sim::SimState> states;
};

EvalRollout run_tracking_rollout(nets::Policy& policy, const sim::RobotModel& model,
                                 const motion::MotionClip& clip, const motion::NoiseSpec& spec,
                                 double noise_level, uint64_t noise_seed);

// Success iff |base height - h_ref| <= threshold on every frame.
bool compute_success(const EvalRollout& rollout, const motion::MotionClip& clip,
                     double threshold_m);

// Mean Euclidean joint/keypoint position error vs the reference, in mm.
double compute_mpjpe(const EvalRollout& rollout, const motion::MotionClip& clip,
                     const sim::RobotModel& model);
double compute_mpkpe(const EvalRollout& rollout, const motion::MotionClip& clip);

// Mean keypoint velocity/acceleration error by first/second finite
// differences, in mm/frame and mm/frame^2.
struct VelAcc {
  double e_vel = 0.0;
  double e_acc = 0.0;
};
VelAcc compute_vel_acc(const EvalRollout& rollout, const motion::MotionClip& clip);

struct ClipMetrics {
  std::string clip_kind;
  int episodes = 0;
  double succ = 0.0;
  double mpjpe = 0.0;
  double mpkpe = 0.0;
  double e_vel = 0.0;
  double e_acc = 0.0;
};

struct MetricsReport {
  double succ = 0.0;
  double mpjpe = 0.0;
  double mpkpe = 0.0;
  double e_vel = 0.0;
  double e_acc = 0.0;
  int episodes = 0;
  std::vector<ClipMetrics> per_clip;
};

// Full protocol over a clip set at one noise level.
MetricsReport evaluate_policy(nets::Policy& policy, const sim::RobotModel& model,
                              const std::vector<motion::MotionClip>& clips,
                              const motion::NoiseSpec& spec, double noise_level,
                              const EvalConfig& cfg);

void write_report_csv(const std::string& path, const MetricsReport& report, double noise_level);

struct SweepVariant {
  std::string name;
  nets::Policy* policy = nullptr;
  uint64_t train_seed = 0;
};

struct SweepRow {
  double level = 0.0;
  std::string variant;
  uint64_t seed = 0;
  double succ = 0.0, mpjpe = 0.0, mpkpe = 0.0, e_vel = 0.0, e_acc = 0.0;
};

// level x variant x seed table; CSV columns
// (level, variant, seed, succ, mpjpe, mpkpe, e_vel, e_acc).
std::vector<SweepRow> run_noise_sweep(const std::vector<SweepVariant>& variants,
                                      const sim::RobotModel& model,
                                      const std::vector<motion::MotionClip>& clips,
                                      const motion::NoiseSpec& spec,
                                      const std::vector<double>& levels, const EvalConfig& cfg);
void write_sweep_csv(const std::string& path, const std::vector<SweepRow>& rows);

struct AblationRow {
  std::string variant;
  std::string suite;
  double succ_mean = 0.0, succ_std = 0.0;
  double mpjpe_mean = 0.0, mpjpe_std = 0.0;
  int seeds = 0;
};

struct AblationPolicy {
  std::string variant;           // full | cnn_hist | selfattn_cmd | no_recovery
  nets::Policy* policy = nullptr;
  uint64_t train_seed = 0;
  int budget_iterations = 0;     // for the budget-mismatch warning
};

struct AblationSuite {
  std::string name;  // tracking | ground_interaction
  std::vector<motion::MotionClip> clips;
};

// Succ and MPJPE per (variant, suite), mean +- std over seeds. Returns the
// rows; mismatched training budgets are reported through `warnings`.
std::vector<AblationRow> run_ablation_table(const std::vector<AblationPolicy>& policies,
                                            const std::vector<AblationSuite>& suites,
                                            const sim::RobotModel& model, const EvalConfig& cfg,
                                            std::vector<std::string>* warnings = nullptr);
void write_ablation_csv(const std::string& path, const std::vector<AblationRow>& rows);

}  // namespace dcat::metrics
