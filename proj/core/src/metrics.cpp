#include "dcat/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <deque>
#include <fstream>
#include <map>

#include "dcat/errors.hpp"

namespace dcat::metrics {

namespace {

void check_aligned(size_t rollout_frames, int clip_frames, const char* what) {
  if (rollout_frames != static_cast<size_t>(clip_frames)) {
    throw UsageError(std::string(what) + ": rollout/clip length mismatch");
  }
}

double mean_std(const std::vector<double>& v, double* std_out) {
  double mu = 0.0;
  for (double x : v) mu += x;
  mu /= static_cast<double>(v.size());
  double var = 0.0;
  for (double x : v) var += (x - mu) * (x - mu);
  var /= static_cast<double>(v.size());
  if (std_out) *std_out = std::sqrt(var);
  return mu;
}

void append_num(std::string& s, double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.10g", v);
  s += buf;
}

}  // namespace

EvalRollout run_tracking_rollout(nets::Policy& policy, const sim::RobotModel& model,
                                 const motion::MotionClip& clip, const motion::NoiseSpec& spec,
                                 double noise_level, uint64_t noise_seed) {
  const int n = clip.n_frames();
  const int K = policy.cfg.K, L = policy.cfg.L;
  Rng noise_rng(noise_seed);

  // Exact reference init at frame 0.
  const motion::Frame& f0 = clip.frame(0);
  const motion::RefPose pose0 = motion::ref_pose(f0);
  sim::SimState state = sim::make_default_state(model);
  state.base_pos = pose0.base_pos;
  state.base_pitch = pose0.pitch;
  state.q = f0.q;
  state.qd.assign(model.n_joints, 0.0);
  state.base_vel = sim::body_to_world(pose0.pitch, f0.lin_vel);
  state.base_ang_vel = f0.ang_vel;
  {
    const double low = sim::lowest_contact_z(model, state.base_pos, state.base_pitch, state.q);
    if (low < 0.0) state.base_pos.z += -low + 1e-4;
  }

  std::vector<double> prev_action(model.n_joints, 0.0);
  std::deque<std::vector<double>> history;
  const std::vector<double> obs0 = task::build_observation(state, prev_action, model);
  for (int i = 0; i <= K; ++i) history.push_back(obs0);

  sim::ControlConfig cc;
  EvalRollout out;
  out.base_heights.reserve(n);
  out.keypoints.reserve(n);
  out.joints.reserve(n);
  out.states.reserve(n);

  const int obs_d = task::obs_dim(model);
  const int cmd_d = task::cmd_dim(model);
  std::vector<double> mean, log_std;

  for (int t = 0; t < n; ++t) {
    out.base_heights.push_back(state.base_pos.z);
    out.keypoints.push_back(sim::keypoint_positions(model, state.base_pos, state.base_pitch, state.q));
    out.joints.push_back(sim::joint_positions(model, state.base_pos, state.base_pitch, state.q));
    out.states.push_back(state);
    if (t == n - 1) break;

    ad::Tensor obs_w({K + 1, obs_d});
    int r = 0;
    for (const auto& o : history) {
      for (int c = 0; c < obs_d; ++c) obs_w.at(r, c) = o[static_cast<size_t>(c)];
      ++r;
    }
    std::vector<motion::Frame> window = motion::sample_window(clip, t, L);
    if (noise_level > 0.0) motion::inject_noise(window, spec, noise_level, noise_rng);
    ad::Tensor cmd_w({2 * L + 1, cmd_d});
    for (size_t wr = 0; wr < window.size(); ++wr) {
      const std::vector<double> cmd = task::build_cmd_vector(window[wr]);
      for (int c = 0; c < cmd_d; ++c) cmd_w.at(static_cast<int>(wr), c) = cmd[static_cast<size_t>(c)];
    }

    policy.act(obs_w, cmd_w, mean, log_std);
    const std::vector<double> q_tar = sim::residual_setpoint(model, clip.frame(t + 1).q, mean);
    state = sim::control_step(model, state, q_tar, {}, cc);

    const std::vector<double> obs = task::build_observation(state, mean, model);
    history.push_back(obs);
    while (static_cast<int>(history.size()) > K + 1) history.pop_front();
    prev_action = mean;
  }
  return out;
}

bool compute_success(const EvalRollout& rollout, const motion::MotionClip& clip,
                     double threshold_m) {
  check_aligned(rollout.base_heights.size(), clip.n_frames(), "compute_success");
  for (int t = 0; t < clip.n_frames(); ++t) {
    if (std::fabs(rollout.base_heights[static_cast<size_t>(t)] - clip.frame(t).base_height) >
        threshold_m) {
      return false;
    }
  }
  return true;
}

double compute_mpjpe(const EvalRollout& rollout, const motion::MotionClip& clip,
                     const sim::RobotModel& model) {
  check_aligned(rollout.joints.size(), clip.n_frames(), "compute_mpjpe");
  double sum = 0.0;
  int64_t count = 0;
  for (int t = 0; t < clip.n_frames(); ++t) {
    const motion::Frame& f = clip.frame(t);
    const motion::RefPose pose = motion::ref_pose(f);
    const auto ref_joints = sim::joint_positions(model, pose.base_pos, pose.pitch, f.q);
    const auto& sim_joints = rollout.joints[static_cast<size_t>(t)];
    if (sim_joints.size() != ref_joints.size()) throw UsageError("compute_mpjpe: joint count mismatch");
    for (size_t j = 0; j < sim_joints.size(); ++j) {
      sum += (sim_joints[j] - ref_joints[j]).norm();
      ++count;
    }
  }
  return 1000.0 * sum / static_cast<double>(count);
}

double compute_mpkpe(const EvalRollout& rollout, const motion::MotionClip& clip) {
  check_aligned(rollout.keypoints.size(), clip.n_frames(), "compute_mpkpe");
  double sum = 0.0;
  int64_t count = 0;
  for (int t = 0; t < clip.n_frames(); ++t) {
    const auto& ref = clip.frame(t).keypoints;
    const auto& kp = rollout.keypoints[static_cast<size_t>(t)];
    if (kp.size() != ref.size()) throw UsageError("compute_mpkpe: keypoint count mismatch");
    for (size_t k = 0; k < kp.size(); ++k) {
      sum += (kp[k] - ref[k]).norm();
      ++count;
    }
  }
  return 1000.0 * sum / static_cast<double>(count);
}

VelAcc compute_vel_acc(const EvalRollout& rollout, const motion::MotionClip& clip) {
  check_aligned(rollout.keypoints.size(), clip.n_frames(), "compute_vel_acc");
  const int n = clip.n_frames();
  if (n < 3) throw UsageError("compute_vel_acc: need at least 3 frames");
  const size_t nk = rollout.keypoints[0].size();

  auto vel = [&](const auto& kps, int t, size_t k) {
    return (kps[static_cast<size_t>(t)][k] - kps[static_cast<size_t>(t - 1)][k]) * 1000.0;
  };
  auto ref_vel = [&](int t, size_t k) {
    return (clip.frame(t).keypoints[k] - clip.frame(t - 1).keypoints[k]) * 1000.0;
  };

  VelAcc out;
  int64_t vcount = 0, acount = 0;
  for (int t = 1; t < n; ++t) {
    for (size_t k = 0; k < nk; ++k) {
      out.e_vel += (vel(rollout.keypoints, t, k) - ref_vel(t, k)).norm();
      ++vcount;
      if (t >= 2) {
        const sim::Vec2 a_sim = vel(rollout.keypoints, t, k) - vel(rollout.keypoints, t - 1, k);
        const sim::Vec2 a_ref = ref_vel(t, k) - ref_vel(t - 1, k);
        out.e_acc += (a_sim - a_ref).norm();
        ++acount;
      }
    }
  }
  out.e_vel /= static_cast<double>(vcount);
  out.e_acc /= static_cast<double>(acount);
  return out;
}

MetricsReport evaluate_policy(nets::Policy& policy, const sim::RobotModel& model,
                              const std::vector<motion::MotionClip>& clips,
                              const motion::NoiseSpec& spec, double noise_level,
                              const EvalConfig& cfg) {
  if (clips.empty()) throw UsageError("evaluate_policy: no clips");
  const double thresh = cfg.threshold(model);
  MetricsReport report;
  double succ = 0.0, mpjpe = 0.0, mpkpe = 0.0, e_vel = 0.0, e_acc = 0.0;
  for (size_t ci = 0; ci < clips.size(); ++ci) {
    ClipMetrics cm;
    cm.clip_kind = clips[ci].kind;
    cm.episodes = cfg.episodes;
    for (int ep = 0; ep < cfg.episodes; ++ep) {
      const uint64_t seed = derive_seed(cfg.seed, derive_seed(static_cast<uint64_t>(noise_level * 1000.0) + ci,
                                                              static_cast<uint64_t>(ep)));
      const EvalRollout ro = run_tracking_rollout(policy, model, clips[ci], spec, noise_level, seed);
      cm.succ += compute_success(ro, clips[ci], thresh) ? 1.0 : 0.0;
      cm.mpjpe += compute_mpjpe(ro, clips[ci], model);
      cm.mpkpe += compute_mpkpe(ro, clips[ci]);
      const VelAcc va = compute_vel_acc(ro, clips[ci]);
      cm.e_vel += va.e_vel;
      cm.e_acc += va.e_acc;
    }
    const double inv = 1.0 / cfg.episodes;
    cm.succ *= inv;
    cm.mpjpe *= inv;
    cm.mpkpe *= inv;
    cm.e_vel *= inv;
    cm.e_acc *= inv;
    report.per_clip.push_back(cm);
    succ += cm.succ;
    mpjpe += cm.mpjpe;
    mpkpe += cm.mpkpe;
    e_vel += cm.e_vel;
    e_acc += cm.e_acc;
  }
  const double invc = 1.0 / static_cast<double>(clips.size());
  report.succ = succ * invc;
  report.mpjpe = mpjpe * invc;
  report.mpkpe = mpkpe * invc;
  report.e_vel = e_vel * invc;
  report.e_acc = e_acc * invc;
  report.episodes = cfg.episodes * static_cast<int>(clips.size());
  return report;
}

void write_report_csv(const std::string& path, const MetricsReport& report, double noise_level) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw UsageError("cannot write report: " + path);
  out << "clip,noise_level,episodes,succ,mpjpe_mm,mpkpe_mm,e_vel_mm_frame,e_acc_mm_frame2\n";
  auto row = [&](const std::string& clip, int eps, double s, double j, double k, double v, double a) {
    std::string line = clip;
    line += ',';
    append_num(line, noise_level);
    line += ',' + std::to_string(eps) + ',';
    append_num(line, s);
    line += ',';
    append_num(line, j);
    line += ',';
    append_num(line, k);
    line += ',';
    append_num(line, v);
    line += ',';
    append_num(line, a);
    out << line << "\n";
  };
  for (const auto& cm : report.per_clip) {
    row(cm.clip_kind, cm.episodes, cm.succ, cm.mpjpe, cm.mpkpe, cm.e_vel, cm.e_acc);
  }
  row("ALL", report.episodes, report.succ, report.mpjpe, report.mpkpe, report.e_vel, report.e_acc);
}

std::vector<SweepRow> run_noise_sweep(const std::vector<SweepVariant>& variants,
                                      const sim::RobotModel& model,
                                      const std::vector<motion::MotionClip>& clips,
                                      const motion::NoiseSpec& spec,
                                      const std::vector<double>& levels, const EvalConfig& cfg) {
  if (variants.empty()) throw UsageError("run_noise_sweep: no variants");
  for (const auto& v : variants) {
    if (!v.policy) throw UsageError("run_noise_sweep: missing checkpoint for " + v.name);
  }
  std::vector<SweepRow> rows;
  for (double level : levels) {
    if (level < 0.0) throw UsageError("run_noise_sweep: negative level");
    for (const auto& v : variants) {
      EvalConfig c = cfg;
      c.seed = derive_seed(cfg.seed, v.train_seed);
      const MetricsReport r = evaluate_policy(*v.policy, model, clips, spec, level, c);
      rows.push_back({level, v.name, v.train_seed, r.succ, r.mpjpe, r.mpkpe, r.e_vel, r.e_acc});
    }
  }
  return rows;
}

void write_sweep_csv(const std::string& path, const std::vector<SweepRow>& rows) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw UsageError("cannot write sweep csv: " + path);
  out << "level,variant,seed,succ,mpjpe,mpkpe,e_vel,e_acc\n";
  for (const auto& r : rows) {
    std::string line;
    append_num(line, r.level);
    line += ',' + r.variant + ',' + std::to_string(r.seed) + ',';
    append_num(line, r.succ);
    line += ',';
    append_num(line, r.mpjpe);
    line += ',';
    append_num(line, r.mpkpe);
    line += ',';
    append_num(line, r.e_vel);
    line += ',';
    append_num(line, r.e_acc);
    out << line << "\n";
  }
}

std::vector<AblationRow> run_ablation_table(const std::vector<AblationPolicy>& policies,
                                            const std::vector<AblationSuite>& suites,
                                            const sim::RobotModel& model, const EvalConfig& cfg,
                                            std::vector<std::string>* warnings) {
  if (policies.empty() || suites.empty()) throw UsageError("run_ablation_table: empty inputs");
  // Budget check: all checkpoints should carry the same iteration count.
  int budget = policies[0].budget_iterations;
  for (const auto& p : policies) {
    if (p.budget_iterations != budget && warnings) {
      warnings->push_back("budget mismatch: " + p.variant + " trained for " +
                          std::to_string(p.budget_iterations) + " iterations vs " +
                          std::to_string(budget));
    }
  }

  const motion::NoiseSpec clean_spec;
  std::map<std::string, std::map<std::string, std::pair<std::vector<double>, std::vector<double>>>> cells;
  for (const auto& p : policies) {
    for (const auto& suite : suites) {
      EvalConfig c = cfg;
      c.seed = derive_seed(cfg.seed, p.train_seed);
      const MetricsReport r = evaluate_policy(*p.policy, model, suite.clips, clean_spec, 0.0, c);
      cells[p.variant][suite.name].first.push_back(r.succ);
      cells[p.variant][suite.name].second.push_back(r.mpjpe);
    }
  }
  std::vector<AblationRow> rows;
  for (const auto& p : policies) {
    bool seen = false;
    for (const auto& r : rows) seen |= r.variant == p.variant;
    if (seen) continue;
    for (const auto& suite : suites) {
      AblationRow row;
      row.variant = p.variant;
      row.suite = suite.name;
      const auto& cell = cells[p.variant][suite.name];
      row.seeds = static_cast<int>(cell.first.size());
      row.succ_mean = mean_std(cell.first, &row.succ_std);
      row.mpjpe_mean = mean_std(cell.second, &row.mpjpe_std);
      rows.push_back(row);
    }
  }
  return rows;
}

void write_ablation_csv(const std::string& path, const std::vector<AblationRow>& rows) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw UsageError("cannot write ablation csv: " + path);
  out << "variant,suite,seeds,succ_mean,succ_std,mpjpe_mean,mpjpe_std\n";
  for (const auto& r : rows) {
    std::string line = r.variant + ',' + r.suite + ',' + std::to_string(r.seeds) + ',';
    append_num(line, r.succ_mean);
    line += ',';
    append_num(line, r.succ_std);
    line += ',';
    append_num(line, r.mpjpe_mean);
    line += ',';
    append_num(line, r.mpjpe_std);
    out << line << "\n";
  }
}

}  // namespace dcat::metrics
