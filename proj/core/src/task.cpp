#include "dcat/task.hpp"

#include <algorithm>
#include <cmath>

#include "dcat/errors.hpp"

namespace dcat::task {

namespace {
constexpr double kPi = 3.14159265358979323846;
}

double scaled_assist_fmax(const TaskConfig& cfg, const sim::RobotModel& model) {
  return cfg.assist_fmax * model.total_mass() / model.nominal_mass;
}

double anneal_assist(int iteration, int total_anneal_iters, double fmax) {
  if (total_anneal_iters <= 0) throw UsageError("anneal_assist: schedule length must be > 0");
  if (iteration < 0) throw UsageError("anneal_assist: iteration must be >= 0");
  const double frac = 1.0 - static_cast<double>(iteration) / total_anneal_iters;
  return std::max(fmax * frac, 0.0);
}

int obs_dim(const sim::RobotModel& model) { return 3 + 3 * model.n_joints; }

std::vector<double> build_observation(const sim::SimState& state,
                                      const std::vector<double>& prev_action,
                                      const sim::RobotModel& model, const ObsNoise* noise,
                                      Rng* rng) {
  const int nj = model.n_joints;
  if (static_cast<int>(prev_action.size()) != nj) {
    throw UsageError("build_observation: prev_action size mismatch");
  }
  std::vector<double> obs;
  obs.reserve(static_cast<size_t>(obs_dim(model)));
  sim::Vec2 g = sim::projected_gravity(state.base_pitch);
  double w = state.base_ang_vel;
  std::vector<double> dq(nj), qd(nj);
  for (int j = 0; j < nj; ++j) {
    dq[j] = state.q[j] - model.q_default[j];
    qd[j] = state.qd[j];
  }
  if (noise && noise->enabled) {
    if (!rng) throw UsageError("build_observation: noise enabled but no rng");
    g.x += rng->uniform(-noise->gravity, noise->gravity);
    g.z += rng->uniform(-noise->gravity, noise->gravity);
    const double gn = g.norm();
    if (gn > 1e-9) {
      g.x /= gn;
      g.z /= gn;
    }
    w += rng->uniform(-noise->ang_vel, noise->ang_vel);
    for (int j = 0; j < nj; ++j) {
      dq[j] += rng->uniform(-noise->joint_pos, noise->joint_pos);
      qd[j] += rng->uniform(-noise->joint_vel, noise->joint_vel);
    }
  }
  obs.push_back(g.x);
  obs.push_back(g.z);
  obs.push_back(w);
  for (int j = 0; j < nj; ++j) obs.push_back(dq[j]);
  for (int j = 0; j < nj; ++j) obs.push_back(qd[j]);
  for (int j = 0; j < nj; ++j) obs.push_back(prev_action[j]);
  return obs;
}

int cmd_dim(const sim::RobotModel& model) { return 5 + model.n_joints; }

std::vector<double> build_cmd_vector(const motion::Frame& frame) {
  std::vector<double> cmd;
  cmd.reserve(5 + frame.q.size());
  cmd.push_back(frame.lin_vel.x);
  cmd.push_back(frame.lin_vel.z);
  cmd.push_back(frame.ang_vel);
  cmd.push_back(frame.gravity_dir.x);
  cmd.push_back(frame.gravity_dir.z);
  for (double q : frame.q) cmd.push_back(q);
  return cmd;
}

int critic_dim(const sim::RobotModel& model) {
  return obs_dim(model) + cmd_dim(model) + 1 + 2 * static_cast<int>(model.keypoints.size()) + 2;
}

std::vector<double> build_critic_input(const sim::SimState& state,
                                       const std::vector<double>& obs_clean,
                                       const std::vector<double>& cmd,
                                       const motion::Frame& frame,
                                       const sim::RobotModel& model) {
  std::vector<double> s;
  s.reserve(static_cast<size_t>(critic_dim(model)));
  s.insert(s.end(), obs_clean.begin(), obs_clean.end());
  s.insert(s.end(), cmd.begin(), cmd.end());
  s.push_back(frame.base_height);
  const auto kps = sim::keypoint_positions(model, state.base_pos, state.base_pitch, state.q);
  for (const auto& kp : kps) {
    s.push_back(kp.x);
    s.push_back(kp.z);
  }
  s.push_back(state.base_vel.x);
  s.push_back(state.base_vel.z);
  return s;
}

RewardBreakdown compute_reward(const sim::RobotModel& model, const RewardConfig& cfg,
                               const sim::SimState& state, const sim::SimState& prev_state,
                               const std::vector<double>& action,
                               const std::vector<double>& prev_action,
                               const motion::MotionClip& clip, int t) {
  if (model.keypoints.empty()) throw UsageError("compute_reward: model has no keypoints");
  const motion::Frame& ref = clip.frame(t);
  const motion::Frame& ref_prev = clip.frame(t - 1);
  if (ref.keypoints.size() != model.keypoints.size()) {
    throw UsageError("compute_reward: clip keypoint count does not match model");
  }
  const auto kp = sim::keypoint_positions(model, state.base_pos, state.base_pitch, state.q);
  const auto kp_prev =
      sim::keypoint_positions(model, prev_state.base_pos, prev_state.base_pitch, prev_state.q);
  const size_t nk = kp.size();
  const double fps = clip.fps;

  double e_kp = 0.0, e_rel = 0.0, e_vel = 0.0;
  for (size_t k = 0; k < nk; ++k) {
    e_kp += (kp[k] - ref.keypoints[k]).norm();
    const sim::Vec2 v_sim = (kp[k] - kp_prev[k]) * fps;
    const sim::Vec2 v_ref = (ref.keypoints[k] - ref_prev.keypoints[k]) * fps;
    e_vel += (v_sim - v_ref).norm();
    if (k > 0) {
      const sim::Vec2 rel_sim = kp[k] - kp[0];
      const sim::Vec2 rel_ref = ref.keypoints[k] - ref.keypoints[0];
      e_rel += (rel_sim - rel_ref).norm();
    }
  }
  e_kp /= static_cast<double>(nk);
  e_vel /= static_cast<double>(nk);
  if (nk > 1) e_rel /= static_cast<double>(nk - 1);

  RewardBreakdown r;
  r.r_kp = cfg.w_kp * std::exp(-(e_kp * e_kp) / (cfg.sigma_kp * cfg.sigma_kp));
  r.r_rel = cfg.w_rel * std::exp(-(e_rel * e_rel) / (cfg.sigma_rel * cfg.sigma_rel));
  r.r_vel = cfg.w_vel * std::exp(-(e_vel * e_vel) / (cfg.sigma_vel * cfg.sigma_vel));

  double rate = 0.0;
  for (size_t j = 0; j < action.size(); ++j) {
    const double d = action[j] - prev_action[j];
    rate += d * d;
  }
  r.p_action_rate = cfg.action_rate_c * rate;

  double limit_pen = 0.0;
  for (int j = 0; j < model.n_joints; ++j) {
    const double range = model.q_upper[j] - model.q_lower[j];
    const double margin = cfg.joint_limit_margin_frac * range;
    const double lo = model.q_lower[j] + margin;
    const double hi = model.q_upper[j] - margin;
    if (state.q[j] < lo) limit_pen += (lo - state.q[j]) / margin;
    if (state.q[j] > hi) limit_pen += (state.q[j] - hi) / margin;
  }
  r.p_joint_limit = cfg.joint_limit_c * limit_pen;

  int bad_contacts = 0;
  for (size_t l = 0; l < model.links.size(); ++l) {
    if (state.link_contact[l] && !model.foot_link[l]) ++bad_contacts;
  }
  r.p_contact = cfg.contact_c * bad_contacts;
  return r;
}

const char* to_string(TerminationReason r) {
  switch (r) {
    case TerminationReason::kNone: return "none";
    case TerminationReason::kTimeLimit: return "time_limit";
    case TerminationReason::kOrientation: return "orientation";
    case TerminationReason::kBaseHeight: return "base_height";
    case TerminationReason::kKeypointHeight: return "keypoint_height";
    case TerminationReason::kRecoveryTimeout: return "recovery_timeout";
  }
  return "?";
}

TerminationResult check_termination(const sim::RobotModel& model, const sim::SimState& state,
                                    const EpisodeConfig& cfg, double elapsed_s, bool recovered,
                                    double ref_pitch, double ref_height) {
  if (elapsed_s >= cfg.max_length_s) return {true, TerminationReason::kTimeLimit};
  if (cfg.is_recovery) {
    if (elapsed_s < cfg.recovery_window_s) return {false, TerminationReason::kNone};
    if (!recovered) return {true, TerminationReason::kRecoveryTimeout};
    // Recovered within the window: instability rules apply from here on.
  }
  const double dp = std::remainder(state.base_pitch - ref_pitch, 2.0 * kPi);
  if (std::fabs(dp) > cfg.instability.max_pitch) {
    return {true, TerminationReason::kOrientation};
  }
  const double h_drop = (1.0 - cfg.instability.min_base_height_frac) * model.standing_height;
  if (state.base_pos.z < ref_height - h_drop) return {true, TerminationReason::kBaseHeight};
  const double kp_min = cfg.instability.min_keypoint_frac * model.standing_height;
  const auto kps = sim::keypoint_positions(model, state.base_pos, state.base_pitch, state.q);
  for (size_t k = 1; k < kps.size(); ++k) {
    if (!model.foot_link[model.keypoints[k].link] && kps[k].z < kp_min) {
      return {true, TerminationReason::kKeypointHeight};
    }
  }
  return {false, TerminationReason::kNone};
}

EpisodeInit init_episode(const sim::RobotModel& model,
                         const std::vector<motion::MotionClip>& library, const TaskConfig& cfg,
                         Rng& rng, double assist_cap) {
  if (library.empty()) throw UsageError("init_episode: empty clip library");
  EpisodeInit init;
  init.config.recovery_window_s = cfg.recovery_window_s;
  init.config.instability = cfg.instability;

  const bool recovery = rng.bernoulli(cfg.recovery_prob);
  if (recovery) {
    init.config.is_recovery = true;
    init.config.assist_magnitude = rng.uniform(0.0, assist_cap);
    // Recovery episodes track a getup clip if the library has one.
    std::vector<int> getups;
    for (size_t i = 0; i < library.size(); ++i) {
      if (library[i].kind == "getup") getups.push_back(static_cast<int>(i));
    }
    init.clip_index = getups.empty()
                          ? static_cast<int>(rng.integer(library.size()))
                          : getups[rng.integer(getups.size())];
    init.t0 = 0;

    sim::SimState s = make_default_state(model);
    s.base_pitch = rng.uniform(-kPi, kPi);
    for (int j = 0; j < model.n_joints; ++j) {
      s.q[j] = rng.uniform(model.q_lower[j], model.q_upper[j]);
      s.qd[j] = rng.uniform(-0.5, 0.5);
    }
    s.base_vel = {rng.uniform(-0.2, 0.2), rng.uniform(-0.2, 0.2)};
    s.base_ang_vel = rng.uniform(-0.5, 0.5);
    s.base_pos = {0.0, 0.0};
    const double low = sim::lowest_contact_z(model, s.base_pos, s.base_pitch, s.q);
    s.base_pos.z = -low + rng.uniform(0.005, 0.05);
    init.state = s;
  } else {
    init.config.is_recovery = false;
    init.clip_index = static_cast<int>(rng.integer(library.size()));
    const motion::MotionClip& clip = library[static_cast<size_t>(init.clip_index)];
    const int min_tail = static_cast<int>(clip.fps);  // keep at least 1 s of clip
    const int max_t0 = std::max(0, clip.n_frames() - min_tail - 1);
    init.t0 = max_t0 > 0 ? static_cast<int>(rng.integer(static_cast<uint64_t>(max_t0) + 1)) : 0;

    const motion::Frame& f = clip.frame(init.t0);
    const motion::RefPose pose = motion::ref_pose(f);
    sim::SimState s = make_default_state(model);
    s.base_pos = pose.base_pos;
    s.base_pitch = pose.pitch;
    for (int j = 0; j < model.n_joints; ++j) {
      s.q[j] = std::clamp(f.q[j] + rng.uniform(-cfg.init_noise_q, cfg.init_noise_q),
                          model.q_lower[j], model.q_upper[j]);
      s.qd[j] = rng.uniform(-cfg.init_noise_vel, cfg.init_noise_vel);
    }
    const sim::Vec2 v_world = sim::body_to_world(pose.pitch, f.lin_vel);
    s.base_vel = {v_world.x + rng.uniform(-cfg.init_noise_vel, cfg.init_noise_vel),
                  v_world.z + rng.uniform(-cfg.init_noise_vel, cfg.init_noise_vel)};
    s.base_ang_vel = f.ang_vel + rng.uniform(-cfg.init_noise_vel, cfg.init_noise_vel);
    const double low = sim::lowest_contact_z(model, s.base_pos, s.base_pitch, s.q);
    if (low < 0.0) s.base_pos.z += -low + 0.001;
    init.state = s;
  }

  const motion::MotionClip& clip = library[static_cast<size_t>(init.clip_index)];
  const double remaining = (clip.n_frames() - init.t0) / clip.fps;
  init.config.max_length_s = std::min(cfg.max_episode_s, remaining);
  if (init.config.is_recovery) {
    init.config.max_length_s =
        std::max(init.config.max_length_s, cfg.recovery_window_s + 1.0);
  }
  return init;
}

// ---------------------------------------------------------------------------
// Env
// ---------------------------------------------------------------------------

Env::Env(const sim::RobotModel& model, const std::vector<motion::MotionClip>* library,
         const TaskConfig& cfg, int K, int L, Rng rng)
    : model_(model), library_(library), cfg_(cfg), K_(K), L_(L), rng_(rng) {
  if (!library_ || library_->empty()) throw UsageError("Env: empty clip library");
  prev_action_.assign(model_.n_joints, 0.0);
  reset(0.0);
}

int Env::frame_index() const {
  return std::min(t0_ + steps_, clip().n_frames() - 1);
}

double Env::elapsed_s() const { return steps_ * control_.control_dt(); }

void Env::push_observation() {
  obs_clean_ = build_observation(state_, prev_action_, model_, nullptr, nullptr);
  std::vector<double> noisy =
      cfg_.obs_noise.enabled
          ? build_observation(state_, prev_action_, model_, &cfg_.obs_noise, &rng_)
          : obs_clean_;
  if (obs_history_.empty()) {
    for (int i = 0; i <= K_; ++i) obs_history_.push_back(noisy);
  } else {
    obs_history_.push_back(std::move(noisy));
    while (static_cast<int>(obs_history_.size()) > K_ + 1) obs_history_.pop_front();
  }
}

void Env::reset(double assist_cap) {
  EpisodeInit init = init_episode(model_, *library_, cfg_, rng_, assist_cap);
  state_ = std::move(init.state);
  episode_ = init.config;
  clip_index_ = init.clip_index;
  t0_ = init.t0;
  steps_ = 0;
  prev_action_.assign(model_.n_joints, 0.0);
  obs_history_.clear();
  upright_time_ = 0.0;
  recovered_latched_ = false;
  push_observation();
}

Env::StepResult Env::step(const std::vector<double>& action) {
  const motion::MotionClip& c = clip();
  const int t_next = std::min(t0_ + steps_ + 1, c.n_frames() - 1);
  const std::vector<double> q_tar = sim::residual_setpoint(model_, c.frame(t_next).q, action);

  std::vector<sim::ExternalForce> forces;
  if (episode_.is_recovery && !recovered_latched_ &&
      elapsed_s() < episode_.recovery_window_s && episode_.assist_magnitude > 0.0) {
    forces.push_back(sim::apply_assist(episode_.assist_magnitude));
  }

  const sim::SimState prev = state_;
  state_ = sim::control_step(model_, state_, q_tar, forces, control_);
  ++steps_;

  StepResult res;
  res.reward = compute_reward(model_, cfg_.reward, state_, prev, action, prev_action_, c, t_next);
  prev_action_ = action;

  const bool upright = std::fabs(state_.base_pitch) < cfg_.recovered_pitch &&
                       state_.base_pos.z > cfg_.recovered_height_frac * model_.standing_height;
  upright_time_ = upright ? upright_time_ + control_.control_dt() : 0.0;
  if (upright_time_ >= cfg_.recovered_hold_s) recovered_latched_ = true;

  const motion::Frame& rf = c.frame(t_next);
  const TerminationResult term =
      check_termination(model_, state_, episode_, elapsed_s(), recovered_latched_,
                        motion::ref_pose(rf).pitch, rf.base_height);
  res.done = term.done;
  res.reason = term.reason;
  res.recovered = recovered_latched_;
  push_observation();
  return res;
}

ad::Tensor Env::obs_window() const {
  const int d = obs_dim(model_);
  ad::Tensor w({K_ + 1, d});
  int r = 0;
  for (const auto& obs : obs_history_) {
    for (int ci = 0; ci < d; ++ci) w.at(r, ci) = obs[static_cast<size_t>(ci)];
    ++r;
  }
  return w;
}

ad::Tensor Env::cmd_window() {
  std::vector<motion::Frame> window = motion::sample_window(clip(), frame_index(), L_);
  if (cfg_.train_cmd_noise_level > 0.0) {
    motion::inject_noise(window, cfg_.noise_spec, cfg_.train_cmd_noise_level, rng_);
  }
  const int d = cmd_dim(model_);
  ad::Tensor w({2 * L_ + 1, d});
  for (size_t r = 0; r < window.size(); ++r) {
    const std::vector<double> cmd = build_cmd_vector(window[r]);
    for (int ci = 0; ci < d; ++ci) w.at(static_cast<int>(r), ci) = cmd[static_cast<size_t>(ci)];
  }
  return w;
}

std::vector<double> Env::critic_input() const {
  const motion::Frame& f = clip().frame(frame_index());
  return build_critic_input(state_, obs_clean_, build_cmd_vector(f), f, model_);
}

namespace {

void write_vec(BinWriter& w, const std::vector<double>& v) {
  w.u64(v.size());
  w.f64_array(v.data(), v.size());
}

std::vector<double> read_vec(BinReader& r) {
  std::vector<double> v(r.u64());
  for (auto& x : v) x = r.f64();
  return v;
}

}  // namespace

void Env::serialize(BinWriter& w) const {
  w.str(rng_.serialize());
  w.f64(state_.base_pos.x);
  w.f64(state_.base_pos.z);
  w.f64(state_.base_pitch);
  w.f64(state_.base_vel.x);
  w.f64(state_.base_vel.z);
  w.f64(state_.base_ang_vel);
  w.f64(state_.time);
  write_vec(w, state_.q);
  write_vec(w, state_.qd);
  w.u64(state_.link_contact.size());
  for (uint8_t c : state_.link_contact) w.u32(c);
  w.u32(episode_.is_recovery ? 1 : 0);
  w.f64(episode_.recovery_window_s);
  w.f64(episode_.assist_magnitude);
  w.f64(episode_.max_length_s);
  w.u32(static_cast<uint32_t>(clip_index_));
  w.u32(static_cast<uint32_t>(t0_));
  w.u32(static_cast<uint32_t>(steps_));
  write_vec(w, prev_action_);
  w.u64(obs_history_.size());
  for (const auto& o : obs_history_) write_vec(w, o);
  write_vec(w, obs_clean_);
  w.f64(upright_time_);
  w.u32(recovered_latched_ ? 1 : 0);
}

void Env::deserialize(BinReader& r) {
  rng_ = Rng::deserialize(r.str());
  state_.base_pos.x = r.f64();
  state_.base_pos.z = r.f64();
  state_.base_pitch = r.f64();
  state_.base_vel.x = r.f64();
  state_.base_vel.z = r.f64();
  state_.base_ang_vel = r.f64();
  state_.time = r.f64();
  state_.q = read_vec(r);
  state_.qd = read_vec(r);
  state_.link_contact.resize(r.u64());
  for (auto& c : state_.link_contact) c = static_cast<uint8_t>(r.u32());
  episode_.is_recovery = r.u32() != 0;
  episode_.recovery_window_s = r.f64();
  episode_.assist_magnitude = r.f64();
  episode_.max_length_s = r.f64();
  episode_.instability = cfg_.instability;
  clip_index_ = static_cast<int>(r.u32());
  t0_ = static_cast<int>(r.u32());
  steps_ = static_cast<int>(r.u32());
  prev_action_ = read_vec(r);
  obs_history_.clear();
  const uint64_t n = r.u64();
  for (uint64_t i = 0; i < n; ++i) obs_history_.push_back(read_vec(r));
  obs_clean_ = read_vec(r);
  upright_time_ = r.f64();
  recovered_latched_ = r.u32() != 0;
}

}  // namespace dcat::task
