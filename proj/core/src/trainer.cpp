#include "dcat/trainer.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <thread>

#include "dcat/checkpoint.hpp"
#include "dcat/errors.hpp"
#include "dcat/gradcheck.hpp"

namespace dcat::train {

namespace fs = std::filesystem;
using ad::Tape;
using ad::Tensor;
using ad::Var;

namespace {
constexpr double kLog2Pi = 1.8378770664093453;
constexpr char kResumeMagic[8] = {'D', 'C', 'A', 'T', 'R', 'E', 'S', '1'};
}  // namespace

void PpoConfig::validate() const {
  if (num_envs < 1 || rollout_length < 1) throw ConfigError("ppo: envs and rollout must be >= 1");
  if (gamma < 0.0 || gamma > 1.0 || lam < 0.0 || lam > 1.0) {
    throw ConfigError("ppo: gamma and lambda must be in [0, 1]");
  }
  if (clip_ratio <= 0.0) throw ConfigError("ppo: clip ratio must be > 0");
  if (epochs < 1 || minibatches < 1) throw ConfigError("ppo: epochs/minibatches must be >= 1");
  if (minibatches > num_envs * rollout_length) throw ConfigError("ppo: more minibatches than samples");
  if (lr <= 0.0) throw ConfigError("ppo: learning rate must be > 0");
  if (iterations < 1 || anneal_iterations < 1) throw ConfigError("ppo: iteration counts must be >= 1");
  if (threads < 1) throw ConfigError("ppo: threads must be >= 1");
}

void RolloutBuffer::resize(const PpoConfig& cfg, int owl, int od, int cwl, int cd, int crd,
                           int ad_) {
  num_envs = cfg.num_envs;
  T = cfg.rollout_length;
  obs_window_len = owl;
  obs_dim = od;
  cmd_window_len = cwl;
  cmd_dim = cd;
  critic_dim = crd;
  action_dim = ad_;
  const size_t n = static_cast<size_t>(rows());
  obs_windows.assign(n * owl * od, 0.0);
  cmd_windows.assign(n * cwl * cd, 0.0);
  critic_inputs.assign(n * crd, 0.0);
  actions.assign(n * ad_, 0.0);
  logprobs.assign(n, 0.0);
  rewards.assign(n, 0.0);
  values.assign(n, 0.0);
  dones.assign(n, 0);
  reasons.assign(n, 0);
  bootstrap.assign(static_cast<size_t>(num_envs), 0.0);
}

double gaussian_logprob(const std::vector<double>& action, const std::vector<double>& mean,
                        const std::vector<double>& log_std) {
  double zsq = 0.0, lssum = 0.0;
  for (size_t j = 0; j < action.size(); ++j) {
    const double z = (action[j] - mean[j]) * std::exp(-log_std[j]);
    zsq += z * z;
    lssum += log_std[j];
  }
  return -0.5 * zsq - lssum - 0.5 * kLog2Pi * static_cast<double>(action.size());
}

namespace {

struct EnvAccumulator {
  RolloutStats stats;
};

void run_env_rollout(nets::Policy& policy, task::Env& env, int env_index, const PpoConfig& cfg,
                     double assist_cap, RolloutBuffer& buffer, RolloutStats& stats) {
  const int T = cfg.rollout_length;
  std::vector<double> mean, log_std, action(static_cast<size_t>(buffer.action_dim));
  for (int t = 0; t < T; ++t) {
    const int r = buffer.row(env_index, t);
    const Tensor obs_w = env.obs_window();
    const Tensor cmd_w = env.cmd_window();
    const std::vector<double> critic_in = env.critic_input();

    std::copy(obs_w.raw().begin(), obs_w.raw().end(),
              buffer.obs_windows.begin() + static_cast<size_t>(r) * obs_w.numel());
    std::copy(cmd_w.raw().begin(), cmd_w.raw().end(),
              buffer.cmd_windows.begin() + static_cast<size_t>(r) * cmd_w.numel());
    std::copy(critic_in.begin(), critic_in.end(),
              buffer.critic_inputs.begin() + static_cast<size_t>(r) * buffer.critic_dim);

    policy.act(obs_w, cmd_w, mean, log_std);
    for (size_t j = 0; j < action.size(); ++j) {
      action[j] = mean[j] + std::exp(log_std[j]) * env.rng().normal();
      if (!std::isfinite(action[j])) throw NumericError("collect: non-finite action");
    }
    std::copy(action.begin(), action.end(),
              buffer.actions.begin() + static_cast<size_t>(r) * buffer.action_dim);
    buffer.logprobs[r] = gaussian_logprob(action, mean, log_std);
    buffer.values[r] = policy.value(Tensor::vec(critic_in));

    const task::Env::StepResult sr = env.step(action);
    buffer.rewards[r] = sr.reward.total();
    buffer.dones[r] = sr.done ? 1 : 0;
    buffer.reasons[r] = static_cast<uint8_t>(sr.reason);

    stats.reward_sum += sr.reward.total();
    stats.r_kp += sr.reward.r_kp;
    stats.r_rel += sr.reward.r_rel;
    stats.r_vel += sr.reward.r_vel;
    stats.p_rate += sr.reward.p_action_rate;
    stats.p_limit += sr.reward.p_joint_limit;
    stats.p_contact += sr.reward.p_contact;

    if (sr.done) {
      ++stats.episodes_done;
      stats.episode_len_sum += env.elapsed_s();
      if (env.episode().is_recovery) {
        ++stats.recovery_done;
        if (sr.recovered) ++stats.recovery_success;
      }
      env.reset(assist_cap);
      ++stats.resets;
    }
  }
  buffer.bootstrap[env_index] =
      buffer.dones[buffer.row(env_index, T - 1)] ? 0.0 : policy.value(Tensor::vec(env.critic_input()));
}

}  // namespace

RolloutStats collect_rollouts(nets::Policy& policy, std::vector<task::Env>& envs,
                              const PpoConfig& cfg, double assist_cap, RolloutBuffer& buffer) {
  if (static_cast<int>(envs.size()) != cfg.num_envs) {
    throw UsageError("collect_rollouts: env count mismatch");
  }
  const int threads = cfg.deterministic ? 1 : std::max(1, cfg.threads);
  std::vector<RolloutStats> parts(envs.size());
  if (threads == 1) {
    for (size_t i = 0; i < envs.size(); ++i) {
      run_env_rollout(policy, envs[i], static_cast<int>(i), cfg, assist_cap, buffer, parts[i]);
    }
  } else {
    // Env streams are independent and buffer slots disjoint, so the result is
    // identical to the sequential path.
    std::vector<std::thread> pool;
    std::atomic<size_t> next{0};
    for (int w = 0; w < threads; ++w) {
      pool.emplace_back([&]() {
        for (size_t i = next.fetch_add(1); i < envs.size(); i = next.fetch_add(1)) {
          run_env_rollout(policy, envs[i], static_cast<int>(i), cfg, assist_cap, buffer, parts[i]);
        }
      });
    }
    for (auto& th : pool) th.join();
  }
  RolloutStats total;
  for (const auto& p : parts) {
    total.reward_sum += p.reward_sum;
    total.r_kp += p.r_kp;
    total.r_rel += p.r_rel;
    total.r_vel += p.r_vel;
    total.p_rate += p.p_rate;
    total.p_limit += p.p_limit;
    total.p_contact += p.p_contact;
    total.episodes_done += p.episodes_done;
    total.episode_len_sum += p.episode_len_sum;
    total.recovery_done += p.recovery_done;
    total.recovery_success += p.recovery_success;
    total.resets += p.resets;
  }
  return total;
}

void compute_gae(const RolloutBuffer& buffer, double gamma, double lam,
                 std::vector<double>& advantages, std::vector<double>& returns) {
  const int n = buffer.rows();
  advantages.assign(static_cast<size_t>(n), 0.0);
  returns.assign(static_cast<size_t>(n), 0.0);
  for (int e = 0; e < buffer.num_envs; ++e) {
    double acc = 0.0;
    for (int t = buffer.T - 1; t >= 0; --t) {
      const int r = buffer.row(e, t);
      const double nonterm = buffer.dones[r] ? 0.0 : 1.0;
      const double next_v =
          (t == buffer.T - 1) ? buffer.bootstrap[static_cast<size_t>(e)] : buffer.values[buffer.row(e, t + 1)];
      const double delta = buffer.rewards[r] + gamma * next_v * nonterm - buffer.values[r];
      acc = delta + gamma * lam * nonterm * acc;
      advantages[r] = acc;
      returns[r] = acc + buffer.values[r];
    }
  }
}

// ---------------------------------------------------------------------------
// Adam
// ---------------------------------------------------------------------------

Adam::Adam(ad::ParamStore& params, double lr, double beta1, double beta2, double eps)
    : params_(params), lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
  for (int i = 0; i < params.size(); ++i) {
    m_.push_back(Tensor::zeros_like(params.value(i)));
    v_.push_back(Tensor::zeros_like(params.value(i)));
  }
}

void Adam::step() {
  ++t_;
  const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (int i = 0; i < params_.size(); ++i) {
    Tensor& p = params_.value(i);
    const Tensor& g = params_.grad(i);
    Tensor& m = m_[static_cast<size_t>(i)];
    Tensor& v = v_[static_cast<size_t>(i)];
    for (int64_t k = 0; k < p.numel(); ++k) {
      m[k] = beta1_ * m[k] + (1.0 - beta1_) * g[k];
      v[k] = beta2_ * v[k] + (1.0 - beta2_) * g[k] * g[k];
      const double mhat = m[k] / bc1;
      const double vhat = v[k] / bc2;
      p[k] -= lr_ * mhat / (std::sqrt(vhat) + eps_);
      if (!std::isfinite(p[k])) {
        throw NumericError("adam: non-finite parameter " + params_.name(i));
      }
    }
  }
}

void Adam::serialize(BinWriter& w) const {
  w.u64(static_cast<uint64_t>(t_));
  w.u64(m_.size());
  for (size_t i = 0; i < m_.size(); ++i) {
    w.u64(static_cast<uint64_t>(m_[i].numel()));
    w.f64_array(m_[i].data(), static_cast<size_t>(m_[i].numel()));
    w.f64_array(v_[i].data(), static_cast<size_t>(v_[i].numel()));
  }
}

void Adam::deserialize(BinReader& r) {
  t_ = static_cast<int64_t>(r.u64());
  const uint64_t n = r.u64();
  if (n != m_.size()) throw UsageError("adam state size mismatch");
  for (size_t i = 0; i < m_.size(); ++i) {
    const uint64_t k = r.u64();
    if (k != static_cast<uint64_t>(m_[i].numel())) throw UsageError("adam tensor size mismatch");
    for (int64_t j = 0; j < m_[i].numel(); ++j) m_[i][j] = r.f64();
    for (int64_t j = 0; j < v_[i].numel(); ++j) v_[i][j] = r.f64();
  }
}

// ---------------------------------------------------------------------------
// PPO update
// ---------------------------------------------------------------------------

namespace {

Var as_scalar(Tape& tape, Var v) { return tape.reshape(v, {1}); }

}  // namespace

void normalize_advantages(std::vector<double>& advantages) {
  const size_t n = advantages.size();
  if (n == 0) return;
  double mu = 0.0;
  for (double a : advantages) mu += a;
  mu /= static_cast<double>(n);
  double var = 0.0;
  for (double a : advantages) var += (a - mu) * (a - mu);
  var /= static_cast<double>(n);
  const double inv_std = 1.0 / (std::sqrt(var) + 1e-8);
  for (double& a : advantages) a = (a - mu) * inv_std;
}

UpdateStats ppo_update(nets::Policy& policy, Adam& adam, const RolloutBuffer& buffer,
                       std::vector<double> advantages, const std::vector<double>& returns,
                       const PpoConfig& cfg, Rng& rng) {
  const int n = buffer.rows();
  if (static_cast<int>(advantages.size()) != n || static_cast<int>(returns.size()) != n) {
    throw UsageError("ppo_update: advantage/return size mismatch");
  }
  normalize_advantages(advantages);

  std::vector<int> order(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) order[static_cast<size_t>(i)] = i;

  UpdateStats stats;
  int64_t stat_count = 0;
  const int A = buffer.action_dim;
  std::vector<double> action(static_cast<size_t>(A));

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    // Fisher-Yates with the trainer stream keeps runs reproducible.
    for (int i = n - 1; i > 0; --i) {
      const int j = static_cast<int>(rng.integer(static_cast<uint64_t>(i) + 1));
      std::swap(order[static_cast<size_t>(i)], order[static_cast<size_t>(j)]);
    }
    for (int mb = 0; mb < cfg.minibatches; ++mb) {
      const int lo = static_cast<int>(static_cast<int64_t>(n) * mb / cfg.minibatches);
      const int hi = static_cast<int>(static_cast<int64_t>(n) * (mb + 1) / cfg.minibatches);
      const int mb_size = hi - lo;
      if (mb_size <= 0) continue;
      policy.params.zero_grad();
      const double inv_mb = 1.0 / mb_size;

      for (int s = lo; s < hi; ++s) {
        const int r = order[static_cast<size_t>(s)];
        const size_t ow = static_cast<size_t>(buffer.obs_window_len) * buffer.obs_dim;
        const size_t cw = static_cast<size_t>(buffer.cmd_window_len) * buffer.cmd_dim;
        Tensor obs_w({buffer.obs_window_len, buffer.obs_dim},
                     std::vector<double>(buffer.obs_windows.begin() + r * ow,
                                         buffer.obs_windows.begin() + (r + 1) * ow));
        Tensor cmd_w({buffer.cmd_window_len, buffer.cmd_dim},
                     std::vector<double>(buffer.cmd_windows.begin() + r * cw,
                                         buffer.cmd_windows.begin() + (r + 1) * cw));
        Tensor critic_in({buffer.critic_dim},
                         std::vector<double>(
                             buffer.critic_inputs.begin() + static_cast<size_t>(r) * buffer.critic_dim,
                             buffer.critic_inputs.begin() + static_cast<size_t>(r + 1) * buffer.critic_dim));
        Tensor obs_cur({1, buffer.obs_dim},
                       std::vector<double>(obs_w.raw().end() - buffer.obs_dim, obs_w.raw().end()));
        for (int j = 0; j < A; ++j) {
          action[static_cast<size_t>(j)] = buffer.actions[static_cast<size_t>(r) * A + j];
        }
        const double adv = advantages[static_cast<size_t>(r)];
        const double lp_old = buffer.logprobs[static_cast<size_t>(r)];
        const double ret = returns[static_cast<size_t>(r)];

        Tape tape;
        const nets::EncodeResult h = encode_history(tape, policy.params, policy.cfg, obs_w);
        const nets::EncodeResult u = encode_command(tape, policy.params, policy.cfg, h.out, cmd_w);
        const nets::ActorResult act = actor_forward(tape, policy.params, policy.cfg, obs_cur, u.out);

        const Var diff = tape.sub(tape.leaf(Tensor({1, A}, action)), act.mean);
        const Var z = tape.mul(diff, tape.exp(tape.scale(act.log_std, -1.0)));
        const Var lp = tape.add_scalar(
            tape.add(tape.scale(tape.sum(tape.mul(z, z)), -0.5),
                     tape.scale(tape.sum(act.log_std), -1.0)),
            -0.5 * kLog2Pi * A);
        const Var ratio = tape.exp(tape.add_scalar(lp, -lp_old));
        const Var surr1 = tape.scale(ratio, adv);
        const Var surr2 = tape.scale(tape.clamp(ratio, 1.0 - cfg.clip_ratio, 1.0 + cfg.clip_ratio), adv);
        const Var policy_loss = tape.scale(tape.min(surr1, surr2), -1.0);

        const Var v = critic_forward(tape, policy.params, policy.cfg, critic_in);
        const Var verr = tape.add_scalar(v, -ret);
        const Var value_loss = as_scalar(tape, tape.mul(verr, verr));

        const Var entropy = tape.add_scalar(tape.sum(act.log_std),
                                            0.5 * (kLog2Pi + 1.0) * A);

        Var loss = tape.add(policy_loss, tape.scale(value_loss, cfg.value_coef));
        loss = tape.sub(loss, tape.scale(entropy, cfg.entropy_coef));
        loss = tape.scale(loss, inv_mb);
        tape.backward(loss);

        const double ratio_v = tape.value(ratio).item();
        stats.policy_loss += tape.value(policy_loss).item();
        stats.value_loss += tape.value(value_loss).item();
        stats.entropy += tape.value(entropy).item();
        stats.approx_kl += lp_old - tape.value(lp).item();
        if (std::fabs(ratio_v - 1.0) > cfg.clip_ratio) stats.clip_fraction += 1.0;
        ++stat_count;
      }

      const double gnorm = policy.params.global_grad_norm();
      stats.grad_norm += gnorm;
      if (cfg.grad_clip > 0.0 && gnorm > cfg.grad_clip) {
        policy.params.scale_grads(cfg.grad_clip / gnorm);
      }
      adam.step();
    }
  }
  if (stat_count > 0) {
    stats.policy_loss /= static_cast<double>(stat_count);
    stats.value_loss /= static_cast<double>(stat_count);
    stats.entropy /= static_cast<double>(stat_count);
    stats.approx_kl /= static_cast<double>(stat_count);
    stats.clip_fraction /= static_cast<double>(stat_count);
    stats.grad_norm /= static_cast<double>(cfg.epochs * cfg.minibatches);
  }
  return stats;
}

// ---------------------------------------------------------------------------
// Training loop
// ---------------------------------------------------------------------------

std::string metrics_csv_header() {
  return "iteration,env_steps,reward_mean,r_kp,r_rel,r_vel,p_rate,p_limit,p_contact,"
         "episode_len_mean,episodes_done,recovery_fraction,recovery_success_fraction,"
         "assist_cap,policy_loss,value_loss,entropy,clip_fraction,approx_kl,grad_norm";
}

namespace {

void append_field(std::string& s, double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.12g", v);
  s += ',';
  s += buf;
}

}  // namespace

std::string metrics_csv_row(const IterRow& r) {
  std::string s = std::to_string(r.iteration) + "," + std::to_string(r.env_steps);
  append_field(s, r.reward_mean);
  append_field(s, r.r_kp);
  append_field(s, r.r_rel);
  append_field(s, r.r_vel);
  append_field(s, r.p_rate);
  append_field(s, r.p_limit);
  append_field(s, r.p_contact);
  append_field(s, r.episode_len_mean);
  s += ',' + std::to_string(r.episodes_done);
  append_field(s, r.recovery_fraction);
  append_field(s, r.recovery_success_fraction);
  append_field(s, r.assist_cap);
  append_field(s, r.update.policy_loss);
  append_field(s, r.update.value_loss);
  append_field(s, r.update.entropy);
  append_field(s, r.update.clip_fraction);
  append_field(s, r.update.approx_kl);
  append_field(s, r.update.grad_norm);
  return s;
}

namespace {

void save_resume_bundle(const std::string& path, int next_iter, const nets::Policy& policy,
                        const Adam& adam, const Rng& train_rng, std::vector<task::Env>& envs) {
  BinWriter w(path);
  w.bytes(kResumeMagic, 8);
  w.u32(static_cast<uint32_t>(next_iter));
  w.str(train_rng.serialize());
  w.u64(static_cast<uint64_t>(policy.params.size()));
  for (int i = 0; i < policy.params.size(); ++i) {
    w.str(policy.params.name(i));
    const Tensor& t = policy.params.value(i);
    w.u64(static_cast<uint64_t>(t.numel()));
    w.f64_array(t.data(), static_cast<size_t>(t.numel()));
  }
  adam.serialize(w);
  w.u64(envs.size());
  for (auto& e : envs) e.serialize(w);
}

int load_resume_bundle(const std::string& path, nets::Policy& policy, Adam& adam, Rng& train_rng,
                       std::vector<task::Env>& envs) {
  BinReader r(path);
  char magic[8];
  r.bytes(magic, 8);
  if (std::memcmp(magic, kResumeMagic, 8) != 0) throw UsageError("not a resume bundle: " + path);
  const int next_iter = static_cast<int>(r.u32());
  train_rng = Rng::deserialize(r.str());
  const uint64_t np = r.u64();
  if (np != static_cast<uint64_t>(policy.params.size())) {
    throw UsageError("resume: parameter count mismatch");
  }
  for (uint64_t i = 0; i < np; ++i) {
    const std::string name = r.str();
    Tensor& t = policy.params.value(name);
    const uint64_t k = r.u64();
    if (k != static_cast<uint64_t>(t.numel())) throw UsageError("resume: size mismatch for " + name);
    for (int64_t j = 0; j < t.numel(); ++j) t[j] = r.f64();
  }
  adam.deserialize(r);
  const uint64_t ne = r.u64();
  if (ne != envs.size()) throw UsageError("resume: env count mismatch");
  for (auto& e : envs) e.deserialize(r);
  return next_iter;
}

void rewrite_metrics_below(const std::string& path, int start_iter) {
  std::ifstream in(path);
  if (!in) throw UsageError("resume: missing metrics log " + path);
  std::vector<std::string> keep;
  std::string line;
  bool first = true;
  while (std::getline(in, line)) {
    if (first) {
      keep.push_back(line);
      first = false;
      continue;
    }
    const int it = std::atoi(line.c_str());
    if (it < start_iter) keep.push_back(line);
  }
  in.close();
  std::ofstream out(path, std::ios::trunc);
  for (const auto& l : keep) out << l << "\n";
}

}  // namespace

TrainResult train(const TrainSetup& setup, nets::Policy& policy, bool resume,
                  const std::function<void(const IterRow&)>& on_iter) {
  setup.ppo.validate();
  policy.cfg.validate();
  if (setup.library.empty()) throw UsageError("train: empty clip library");
  fs::create_directories(setup.run_dir);

  const PpoConfig& ppo = setup.ppo;
  std::vector<task::Env> envs;
  envs.reserve(static_cast<size_t>(ppo.num_envs));
  for (int i = 0; i < ppo.num_envs; ++i) {
    envs.emplace_back(setup.model, &setup.library, setup.task, policy.cfg.K, policy.cfg.L,
                      Rng(derive_seed(ppo.seed, 1000 + static_cast<uint64_t>(i))));
  }

  Rng train_rng(derive_seed(ppo.seed, 1));
  Adam adam(policy.params, ppo.lr);
  const double fmax = task::scaled_assist_fmax(setup.task, setup.model);

  const std::string metrics_path = (fs::path(setup.run_dir) / "metrics.csv").string();
  const std::string ckpt_path = (fs::path(setup.run_dir) / "checkpoint.ckpt").string();
  const std::string bundle_path = (fs::path(setup.run_dir) / "resume.bin").string();

  int start_iter = 0;
  if (resume) {
    start_iter = load_resume_bundle(bundle_path, policy, adam, train_rng, envs);
    rewrite_metrics_below(metrics_path, start_iter);
  } else {
    std::ofstream out(metrics_path, std::ios::trunc);
    if (!out) throw UsageError("cannot write metrics log: " + metrics_path);
    out << metrics_csv_header() << "\n";
    const double cap0 = task::anneal_assist(0, ppo.anneal_iterations, fmax);
    for (auto& e : envs) e.reset(cap0);
  }

  RolloutBuffer buffer;
  buffer.resize(ppo, policy.cfg.hist_len(), policy.cfg.obs_dim, policy.cfg.cmd_len(),
                policy.cfg.cmd_dim, policy.cfg.critic_dim, policy.cfg.action_dim);
  std::vector<double> advantages, returns;

  auto save_all = [&](int next_iter) {
    std::vector<ad::CheckpointEntry> meta;
    meta.push_back({"__meta.iteration", Tensor::scalar(static_cast<double>(next_iter))});
    meta.push_back({"__meta.seed", Tensor::scalar(static_cast<double>(ppo.seed))});
    ad::save_params(ckpt_path, policy.params, meta);
    save_resume_bundle(bundle_path, next_iter, policy, adam, train_rng, envs);
  };

  TrainResult result;
  for (int iter = start_iter; iter < ppo.iterations; ++iter) {
    const double cap = task::anneal_assist(iter, ppo.anneal_iterations, fmax);
    const RolloutStats rs = collect_rollouts(policy, envs, ppo, cap, buffer);
    compute_gae(buffer, ppo.gamma, ppo.lam, advantages, returns);
    const UpdateStats us = ppo_update(policy, adam, buffer, advantages, returns, ppo, train_rng);

    IterRow row;
    row.iteration = iter;
    row.env_steps = static_cast<int64_t>(iter + 1) * buffer.rows();
    const double inv_steps = 1.0 / buffer.rows();
    row.reward_mean = rs.reward_sum * inv_steps;
    row.r_kp = rs.r_kp * inv_steps;
    row.r_rel = rs.r_rel * inv_steps;
    row.r_vel = rs.r_vel * inv_steps;
    row.p_rate = rs.p_rate * inv_steps;
    row.p_limit = rs.p_limit * inv_steps;
    row.p_contact = rs.p_contact * inv_steps;
    row.episodes_done = rs.episodes_done;
    row.episode_len_mean = rs.episodes_done ? rs.episode_len_sum / rs.episodes_done : 0.0;
    row.recovery_fraction = rs.episodes_done ? static_cast<double>(rs.recovery_done) / rs.episodes_done : 0.0;
    row.recovery_success_fraction =
        rs.recovery_done ? static_cast<double>(rs.recovery_success) / rs.recovery_done : 0.0;
    row.assist_cap = cap;
    row.update = us;

    std::ofstream out(metrics_path, std::ios::app);
    out << metrics_csv_row(row) << "\n";
    out.close();
    if (on_iter) on_iter(row);

    if (ppo.checkpoint_every > 0 && (iter + 1) % ppo.checkpoint_every == 0) {
      save_all(iter + 1);
    }
    result.iterations_run = iter + 1;
  }
  save_all(ppo.iterations);
  result.checkpoint_path = ckpt_path;
  result.metrics_path = metrics_path;
  return result;
}

}  // namespace dcat::train
