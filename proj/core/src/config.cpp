#include "dcat/config.hpp"

#include <fstream>
#include <set>

#include <json.hpp>

#include "dcat/errors.hpp"

namespace dcat {

using nlohmann::json;

namespace {

void check_keys(const json& j, const std::set<std::string>& allowed, const std::string& where) {
  if (!j.is_object()) throw ConfigError("config: " + where + " must be an object");
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (!allowed.count(it.key())) {
      throw ConfigError("config: unknown key \"" + it.key() + "\" in " + where);
    }
  }
}

template <typename T>
void get(const json& j, const char* key, T& out) {
  if (j.contains(key)) {
    try {
      out = j.at(key).get<T>();
    } catch (const json::exception& e) {
      throw ConfigError(std::string("config: bad value for ") + key + ": " + e.what());
    }
  }
}

void parse_model(const json& j, sim::RobotModel& m) {
  check_keys(j, {"preset", "kp", "kd", "torque_limit", "contact_kn", "contact_dn", "contact_dt",
                 "friction_mu", "nominal_mass"},
             "model");
  std::string preset = "biped5";
  get(j, "preset", preset);
  if (preset != "biped5") throw ConfigError("config: unknown model preset " + preset);
  m = sim::make_biped_model();
  double kp = 0, kd = -1, tl = 0;
  get(j, "kp", kp);
  get(j, "kd", kd);
  get(j, "torque_limit", tl);
  if (kp > 0) std::fill(m.kp.begin(), m.kp.end(), kp);
  if (kd >= 0) std::fill(m.kd.begin(), m.kd.end(), kd);
  if (tl > 0) std::fill(m.torque_limit.begin(), m.torque_limit.end(), tl);
  get(j, "contact_kn", m.contact_kn);
  get(j, "contact_dn", m.contact_dn);
  get(j, "contact_dt", m.contact_dt);
  get(j, "friction_mu", m.friction_mu);
  get(j, "nominal_mass", m.nominal_mass);
  m.validate();
}

void parse_net(const json& j, nets::NetConfig& n) {
  check_keys(j, {"n_embd", "n_heads", "K", "L", "token_hidden", "block_hidden", "actor_hidden",
                 "critic_hidden", "hist_variant", "cmd_variant", "init_log_std", "ln_eps",
                 "cnn_kernel"},
             "net");
  get(j, "n_embd", n.n_embd);
  get(j, "n_heads", n.n_heads);
  get(j, "K", n.K);
  get(j, "L", n.L);
  get(j, "token_hidden", n.token_hidden);
  get(j, "block_hidden", n.block_hidden);
  get(j, "actor_hidden", n.actor_hidden);
  get(j, "critic_hidden", n.critic_hidden);
  std::string hv = to_string(n.hist_variant), cv = to_string(n.cmd_variant);
  get(j, "hist_variant", hv);
  get(j, "cmd_variant", cv);
  n.hist_variant = nets::hist_variant_from_string(hv);
  n.cmd_variant = nets::cmd_variant_from_string(cv);
  get(j, "init_log_std", n.init_log_std);
  get(j, "ln_eps", n.ln_eps);
  get(j, "cnn_kernel", n.cnn_kernel);
}

void parse_ppo(const json& j, train::PpoConfig& p) {
  check_keys(j, {"num_envs", "rollout_length", "gamma", "lambda", "clip_ratio", "epochs",
                 "minibatches", "lr", "entropy_coef", "value_coef", "grad_clip", "iterations",
                 "anneal_iterations", "checkpoint_every"},
             "ppo");
  get(j, "num_envs", p.num_envs);
  get(j, "rollout_length", p.rollout_length);
  get(j, "gamma", p.gamma);
  get(j, "lambda", p.lam);
  get(j, "clip_ratio", p.clip_ratio);
  get(j, "epochs", p.epochs);
  get(j, "minibatches", p.minibatches);
  get(j, "lr", p.lr);
  get(j, "entropy_coef", p.entropy_coef);
  get(j, "value_coef", p.value_coef);
  get(j, "grad_clip", p.grad_clip);
  get(j, "iterations", p.iterations);
  get(j, "anneal_iterations", p.anneal_iterations);
  get(j, "checkpoint_every", p.checkpoint_every);
}

void parse_task(const json& j, task::TaskConfig& t) {
  check_keys(j, {"recovery_prob", "recovery_window_s", "recovered_pitch", "recovered_height_frac",
                 "recovered_hold_s", "assist_fmax", "max_episode_s", "init_noise_q",
                 "init_noise_vel", "train_cmd_noise_level", "instability", "reward", "obs_noise",
                 "noise_spec"},
             "task");
  get(j, "recovery_prob", t.recovery_prob);
  get(j, "recovery_window_s", t.recovery_window_s);
  get(j, "recovered_pitch", t.recovered_pitch);
  get(j, "recovered_height_frac", t.recovered_height_frac);
  get(j, "recovered_hold_s", t.recovered_hold_s);
  get(j, "assist_fmax", t.assist_fmax);
  get(j, "max_episode_s", t.max_episode_s);
  get(j, "init_noise_q", t.init_noise_q);
  get(j, "init_noise_vel", t.init_noise_vel);
  get(j, "train_cmd_noise_level", t.train_cmd_noise_level);
  if (j.contains("instability")) {
    const json& i = j.at("instability");
    check_keys(i, {"max_pitch", "min_base_height_frac", "min_keypoint_frac"}, "task.instability");
    get(i, "max_pitch", t.instability.max_pitch);
    get(i, "min_base_height_frac", t.instability.min_base_height_frac);
    get(i, "min_keypoint_frac", t.instability.min_keypoint_frac);
  }
  if (j.contains("reward")) {
    const json& r = j.at("reward");
    check_keys(r, {"w_kp", "sigma_kp", "w_vel", "sigma_vel", "w_rel", "sigma_rel", "action_rate_c",
                   "joint_limit_c", "joint_limit_margin_frac", "contact_c"},
               "task.reward");
    get(r, "w_kp", t.reward.w_kp);
    get(r, "sigma_kp", t.reward.sigma_kp);
    get(r, "w_vel", t.reward.w_vel);
    get(r, "sigma_vel", t.reward.sigma_vel);
    get(r, "w_rel", t.reward.w_rel);
    get(r, "sigma_rel", t.reward.sigma_rel);
    get(r, "action_rate_c", t.reward.action_rate_c);
    get(r, "joint_limit_c", t.reward.joint_limit_c);
    get(r, "joint_limit_margin_frac", t.reward.joint_limit_margin_frac);
    get(r, "contact_c", t.reward.contact_c);
  }
  if (j.contains("obs_noise")) {
    const json& o = j.at("obs_noise");
    check_keys(o, {"enabled", "gravity", "ang_vel", "joint_pos", "joint_vel"}, "task.obs_noise");
    get(o, "enabled", t.obs_noise.enabled);
    get(o, "gravity", t.obs_noise.gravity);
    get(o, "ang_vel", t.obs_noise.ang_vel);
    get(o, "joint_pos", t.obs_noise.joint_pos);
    get(o, "joint_vel", t.obs_noise.joint_vel);
  }
  if (j.contains("noise_spec")) {
    const json& s = j.at("noise_spec");
    check_keys(s, {"lin_vel_x", "lin_vel_z", "ang_vel", "gravity", "joint_pos"}, "task.noise_spec");
    get(s, "lin_vel_x", t.noise_spec.lin_vel_x);
    get(s, "lin_vel_z", t.noise_spec.lin_vel_z);
    get(s, "ang_vel", t.noise_spec.ang_vel);
    get(s, "gravity", t.noise_spec.gravity);
    get(s, "joint_pos", t.noise_spec.joint_pos);
  }
}

void parse_eval(const json& j, metrics::EvalConfig& e, std::vector<double>& levels) {
  check_keys(j, {"fall_threshold_m", "nominal_base_height", "episodes", "noise_levels"}, "eval");
  get(j, "fall_threshold_m", e.fall_threshold_m);
  get(j, "nominal_base_height", e.nominal_base_height);
  get(j, "episodes", e.episodes);
  get(j, "noise_levels", levels);
}

}  // namespace

RunConfig RunConfig::defaults() {
  RunConfig c;
  c.model = sim::make_biped_model();
  for (int lvl = 0; lvl <= 1500; lvl += 100) c.noise_levels.push_back(lvl);
  c.resolve();
  return c;
}

void RunConfig::resolve() {
  net.obs_dim = task::obs_dim(model);
  net.cmd_dim = task::cmd_dim(model);
  net.action_dim = model.n_joints;
  net.critic_dim = task::critic_dim(model);
  ppo.seed = seed;
  ppo.threads = threads;
  ppo.deterministic = deterministic;
  eval.seed = seed;
  net.validate();
}

RunConfig RunConfig::from_json_text(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config: invalid JSON: ") + e.what());
  }
  check_keys(j, {"seed", "run_dir", "deterministic", "threads", "clips", "model", "net", "ppo",
                 "task", "eval"},
             "top level");
  RunConfig c = defaults();
  c.noise_levels.clear();
  get(j, "seed", c.seed);
  get(j, "run_dir", c.run_dir);
  get(j, "deterministic", c.deterministic);
  get(j, "threads", c.threads);
  get(j, "clips", c.clips);
  if (j.contains("model")) parse_model(j.at("model"), c.model);
  if (j.contains("net")) parse_net(j.at("net"), c.net);
  if (j.contains("ppo")) parse_ppo(j.at("ppo"), c.ppo);
  if (j.contains("task")) parse_task(j.at("task"), c.task);
  if (j.contains("eval")) parse_eval(j.at("eval"), c.eval, c.noise_levels);
  if (c.noise_levels.empty()) {
    for (int lvl = 0; lvl <= 1500; lvl += 100) c.noise_levels.push_back(lvl);
  }
  c.resolve();
  return c;
}

RunConfig RunConfig::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config: cannot open " + path);
  std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return from_json_text(text);
}

std::string RunConfig::to_json_text() const {
  json j;
  j["seed"] = seed;
  j["run_dir"] = run_dir;
  j["deterministic"] = deterministic;
  j["threads"] = threads;
  j["clips"] = clips;
  j["model"] = {{"preset", "biped5"},
                {"kp", model.kp.empty() ? 0.0 : model.kp[0]},
                {"kd", model.kd.empty() ? 0.0 : model.kd[0]},
                {"torque_limit", model.torque_limit.empty() ? 0.0 : model.torque_limit[0]},
                {"contact_kn", model.contact_kn},
                {"contact_dn", model.contact_dn},
                {"contact_dt", model.contact_dt},
                {"friction_mu", model.friction_mu},
                {"nominal_mass", model.nominal_mass}};
  j["net"] = {{"n_embd", net.n_embd},
              {"n_heads", net.n_heads},
              {"K", net.K},
              {"L", net.L},
              {"token_hidden", net.token_hidden},
              {"block_hidden", net.block_hidden},
              {"actor_hidden", net.actor_hidden},
              {"critic_hidden", net.critic_hidden},
              {"hist_variant", to_string(net.hist_variant)},
              {"cmd_variant", to_string(net.cmd_variant)},
              {"init_log_std", net.init_log_std},
              {"ln_eps", net.ln_eps},
              {"cnn_kernel", net.cnn_kernel}};
  j["ppo"] = {{"num_envs", ppo.num_envs},
              {"rollout_length", ppo.rollout_length},
              {"gamma", ppo.gamma},
              {"lambda", ppo.lam},
              {"clip_ratio", ppo.clip_ratio},
              {"epochs", ppo.epochs},
              {"minibatches", ppo.minibatches},
              {"lr", ppo.lr},
              {"entropy_coef", ppo.entropy_coef},
              {"value_coef", ppo.value_coef},
              {"grad_clip", ppo.grad_clip},
              {"iterations", ppo.iterations},
              {"anneal_iterations", ppo.anneal_iterations},
              {"checkpoint_every", ppo.checkpoint_every}};
  j["task"] = {{"recovery_prob", task.recovery_prob},
               {"recovery_window_s", task.recovery_window_s},
               {"recovered_pitch", task.recovered_pitch},
               {"recovered_height_frac", task.recovered_height_frac},
               {"recovered_hold_s", task.recovered_hold_s},
               {"assist_fmax", task.assist_fmax},
               {"max_episode_s", task.max_episode_s},
               {"init_noise_q", task.init_noise_q},
               {"init_noise_vel", task.init_noise_vel},
               {"train_cmd_noise_level", task.train_cmd_noise_level},
               {"instability",
                {{"max_pitch", task.instability.max_pitch},
                 {"min_base_height_frac", task.instability.min_base_height_frac},
                 {"min_keypoint_frac", task.instability.min_keypoint_frac}}},
               {"reward",
                {{"w_kp", task.reward.w_kp},
                 {"sigma_kp", task.reward.sigma_kp},
                 {"w_vel", task.reward.w_vel},
                 {"sigma_vel", task.reward.sigma_vel},
                 {"w_rel", task.reward.w_rel},
                 {"sigma_rel", task.reward.sigma_rel},
                 {"action_rate_c", task.reward.action_rate_c},
                 {"joint_limit_c", task.reward.joint_limit_c},
                 {"joint_limit_margin_frac", task.reward.joint_limit_margin_frac},
                 {"contact_c", task.reward.contact_c}}},
               {"obs_noise",
                {{"enabled", task.obs_noise.enabled},
                 {"gravity", task.obs_noise.gravity},
                 {"ang_vel", task.obs_noise.ang_vel},
                 {"joint_pos", task.obs_noise.joint_pos},
                 {"joint_vel", task.obs_noise.joint_vel}}},
               {"noise_spec",
                {{"lin_vel_x", task.noise_spec.lin_vel_x},
                 {"lin_vel_z", task.noise_spec.lin_vel_z},
                 {"ang_vel", task.noise_spec.ang_vel},
                 {"gravity", task.noise_spec.gravity},
                 {"joint_pos", task.noise_spec.joint_pos}}}};
  j["eval"] = {{"fall_threshold_m", eval.fall_threshold_m},
               {"nominal_base_height", eval.nominal_base_height},
               {"episodes", eval.episodes},
               {"noise_levels", noise_levels}};
  return j.dump(2) + "\n";
}

void RunConfig::save(const std::string& path) const {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw ConfigError("config: cannot write " + path);
  out << to_json_text();
}

}  // namespace dcat
