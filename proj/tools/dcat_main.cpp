// dcat: desk-scale reference-motion tracking controller.
//
// Subcommands: gen-motions, train, eval, gradcheck, sweep, ablation.
// Exit codes: 0 success, 1 check failure, 2 usage/config error, 3 numerical abort.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "dcat/checkpoint.hpp"
#include "dcat/config.hpp"
#include "dcat/errors.hpp"
#include "dcat/gradsuite.hpp"
#include "dcat/metrics.hpp"
#include "dcat/motion.hpp"
#include "dcat/nets.hpp"
#include "dcat/trainer.hpp"

namespace fs = std::filesystem;
using namespace dcat;

namespace {

constexpr int kOk = 0;
constexpr int kCheckFailed = 1;
constexpr int kUsage = 2;
constexpr int kNumeric = 3;

struct LoadedPolicy {
  nets::Policy policy;
  int iterations = 0;
  uint64_t train_seed = 0;
};

nets::NetConfig variant_net(const RunConfig& cfg, const std::string& variant) {
  nets::NetConfig n = cfg.net;
  if (variant == "full" || variant == "no_recovery") {
    n.hist_variant = nets::HistVariant::kCausalTransformer;
    n.cmd_variant = nets::CmdVariant::kCrossAttention;
  } else if (variant == "cnn_hist") {
    n.hist_variant = nets::HistVariant::kCnn;
    n.cmd_variant = nets::CmdVariant::kCrossAttention;
  } else if (variant == "selfattn_cmd") {
    n.hist_variant = nets::HistVariant::kCausalTransformer;
    n.cmd_variant = nets::CmdVariant::kSelfAttention;
  } else {
    throw ConfigError("unknown policy variant: " + variant);
  }
  return n;
}

LoadedPolicy load_policy(const RunConfig& cfg, const std::string& variant,
                         const std::string& ckpt_path) {
  if (!fs::exists(ckpt_path)) throw ConfigError("missing checkpoint: " + ckpt_path);
  LoadedPolicy lp;
  lp.policy.cfg = variant.empty() ? cfg.net : variant_net(cfg, variant);
  nets::init_policy_params(lp.policy.cfg, cfg.seed, lp.policy.params);
  for (const auto& e : ad::load_params(ckpt_path, lp.policy.params)) {
    if (e.name == "__meta.iteration") lp.iterations = static_cast<int>(e.tensor.item());
    if (e.name == "__meta.seed") lp.train_seed = static_cast<uint64_t>(e.tensor.item());
  }
  return lp;
}

std::vector<motion::MotionClip> load_clips(const RunConfig& cfg, const std::string& override_dir) {
  const std::string dir = override_dir.empty() ? cfg.clips : override_dir;
  if (dir.empty()) throw ConfigError("no clip library: set \"clips\" in the config or pass --clips");
  return motion::load_library(dir);
}

int cmd_gen_motions(const std::string& out_dir, const std::string& kinds_csv, uint64_t seed,
                    int per_kind, double dedup_threshold) {
  const sim::RobotModel model = sim::make_biped_model();
  std::vector<std::string> kinds;
  std::string cur;
  for (char c : kinds_csv + ",") {
    if (c == ',') {
      if (!cur.empty()) kinds.push_back(cur);
      cur.clear();
    } else {
      cur += c;
    }
  }
  const std::map<std::string, double> durations = {
      {"walk", 8.0}, {"squat", 6.0}, {"kick", 6.0}, {"crawl", 8.0}, {"getup", 5.0}};
  std::vector<motion::MotionClip> clips;
  for (size_t k = 0; k < kinds.size(); ++k) {
    const motion::ClipKind kind = motion::clip_kind_from_string(kinds[k]);
    for (int i = 0; i < per_kind; ++i) {
      const uint64_t s = derive_seed(seed, 100 * (k + 1) + static_cast<uint64_t>(i));
      clips.push_back(motion::generate_clip(kind, model, durations.at(kinds[k]), s));
    }
  }
  if (dedup_threshold > 0.0) clips = motion::dedup_filter(clips, dedup_threshold);
  motion::write_library(out_dir, clips, model);
  std::cout << "wrote " << clips.size() << " clips to " << out_dir << "\n";
  return kOk;
}

int cmd_train(const std::string& config_path, bool resume, bool deterministic) {
  RunConfig cfg = RunConfig::load(config_path);
  if (deterministic) cfg.deterministic = true;
  cfg.resolve();

  train::TrainSetup setup;
  setup.model = cfg.model;
  setup.task = cfg.task;
  setup.net = cfg.net;
  setup.ppo = cfg.ppo;
  setup.library = load_clips(cfg, "");
  setup.run_dir = cfg.run_dir;

  fs::create_directories(cfg.run_dir);
  cfg.save((fs::path(cfg.run_dir) / "config.json").string());

  nets::Policy policy;
  policy.cfg = cfg.net;
  nets::init_policy_params(policy.cfg, cfg.seed, policy.params);
  if (resume && !fs::exists(fs::path(cfg.run_dir) / "resume.bin")) {
    throw ConfigError("--resume: no resume.bin in " + cfg.run_dir);
  }

  const train::TrainResult res =
      train::train(setup, policy, resume, [](const train::IterRow& row) {
        std::printf("iter %4d  reward %.4f  track %.4f  eplen %.2f  assist %.1f  kl %.4f\n",
                    row.iteration, row.reward_mean, row.r_kp + row.r_rel + row.r_vel,
                    row.episode_len_mean, row.assist_cap, row.update.approx_kl);
        std::fflush(stdout);
      });
  std::cout << "run complete: " << res.iterations_run << " iterations, checkpoint at "
            << res.checkpoint_path << "\n";
  return kOk;
}

int cmd_eval(const std::string& config_path, const std::string& ckpt, const std::string& clips_dir,
             double noise_level, const std::string& out_csv, bool deterministic) {
  RunConfig cfg = RunConfig::load(config_path);
  if (deterministic) cfg.deterministic = true;
  cfg.resolve();
  LoadedPolicy lp = load_policy(cfg, "", ckpt);
  const auto clips = load_clips(cfg, clips_dir);
  const metrics::MetricsReport report =
      metrics::evaluate_policy(lp.policy, cfg.model, clips, cfg.task.noise_spec, noise_level, cfg.eval);
  metrics::write_report_csv(out_csv, report, noise_level);
  std::printf("succ %.3f  mpjpe %.2f mm  mpkpe %.2f mm  e_vel %.3f  e_acc %.3f  (%d episodes)\n",
              report.succ, report.mpjpe, report.mpkpe, report.e_vel, report.e_acc, report.episodes);
  std::cout << "report written to " << out_csv << "\n";
  return kOk;
}

int cmd_gradcheck(const std::string& config_path, int entries, double tol, double h,
                  const std::string& fault_op) {
  RunConfig cfg = RunConfig::load(config_path);
  cfg.resolve();
  ad::GradCheckOptions opt;
  opt.entries_per_param = entries;
  opt.tol = tol;
  opt.h = h;
  opt.seed = cfg.seed;
  const auto results = ad::run_policy_gradcheck(cfg.net, cfg.seed, opt, fault_op);
  bool all_pass = true;
  for (const auto& [name, report] : results) {
    std::printf("%-26s %s\n", name.c_str(), report.summary().c_str());
    all_pass = all_pass && report.pass;
  }
  return all_pass ? kOk : kCheckFailed;
}

std::map<std::string, std::vector<std::string>> parse_checkpoint_args(
    const std::vector<std::string>& args) {
  std::map<std::string, std::vector<std::string>> out;
  for (const auto& a : args) {
    const size_t eq = a.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("--checkpoint expects variant=path, got: " + a);
    }
    out[a.substr(0, eq)].push_back(a.substr(eq + 1));
  }
  return out;
}

int cmd_sweep(const std::string& config_path, const std::vector<std::string>& ckpt_args,
              std::vector<double> levels, const std::string& clips_dir, const std::string& out_csv) {
  RunConfig cfg = RunConfig::load(config_path);
  cfg.resolve();
  if (levels.empty()) levels = cfg.noise_levels;
  const auto clips = load_clips(cfg, clips_dir);

  std::vector<LoadedPolicy> loaded;
  std::vector<metrics::SweepVariant> variants;
  for (const auto& [variant, paths] : parse_checkpoint_args(ckpt_args)) {
    for (const auto& path : paths) {
      loaded.push_back(load_policy(cfg, variant, path));
      variants.push_back({variant, nullptr, loaded.back().train_seed});
    }
  }
  for (size_t i = 0; i < loaded.size(); ++i) variants[i].policy = &loaded[i].policy;
  if (variants.empty()) throw ConfigError("sweep: pass at least one --checkpoint variant=path");

  const auto rows =
      metrics::run_noise_sweep(variants, cfg.model, clips, cfg.task.noise_spec, levels, cfg.eval);
  metrics::write_sweep_csv(out_csv, rows);
  std::cout << "sweep written to " << out_csv << " (" << rows.size() << " rows)\n";
  return kOk;
}

int cmd_ablation(const std::string& config_path, const std::vector<std::string>& ckpt_args,
                 const std::string& tracking_dir, const std::string& ground_dir,
                 const std::string& out_csv) {
  RunConfig cfg = RunConfig::load(config_path);
  cfg.resolve();
  std::vector<LoadedPolicy> loaded;
  std::vector<metrics::AblationPolicy> policies;
  for (const auto& [variant, paths] : parse_checkpoint_args(ckpt_args)) {
    for (const auto& path : paths) {
      loaded.push_back(load_policy(cfg, variant, path));
      policies.push_back({variant, nullptr, loaded.back().train_seed, loaded.back().iterations});
    }
  }
  for (size_t i = 0; i < loaded.size(); ++i) policies[i].policy = &loaded[i].policy;
  if (policies.empty()) throw ConfigError("ablation: pass at least one --checkpoint variant=path");

  std::vector<metrics::AblationSuite> suites;
  suites.push_back({"tracking", motion::load_library(tracking_dir)});
  suites.push_back({"ground_interaction", motion::load_library(ground_dir)});

  std::vector<std::string> warnings;
  const auto rows = metrics::run_ablation_table(policies, suites, cfg.model, cfg.eval, &warnings);
  for (const auto& w : warnings) std::cerr << "warning: " << w << "\n";
  metrics::write_ablation_csv(out_csv, rows);
  std::cout << "ablation table written to " << out_csv << "\n";
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"dcat: dynamics-conditioned command-aggregation motion tracking"};
  app.require_subcommand(1);

  // gen-motions
  auto* gen = app.add_subcommand("gen-motions", "Generate a procedural clip library");
  std::string gen_out, gen_kinds = "walk,squat,kick,crawl,getup";
  uint64_t gen_seed = 0;
  int gen_per_kind = 2;
  double gen_dedup = 0.0;
  gen->add_option("--out", gen_out, "Output directory")->required();
  gen->add_option("--kinds", gen_kinds, "Comma-separated clip kinds");
  gen->add_option("--seed", gen_seed, "Generator seed");
  gen->add_option("--per-kind", gen_per_kind, "Clips per kind");
  gen->add_option("--dedup", gen_dedup, "Redundancy filter threshold (0 = off)");

  // train
  auto* tr = app.add_subcommand("train", "Train a policy from a run config");
  std::string tr_config;
  bool tr_resume = false, tr_det = false;
  tr->add_option("--config", tr_config, "Run config JSON")->required();
  tr->add_flag("--resume", tr_resume, "Resume from the run directory");
  tr->add_flag("--deterministic", tr_det, "Force sequential, bit-reproducible execution");

  // eval
  auto* ev = app.add_subcommand("eval", "Evaluate a checkpoint on a clip library");
  std::string ev_config, ev_ckpt, ev_clips, ev_out = "eval_report.csv";
  double ev_level = 0.0;
  bool ev_det = false;
  ev->add_option("--config", ev_config, "Run config JSON")->required();
  ev->add_option("--checkpoint", ev_ckpt, "Checkpoint file")->required();
  ev->add_option("--clips", ev_clips, "Clip library (defaults to config)");
  ev->add_option("--noise-level", ev_level, "Command noise level in percent");
  ev->add_option("--out", ev_out, "Report CSV path");
  ev->add_flag("--deterministic", ev_det, "Force sequential, bit-reproducible execution");

  // gradcheck
  auto* gc = app.add_subcommand("gradcheck", "Finite-difference gradient verification");
  std::string gc_config, gc_fault;
  int gc_entries = 32;
  double gc_tol = 1e-4, gc_h = 1e-5;
  gc->add_option("--config", gc_config, "Run config JSON")->required();
  gc->add_option("--entries", gc_entries, "Sampled entries per parameter (0 = all)");
  gc->add_option("--tol", gc_tol, "Max relative error");
  gc->add_option("--step", gc_h, "Central-difference step");
  gc->add_option("--inject-fault", gc_fault, "Corrupt one op's backward rule (test fixture)");

  // sweep
  auto* sw = app.add_subcommand("sweep", "Noise-robustness sweep over checkpoints");
  std::string sw_config, sw_clips, sw_out = "noise_sweep.csv";
  std::vector<std::string> sw_ckpts;
  std::vector<double> sw_levels;
  sw->add_option("--config", sw_config, "Run config JSON")->required();
  sw->add_option("--checkpoint", sw_ckpts, "variant=path (repeatable)")->required();
  sw->add_option("--levels", sw_levels, "Noise levels in percent (defaults to config)");
  sw->add_option("--clips", sw_clips, "Clip library (defaults to config)");
  sw->add_option("--out", sw_out, "Output CSV");

  // ablation
  auto* ab = app.add_subcommand("ablation", "Ablation table over checkpoints and suites");
  std::string ab_config, ab_tracking, ab_ground, ab_out = "ablation_table.csv";
  std::vector<std::string> ab_ckpts;
  ab->add_option("--config", ab_config, "Run config JSON")->required();
  ab->add_option("--checkpoint", ab_ckpts, "variant=path (repeatable)")->required();
  ab->add_option("--tracking-clips", ab_tracking, "Tracking suite library")->required();
  ab->add_option("--ground-clips", ab_ground, "Ground-interaction suite library")->required();
  ab->add_option("--out", ab_out, "Output CSV");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kUsage;
  }

  try {
    if (gen->parsed()) return cmd_gen_motions(gen_out, gen_kinds, gen_seed, gen_per_kind, gen_dedup);
    if (tr->parsed()) return cmd_train(tr_config, tr_resume, tr_det);
    if (ev->parsed()) return cmd_eval(ev_config, ev_ckpt, ev_clips, ev_level, ev_out, ev_det);
    if (gc->parsed()) return cmd_gradcheck(gc_config, gc_entries, gc_tol, gc_h, gc_fault);
    if (sw->parsed()) return cmd_sweep(sw_config, sw_ckpts, sw_levels, sw_clips, sw_out);
    if (ab->parsed()) return cmd_ablation(ab_config, ab_ckpts, ab_tracking, ab_ground, ab_out);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kUsage;
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kUsage;
  } catch (const NumericError& e) {
    std::cerr << "numerical abort: " << e.what() << "\n";
    return kNumeric;
  }
  return kUsage;
}
