#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>

#include "dcat/config.hpp"
#include "dcat/errors.hpp"

using namespace dcat;
namespace fs = std::filesystem;

namespace {

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in.good());
  return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

struct CliResult {
  int exit_code = -1;
  std::string output;
};

CliResult run_cli(const std::string& args) {
  const std::string out_file = "cli_out.tmp";
  const std::string cmd = std::string(DCAT_CLI_PATH) + " " + args + " > " + out_file + " 2>&1";
  const int rc = std::system(cmd.c_str());
  CliResult res;
  res.exit_code = WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
  std::ifstream in(out_file);
  res.output.assign((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  fs::remove(out_file);
  return res;
}

void write_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::trunc);
  out << text;
}

// Small shapes keep the CLI checks fast.
const char* kTinyConfig = R"({
  "seed": 5,
  "run_dir": "cli_test_run",
  "clips": "cli_test_lib",
  "net": { "n_embd": 8, "n_heads": 2, "K": 2, "L": 2, "actor_hidden": [12], "critic_hidden": [12] },
  "ppo": { "num_envs": 2, "rollout_length": 4, "iterations": 2, "anneal_iterations": 2,
           "epochs": 1, "minibatches": 1, "checkpoint_every": 1 },
  "task": { "recovery_prob": 0.2 },
  "eval": { "episodes": 1 }
})";

}  // namespace

TEST_CASE("config defaults") {
  const RunConfig cfg = RunConfig::defaults();
  CHECK(cfg.net.n_embd == 64);
  CHECK(cfg.net.K == 9);
  CHECK(cfg.net.L == 10);
  CHECK(cfg.ppo.gamma == 0.99);
  CHECK(cfg.task.recovery_prob == 0.15);
  CHECK(cfg.task.recovery_window_s == 3.0);
  CHECK(cfg.eval.fall_threshold_m == 0.2);
  REQUIRE(cfg.noise_levels.size() == 16);  // 0..1500 step 100
  CHECK(cfg.noise_levels.front() == 0.0);
  CHECK(cfg.noise_levels.back() == 1500.0);
  CHECK(cfg.net.obs_dim == task::obs_dim(cfg.model));
  CHECK(cfg.net.critic_dim == task::critic_dim(cfg.model));
}

TEST_CASE("config parsing is strict about unknown keys") {
  CHECK_THROWS_AS((void)RunConfig::from_json_text(R"({"sede": 3})"), ConfigError);
  CHECK_THROWS_AS((void)RunConfig::from_json_text(R"({"net": {"n_emb": 32}})"), ConfigError);
  CHECK_THROWS_AS((void)RunConfig::from_json_text(R"({"task": {"reward": {"w_kpp": 1}}})"),
                  ConfigError);
  CHECK_THROWS_AS((void)RunConfig::from_json_text("{nonsense"), ConfigError);
  CHECK_THROWS_AS((void)RunConfig::from_json_text(R"({"net": {"hist_variant": "rnn"}})"),
                  ConfigError);
}

TEST_CASE("config values parse and round trip") {
  const RunConfig cfg = RunConfig::from_json_text(R"({
    "seed": 42,
    "net": { "n_embd": 32, "hist_variant": "cnn", "cmd_variant": "self_attention" },
    "ppo": { "lambda": 0.9, "num_envs": 7 },
    "task": { "recovery_prob": 0.25, "reward": { "w_kp": 2.0 } },
    "eval": { "noise_levels": [0, 50] }
  })");
  CHECK(cfg.seed == 42);
  CHECK(cfg.net.n_embd == 32);
  CHECK(cfg.net.hist_variant == nets::HistVariant::kCnn);
  CHECK(cfg.net.cmd_variant == nets::CmdVariant::kSelfAttention);
  CHECK(cfg.ppo.lam == 0.9);
  CHECK(cfg.ppo.num_envs == 7);
  CHECK(cfg.ppo.seed == 42);  // master seed propagates
  CHECK(cfg.task.recovery_prob == 0.25);
  CHECK(cfg.task.reward.w_kp == 2.0);
  REQUIRE(cfg.noise_levels.size() == 2);

  const RunConfig again = RunConfig::from_json_text(cfg.to_json_text());
  CHECK(again.net.n_embd == cfg.net.n_embd);
  CHECK(again.net.hist_variant == cfg.net.hist_variant);
  CHECK(again.ppo.lam == cfg.ppo.lam);
  CHECK(again.task.reward.w_kp == cfg.task.reward.w_kp);
  CHECK(again.noise_levels == cfg.noise_levels);
}

TEST_CASE("config file loading errors") {
  CHECK_THROWS_AS((void)RunConfig::load("no_such_config.json"), ConfigError);
}

TEST_CASE("cli: gen-motions") {
  fs::remove_all("cli_lib_a");
  fs::remove_all("cli_lib_b");

  SUBCASE("default kinds include getup and are deterministic") {
    const CliResult r1 = run_cli("gen-motions --out cli_lib_a --seed 3 --per-kind 1");
    REQUIRE(r1.exit_code == 0);
    const CliResult r2 = run_cli("gen-motions --out cli_lib_b --seed 3 --per-kind 1");
    REQUIRE(r2.exit_code == 0);
    const auto clips = motion::load_library("cli_lib_a");
    CHECK(clips.size() >= 5);
    bool has_getup = false;
    for (const auto& c : clips) has_getup |= c.kind == "getup";
    CHECK(has_getup);
    // Byte-identical libraries.
    for (const auto& entry : fs::directory_iterator("cli_lib_a")) {
      const std::string name = entry.path().filename().string();
      CHECK(slurp(entry.path().string()) == slurp("cli_lib_b/" + name));
    }
  }
  SUBCASE("unknown kind exits 2") {
    const CliResult r = run_cli("gen-motions --out cli_lib_a --kinds walk,flips");
    CHECK(r.exit_code == 2);
    CHECK(r.output.find("flips") != std::string::npos);
  }
  fs::remove_all("cli_lib_a");
  fs::remove_all("cli_lib_b");
}

TEST_CASE("cli: config and checkpoint errors") {
  CHECK(run_cli("train --config missing.json").exit_code == 2);
  write_file("bad_config.json", R"({"sede": 1})");
  CHECK(run_cli("train --config bad_config.json").exit_code == 2);
  fs::remove("bad_config.json");

  write_file("tiny_config.json", kTinyConfig);
  const CliResult r = run_cli("eval --config tiny_config.json --checkpoint missing.ckpt");
  CHECK(r.exit_code == 2);
  fs::remove("tiny_config.json");
}

TEST_CASE("cli: train, eval, gradcheck, sweep end to end") {
  fs::remove_all("cli_test_run");
  fs::remove_all("cli_test_lib");
  write_file("tiny_config.json", kTinyConfig);
  REQUIRE(run_cli("gen-motions --out cli_test_lib --seed 1 --per-kind 1 --kinds squat,getup")
              .exit_code == 0);

  SUBCASE("train then eval then sweep") {
    const CliResult tr = run_cli("train --config tiny_config.json");
    REQUIRE(tr.exit_code == 0);
    CHECK(fs::exists("cli_test_run/checkpoint.ckpt"));
    CHECK(fs::exists("cli_test_run/config.json"));
    CHECK(fs::exists("cli_test_run/metrics.csv"));

    const CliResult resumed = run_cli("train --config tiny_config.json --resume");
    CHECK(resumed.exit_code == 0);

    const CliResult ev = run_cli(
        "eval --config tiny_config.json --checkpoint cli_test_run/checkpoint.ckpt "
        "--noise-level 0 --out cli_eval.csv");
    REQUIRE(ev.exit_code == 0);
    CHECK(fs::exists("cli_eval.csv"));
    const CliResult ev2 = run_cli(
        "eval --config tiny_config.json --checkpoint cli_test_run/checkpoint.ckpt "
        "--noise-level 0 --out cli_eval2.csv");
    REQUIRE(ev2.exit_code == 0);
    CHECK(slurp("cli_eval.csv") == slurp("cli_eval2.csv"));

    const CliResult sw = run_cli(
        "sweep --config tiny_config.json --checkpoint full=cli_test_run/checkpoint.ckpt "
        "--levels 0 100 --out cli_sweep.csv");
    REQUIRE(sw.exit_code == 0);
    const std::string sweep = slurp("cli_sweep.csv");
    CHECK(sweep.rfind("level,variant,seed,succ", 0) == 0);
    int lines = -1;
    for (char c : sweep) lines += c == '\n';
    CHECK(lines == 2);  // 2 levels x 1 variant

    const CliResult ab = run_cli(
        "ablation --config tiny_config.json --checkpoint full=cli_test_run/checkpoint.ckpt "
        "--checkpoint no_recovery=cli_test_run/checkpoint.ckpt "
        "--tracking-clips cli_test_lib --ground-clips cli_test_lib --out cli_ablation.csv");
    REQUIRE(ab.exit_code == 0);
    CHECK(slurp("cli_ablation.csv").rfind("variant,suite,seeds,succ_mean", 0) == 0);

    fs::remove("cli_eval.csv");
    fs::remove("cli_eval2.csv");
    fs::remove("cli_sweep.csv");
    fs::remove("cli_ablation.csv");
  }

  SUBCASE("gradcheck passes and the injected fault fails loudly") {
    const CliResult ok = run_cli("gradcheck --config tiny_config.json --entries 4");
    REQUIRE(ok.exit_code == 0);
    CHECK(ok.output.find("PASS") != std::string::npos);

    const CliResult bad =
        run_cli("gradcheck --config tiny_config.json --entries 4 --inject-fault tanh");
    CHECK(bad.exit_code == 1);
    CHECK(bad.output.find("FAIL") != std::string::npos);
    CHECK(bad.output.find("worst=") != std::string::npos);
  }

  fs::remove_all("cli_test_run");
  fs::remove_all("cli_test_lib");
  fs::remove("tiny_config.json");
}
