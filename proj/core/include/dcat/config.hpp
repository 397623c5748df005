#pragma once

#include <string>
#include <vector>

#include "dcat/metrics.hpp"
#include "dcat/nets.hpp"
#include "dcat/sim.hpp"
#include "dcat/task.hpp"
#include "dcat/trainer.hpp"

namespace dcat {

// Whole-run configuration, one JSON file. Every field has a default; unknown
// keys are an error. The file is copied verbatim into the run directory.
struct RunConfig {
  uint64_t seed = 0;
  std::string run_dir = "runs/run";
  bool deterministic = false;
  int threads = 1;
  std::string clips;  // clip library directory

  sim::RobotModel model;
  nets::NetConfig net;  // dims resolved against the model by resolve()
  train::PpoConfig ppo;
  task::TaskConfig task;
  metrics::EvalConfig eval;
  std::vector<double> noise_levels;  // default 0..1500 step 100

  static RunConfig defaults();
  static RunConfig from_json_text(const std::string& text);
  static RunConfig load(const std::string& path);
  std::string to_json_text() const;
  void save(const std::string& path) const;

  // Fill net/ppo/eval fields that derive from the model and the master seed.
  void resolve();
};

}  // namespace dcat
