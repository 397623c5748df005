#pragma once

#include <functional>
#include <string>

#include "dcat/autodiff.hpp"

namespace dcat::ad {

struct GradCheckOptions {
  double h = 1e-5;             // central-difference step
  double tol = 1e-4;           // max relative error allowed
  double denom_floor = 1e-5;   // relative-error denominator clamp
  int entries_per_param = 0;   // 0 = every entry, else a seeded random subset
  uint64_t seed = 0;
  std::string param_prefix;    // restrict the check to matching parameters
};

struct GradCheckReport {
  bool pass = false;
  double max_rel_err = 0.0;
  std::string worst_param;
  int64_t worst_entry = -1;
  double analytic = 0.0;
  double numeric = 0.0;
  int64_t entries_checked = 0;
  std::string summary() const;
};

// `f` builds a scalar loss on the given tape from the given parameters; it
// must be deterministic given the parameter values. The analytic gradient
// from one backward pass is compared entry-wise against central finite
// differences obtained by re-evaluating `f` at perturbed parameter values.
using LossFn = std::function<Var(Tape&, ParamStore&)>;

GradCheckReport grad_check(const LossFn& f, ParamStore& params,
                           const GradCheckOptions& opt = {});

}  // namespace dcat::ad
