#include "dcat/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "dcat/errors.hpp"
#include "dcat/rng.hpp"

namespace dcat::ad {

std::string GradCheckReport::summary() const {
  std::ostringstream os;
  os << (pass ? "PASS" : "FAIL") << " max_rel_err=" << max_rel_err;
  if (!worst_param.empty()) {
    os << " worst=" << worst_param << "[" << worst_entry << "]"
       << " analytic=" << analytic << " fd=" << numeric;
  }
  os << " entries=" << entries_checked;
  return os.str();
}

namespace {

double eval_loss(const LossFn& f, ParamStore& params) {
  Tape tape;
  const Var loss = f(tape, params);
  const double v = tape.value(loss).item();
  if (!std::isfinite(v)) throw NumericError("grad_check: non-finite loss");
  return v;
}

}  // namespace

GradCheckReport grad_check(const LossFn& f, ParamStore& params, const GradCheckOptions& opt) {
  params.zero_grad();
  {
    Tape tape;
    const Var loss = f(tape, params);
    if (!tape.value(loss).all_finite()) throw NumericError("grad_check: non-finite loss");
    tape.backward(loss);
  }

  GradCheckReport report;
  Rng rng(derive_seed(opt.seed, 0x67726164ULL));
  for (int p = 0; p < params.size(); ++p) {
    if (!opt.param_prefix.empty() &&
        params.name(p).rfind(opt.param_prefix, 0) != 0) {
      continue;
    }
    Tensor& value = params.value(p);
    const Tensor& analytic = params.grad(p);
    const int64_t n = value.numel();

    std::vector<int64_t> entries;
    if (opt.entries_per_param <= 0 || opt.entries_per_param >= n) {
      entries.resize(static_cast<size_t>(n));
      for (int64_t i = 0; i < n; ++i) entries[static_cast<size_t>(i)] = i;
    } else {
      // Seeded subset without replacement; every tensor is still covered.
      std::vector<int64_t> all(static_cast<size_t>(n));
      for (int64_t i = 0; i < n; ++i) all[static_cast<size_t>(i)] = i;
      for (int i = 0; i < opt.entries_per_param; ++i) {
        const auto j = static_cast<size_t>(i) + rng.integer(all.size() - i);
        std::swap(all[i], all[j]);
        entries.push_back(all[i]);
      }
    }

    for (int64_t idx : entries) {
      const double saved = value[idx];
      value[idx] = saved + opt.h;
      const double fp = eval_loss(f, params);
      value[idx] = saved - opt.h;
      const double fm = eval_loss(f, params);
      value[idx] = saved;
      const double fd = (fp - fm) / (2.0 * opt.h);
      const double a = analytic[idx];
      const double denom = std::max({std::fabs(a), std::fabs(fd), opt.denom_floor});
      const double rel = std::fabs(a - fd) / denom;
      ++report.entries_checked;
      if (rel > report.max_rel_err) {
        report.max_rel_err = rel;
        report.worst_param = params.name(p);
        report.worst_entry = idx;
        report.analytic = a;
        report.numeric = fd;
      }
    }
  }
  report.pass = report.max_rel_err < opt.tol;
  return report;
}

}  // namespace dcat::ad
