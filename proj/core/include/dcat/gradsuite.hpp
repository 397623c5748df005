#pragma once

#include <string>
#include <utility>
#include <vector>

#include "dcat/gradcheck.hpp"
#include "dcat/nets.hpp"

namespace dcat::ad {

// Finite-difference verification of both encoders, both ablation variants,
// actor, critic, and the end-to-end actor path at the given shapes. Heads are
// randomly initialized so every adjoint is exercised. `fault_op` (when set)
// corrupts that op's backward rule, the negative-control fixture.
std::vector<std::pair<std::string, GradCheckReport>> run_policy_gradcheck(
    const nets::NetConfig& cfg, uint64_t seed, const GradCheckOptions& opt,
    const std::string& fault_op = "");

}  // namespace dcat::ad
