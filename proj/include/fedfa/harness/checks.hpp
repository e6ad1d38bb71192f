#pragma once

#include <functional>
#include <string>
#include <vector>

#include "fedfa/harness/theory.hpp"

namespace fedfa::harness {

struct CheckResult {
    std::string name;
    bool passed = false;
    std::string detail;
};

// Augmentation equals features plus its additive noise view.
CheckResult check_noise_identity(std::size_t cases);
// Modulation coefficients sum to C and are all ones for equal variances.
CheckResult check_gamma_normalization(std::size_t cases);
// Central finite differences against reverse mode for every op and the FFA transform.
CheckResult check_gradients();
CheckResult check_comm_cost();
// fedfa(p=0) == fedavg, fedprox(0) == fedavg, fedfa(gamma=0) == fedfa-c, on a small task.
CheckResult check_reductions();
// Same config and seed give byte-identical metric streams.
CheckResult check_determinism();

CheckResult check_theory(std::uint64_t seed = 0);

std::vector<CheckResult> run_invariant_checks();

}  // namespace fedfa::harness
