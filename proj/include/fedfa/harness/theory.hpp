#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "fedfa/ffa.hpp"
#include "fedfa/model.hpp"

namespace fedfa::harness {

enum class TheoryLoss {
    cross_entropy,   // mean softmax cross-entropy on the labels
    linear_readout,  // <logits, readout>
};

struct TheoryProblem {
    ModelSpec spec;
    ModelParams params;
    Tensor inputs;
    std::vector<int> labels;
    TheoryLoss loss = TheoryLoss::cross_entropy;
    Tensor readout;  // [B, num_classes], linear_readout only
};

struct TheoryCheckReport {
    std::vector<double> scales;
    std::vector<double> residuals;  // |L(noised) - (L + sum_z <dL/dX^z, s e^z>)|
    std::vector<double> noised_losses;
    std::vector<double> predicted_losses;
    double clean_loss = 0.0;
    double slope = 0.0;  // least squares of log residual on log scale; NaN if < 2 positive residuals
    double max_residual = 0.0;
    bool passed = false;  // slope in [1.8, 2.2]
};

// Noise per stage (nullopt = no injection at that stage).
using StageNoise = std::vector<std::optional<Tensor>>;

// FFA noise e^z built from the clean stage outputs with fixed eps draws.
StageNoise ffa_noise(const TheoryProblem& problem, FfaVariant variant,
                     const std::vector<ModulationCoefficients>* gamma, double lambda, Rng& rng);

// Injects s * e^z after every stage z and compares the noised loss with the
// first-order prediction from the clean-loss gradients at each stage output.
TheoryCheckReport theory_check(const TheoryProblem& problem, const StageNoise& noise, std::span<const double> scales);

std::vector<double> default_theory_scales();  // 1e-1 ... 1e-4

// Seeded reference net and batch.
TheoryProblem reference_theory_problem(std::uint64_t seed, std::size_t batch = 16);

}  // namespace fedfa::harness
