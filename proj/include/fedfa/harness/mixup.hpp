#pragma once

#include <optional>
#include <vector>

#include "fedfa/federation.hpp"
#include "fedfa/rng.hpp"
#include "fedfa/tensor.hpp"

namespace fedfa::harness {

struct MixupResult {
    double lambda = 1.0;
    std::vector<std::size_t> partner;  // row i is mixed with row partner[i]
};

// x_i <- lambda x_i + (1 - lambda) x_partner(i), same for the soft targets, with
// lambda ~ Beta(beta_param, beta_param). Partners form a random cycle so no row
// is paired with itself. Batches smaller than 2 are left unchanged.
MixupResult mixup_batch(Tensor& inputs, Tensor& targets, double beta_param, Rng& rng,
                        std::optional<double> forced_lambda = std::nullopt);

BatchAugmenter make_mixup_augmenter(double beta_param);

}  // namespace fedfa::harness
