#pragma once

#include <vector>

#include "fedfa/model.hpp"

namespace fedfa {

struct SgdOptions {
    double lr = 0.01;
    double momentum = 0.0;             // heavy-ball coefficient; 0 disables
    double prox_mu = 0.0;              // proximal pull strength
    const ModelParams* anchor = nullptr;  // required when prox_mu > 0
};

// Heavy-ball velocity, one buffer per parameter tensor.
struct SgdMomentumState {
    std::vector<std::vector<double>> velocity;
};

// w <- w - lr * (g + prox_mu * (w - anchor)), using the gradients stored in
// params. With momentum: v <- momentum * v + d; w <- w - lr * v.
void sgd_step(ModelParams& params, const SgdOptions& opts, SgdMomentumState* state = nullptr);

}  // namespace fedfa
