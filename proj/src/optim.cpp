#include "fedfa/optim.hpp"

#include <stdexcept>

namespace fedfa {

void sgd_step(ModelParams& params, const SgdOptions& opts, SgdMomentumState* state) {
    if (!(opts.lr >= 0.0)) throw std::invalid_argument("sgd_step: lr must be >= 0");
    if (!(opts.prox_mu >= 0.0)) throw std::invalid_argument("sgd_step: prox_mu must be >= 0");
    const bool prox = opts.prox_mu > 0.0;
    if (prox) {
        if (!opts.anchor) throw std::invalid_argument("sgd_step: proximal term requires an anchor");
        params.require_same_layout(*opts.anchor, "sgd_step anchor");
    }
    const bool use_momentum = opts.momentum != 0.0;
    if (use_momentum) {
        if (!state) throw std::invalid_argument("sgd_step: momentum requires a state buffer");
        if (state->velocity.empty()) {
            for (const auto& e : params) state->velocity.emplace_back(e.tensor.size(), 0.0);
        }
        if (state->velocity.size() != params.size()) throw std::invalid_argument("sgd_step: momentum state mismatch");
    }

    for (std::size_t i = 0; i < params.size(); ++i) {
        Tensor& w = params[i].tensor;
        if (!w.has_grad()) {
            throw std::invalid_argument("sgd_step: parameter '" + params[i].name + "' has no gradient");
        }
        auto g = w.grad();
        auto data = w.data();
        const Tensor* anchor = prox ? &(*opts.anchor)[i].tensor : nullptr;
        for (std::size_t j = 0; j < data.size(); ++j) {
            double d = g[j];
            if (prox) d += opts.prox_mu * (data[j] - (*anchor)[j]);
            if (use_momentum) {
                double& v = state->velocity[i][j];
                v = opts.momentum * v + d;
                d = v;
            }
            data[j] -= opts.lr * d;
        }
    }
}

}  // namespace fedfa
