#pragma once

#include <vector>

#include "fedfa/tensor.hpp"

namespace fedfa {

// Added to the spatial variance before the square root so sigma stays
// differentiable on constant channels. Pass 0 for exact moments.
inline constexpr double kDefaultEpsVar = 1e-6;

// Per-sample, per-channel spatial mean and standard deviation, both [B,C].
struct ChannelStats {
    Tensor mu;
    Tensor sigma;
    double eps_var = kDefaultEpsVar;

    std::size_t batch() const { return mu.dim(0); }
    std::size_t channels() const { return mu.dim(1); }
};

// Variance of mu and sigma across the batch axis, each [C].
struct BatchStatVariance {
    std::vector<double> var_mu;
    std::vector<double> var_sigma;
};

// Running per-channel statistics of one FFA site on one client.
struct MomentumStats {
    std::vector<double> mu_bar;
    std::vector<double> sigma_bar;
    double alpha = 0.99;

    // mu_bar = 0, sigma_bar = 1.
    static MomentumStats initial(std::size_t channels, double alpha);
    std::size_t channels() const { return mu_bar.size(); }
};

// Population (1/HW) moments of a [B,C,H,W] feature map.
ChannelStats channel_stats(const Tensor& features, double eps_var = kDefaultEpsVar);

// Biased (1/B) variance over the batch.
BatchStatVariance batch_variances(const ChannelStats& stats);

// mu_bar <- alpha * mu_bar + (1 - alpha) * mean_b mu, and likewise for sigma.
MomentumStats momentum_update(const MomentumStats& ms, const ChannelStats& stats);

}  // namespace fedfa
