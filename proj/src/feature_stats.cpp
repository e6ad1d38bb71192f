#include "fedfa/feature_stats.hpp"

#include <cmath>
#include <stdexcept>

namespace fedfa {

MomentumStats MomentumStats::initial(std::size_t channels, double alpha) {
    if (!(alpha >= 0.0 && alpha <= 1.0)) throw std::invalid_argument("momentum alpha must lie in [0,1]");
    return MomentumStats{std::vector<double>(channels, 0.0), std::vector<double>(channels, 1.0), alpha};
}

ChannelStats channel_stats(const Tensor& features, double eps_var) {
    if (features.rank() != 4) {
        throw std::invalid_argument("channel_stats: expected [B,C,H,W], got " + shape_str(features.shape()));
    }
    if (!(eps_var >= 0.0)) throw std::invalid_argument("channel_stats: eps_var must be >= 0");
    const std::size_t B = features.dim(0), C = features.dim(1);
    const std::size_t HW = features.dim(2) * features.dim(3);
    ChannelStats s{Tensor(Shape{B, C}), Tensor(Shape{B, C}), eps_var};
    const double inv = 1.0 / static_cast<double>(HW);
    for (std::size_t bc = 0; bc < B * C; ++bc) {
        const double* x = features.data().data() + bc * HW;
        double mean = 0.0;
        for (std::size_t t = 0; t < HW; ++t) mean += x[t];
        mean *= inv;
        double var = 0.0;
        for (std::size_t t = 0; t < HW; ++t) {
            const double d = x[t] - mean;
            var += d * d;
        }
        var *= inv;
        s.mu[bc] = mean;
        s.sigma[bc] = std::sqrt(var + eps_var);
    }
    return s;
}

namespace {

std::vector<double> column_variance(const Tensor& m) {
    const std::size_t B = m.dim(0), C = m.dim(1);
    std::vector<double> out(C, 0.0);
    for (std::size_t c = 0; c < C; ++c) {
        double mean = 0.0;
        for (std::size_t b = 0; b < B; ++b) mean += m[b * C + c];
        mean /= static_cast<double>(B);
        double var = 0.0;
        for (std::size_t b = 0; b < B; ++b) {
            const double d = m[b * C + c] - mean;
            var += d * d;
        }
        out[c] = var / static_cast<double>(B);
    }
    return out;
}

std::vector<double> column_mean(const Tensor& m) {
    const std::size_t B = m.dim(0), C = m.dim(1);
    std::vector<double> out(C, 0.0);
    for (std::size_t b = 0; b < B; ++b) {
        for (std::size_t c = 0; c < C; ++c) out[c] += m[b * C + c];
    }
    for (auto& v : out) v /= static_cast<double>(B);
    return out;
}

}  // namespace

BatchStatVariance batch_variances(const ChannelStats& stats) {
    require_shape(stats.sigma, stats.mu.shape(), "batch_variances");
    return BatchStatVariance{column_variance(stats.mu), column_variance(stats.sigma)};
}

MomentumStats momentum_update(const MomentumStats& ms, const ChannelStats& stats) {
    if (!(ms.alpha >= 0.0 && ms.alpha <= 1.0)) throw std::invalid_argument("momentum alpha must lie in [0,1]");
    if (stats.channels() != ms.channels()) {
        throw std::invalid_argument("momentum_update: " + std::to_string(stats.channels()) +
                                    " channels for statistics of width " + std::to_string(ms.channels()));
    }
    const auto mu = column_mean(stats.mu);
    const auto sigma = column_mean(stats.sigma);
    MomentumStats out = ms;
    const double a = ms.alpha;
    for (std::size_t c = 0; c < ms.channels(); ++c) {
        out.mu_bar[c] = a * ms.mu_bar[c] + (1.0 - a) * mu[c];
        out.sigma_bar[c] = a * ms.sigma_bar[c] + (1.0 - a) * sigma[c];
    }
    return out;
}

}  // namespace fedfa
