#include "fedfa/ffa.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

namespace fedfa {

ModulationCoefficients ModulationCoefficients::zeros(std::size_t channels) {
    return ModulationCoefficients{std::vector<double>(channels, 0.0), std::vector<double>(channels, 0.0)};
}

std::string to_string(FfaVariant v) {
    switch (v) {
        case FfaVariant::full: return "full";
        case FfaVariant::client_only: return "client-only";
        case FfaVariant::random: return "random";
    }
    return "?";
}

FfaVariant parse_ffa_variant(const std::string& s) {
    if (s == "full") return FfaVariant::full;
    if (s == "client-only" || s == "client") return FfaVariant::client_only;
    if (s == "random") return FfaVariant::random;
    throw std::invalid_argument("unknown FFA variant '" + s + "'");
}

void FfaConfig::validate() const {
    if (!(p >= 0.0 && p <= 1.0)) throw std::invalid_argument("ffa.p must lie in [0,1]");
    if (!(alpha >= 0.0 && alpha <= 1.0)) throw std::invalid_argument("ffa.alpha must lie in [0,1]");
    if (!(lambda >= 0.0)) throw std::invalid_argument("ffa.lambda must be >= 0");
    if (!(eps_var >= 0.0)) throw std::invalid_argument("ffa.eps_var must be >= 0");
}

std::vector<double> modulate(std::span<const double> shared_var) {
    std::vector<double> w(shared_var.size());
    double total = 0.0;
    for (std::size_t j = 0; j < w.size(); ++j) {
        const double v = shared_var[j];
        if (!(v >= 0.0)) throw std::invalid_argument("modulate: variances must be nonnegative");
        w[j] = std::isinf(v) ? 1.0 : v / (1.0 + v);
        total += w[j];
    }
    const double C = static_cast<double>(w.size());
    if (total == 0.0) return std::vector<double>(w.size(), 1.0);
    for (auto& x : w) x = C * x / total;
    return w;
}

ModulationCoefficients modulate(std::span<const double> shared_var_mu, std::span<const double> shared_var_sigma) {
    return ModulationCoefficients{modulate(shared_var_mu), modulate(shared_var_sigma)};
}

std::vector<double> fuse(std::span<const double> gamma, std::span<const double> client_var) {
    if (gamma.size() != client_var.size()) {
        throw std::invalid_argument("fuse: " + std::to_string(gamma.size()) + " coefficients for " +
                                    std::to_string(client_var.size()) + " channels");
    }
    std::vector<double> out(gamma.size());
    for (std::size_t j = 0; j < out.size(); ++j) out[j] = (gamma[j] + 1.0) * client_var[j];
    return out;
}

FusedVariance variant_variances(FfaVariant variant, const BatchStatVariance& client_var,
                                const ModulationCoefficients* gamma, double lambda) {
    switch (variant) {
        case FfaVariant::full:
            if (!gamma) return FusedVariance{client_var.var_mu, client_var.var_sigma};
            return FusedVariance{fuse(gamma->gamma_mu, client_var.var_mu),
                                 fuse(gamma->gamma_sigma, client_var.var_sigma)};
        case FfaVariant::client_only:
            return FusedVariance{client_var.var_mu, client_var.var_sigma};
        case FfaVariant::random: {
            const std::size_t C = client_var.var_mu.size();
            return FusedVariance{std::vector<double>(C, lambda * lambda), std::vector<double>(C, lambda * lambda)};
        }
    }
    throw std::logic_error("unreachable FFA variant");
}

NoiseDraw draw_noise(std::size_t batch, std::size_t channels, Rng& rng, bool share_across_channels) {
    NoiseDraw d{Tensor(Shape{batch, channels}), Tensor(Shape{batch, channels})};
    for (Tensor* t : {&d.eps_mu, &d.eps_sigma}) {
        for (std::size_t b = 0; b < batch; ++b) {
            const double shared = share_across_channels ? rng.normal() : 0.0;
            for (std::size_t c = 0; c < channels; ++c) (*t)[b * channels + c] = share_across_channels ? shared : rng.normal();
        }
    }
    return d;
}

namespace {

void check_inputs(const Tensor& X, const FusedVariance& fused, const NoiseDraw& eps, const char* where) {
    if (X.rank() != 4) throw std::invalid_argument(std::string(where) + ": expected [B,C,H,W], got " + shape_str(X.shape()));
    const std::size_t C = X.dim(1);
    if (fused.var_mu_hat.size() != C || fused.var_sigma_hat.size() != C) {
        throw std::invalid_argument(std::string(where) + ": fused variances do not have " + std::to_string(C) + " channels");
    }
    for (std::size_t c = 0; c < C; ++c) {
        if (!(fused.var_mu_hat[c] >= 0.0 && fused.var_sigma_hat[c] >= 0.0)) {
            throw std::invalid_argument(std::string(where) + ": fused variances must be nonnegative");
        }
    }
    require_shape(eps.eps_mu, Shape{X.dim(0), C}, std::string(where) + " eps_mu");
    require_shape(eps.eps_sigma, Shape{X.dim(0), C}, std::string(where) + " eps_sigma");
}

// Normalised value (x - mu) / sigma; a constant channel with sigma == 0 maps to 0.
inline double normalised(double x, double mu, double sigma) { return sigma > 0.0 ? (x - mu) / sigma : 0.0; }

}  // namespace

Tensor apply_augmentation(const Tensor& features, const FusedVariance& fused, const NoiseDraw& eps, double eps_var) {
    check_inputs(features, fused, eps, "augment");
    const ChannelStats st = channel_stats(features, eps_var);
    const std::size_t B = features.dim(0), C = features.dim(1), HW = features.dim(2) * features.dim(3);
    Tensor out(features.shape());
    for (std::size_t b = 0; b < B; ++b) {
        for (std::size_t c = 0; c < C; ++c) {
            const std::size_t bc = b * C + c;
            const double mu = st.mu[bc], sigma = st.sigma[bc];
            const double mu_hat = mu + eps.eps_mu[bc] * std::sqrt(fused.var_mu_hat[c]);
            const double sigma_hat = sigma + eps.eps_sigma[bc] * std::sqrt(fused.var_sigma_hat[c]);
            const double* x = features.data().data() + bc * HW;
            double* y = out.data().data() + bc * HW;
            for (std::size_t t = 0; t < HW; ++t) y[t] = sigma_hat * normalised(x[t], mu, sigma) + mu_hat;
        }
    }
    return out;
}

AugmentResult augment(const Tensor& features, const FusedVariance& fused, const FfaConfig& cfg, Rng& rng,
                      bool training) {
    if (!training || !rng.bernoulli(cfg.p)) return AugmentResult{features, std::nullopt};
    NoiseDraw eps = draw_noise(features.dim(0), features.dim(1), rng, cfg.share_eps_across_channels);
    Tensor out = apply_augmentation(features, fused, eps, cfg.eps_var);
    return AugmentResult{std::move(out), std::move(eps)};
}

Tensor noise_view(const Tensor& features, const FusedVariance& fused, const NoiseDraw& eps, double eps_var) {
    check_inputs(features, fused, eps, "noise_view");
    const ChannelStats st = channel_stats(features, eps_var);
    const std::size_t B = features.dim(0), C = features.dim(1), HW = features.dim(2) * features.dim(3);
    Tensor e(features.shape());
    for (std::size_t b = 0; b < B; ++b) {
        for (std::size_t c = 0; c < C; ++c) {
            const std::size_t bc = b * C + c;
            const double scale_sigma = eps.eps_sigma[bc] * std::sqrt(fused.var_sigma_hat[c]);
            const double shift_mu = eps.eps_mu[bc] * std::sqrt(fused.var_mu_hat[c]);
            const double* x = features.data().data() + bc * HW;
            double* out = e.data().data() + bc * HW;
            for (std::size_t t = 0; t < HW; ++t) out[t] = scale_sigma * normalised(x[t], st.mu[bc], st.sigma[bc]) + shift_mu;
        }
    }
    return e;
}

Var ffa_transform(Tape& tape, Var features, const FusedVariance& fused, const NoiseDraw& eps, double eps_var) {
    const Tensor& X = tape.value(features);
    Tensor out = apply_augmentation(X, fused, eps, eps_var);
    const std::size_t B = X.dim(0), C = X.dim(1), HW = X.dim(2) * X.dim(3);

    // out = x + s * xbar + shift with s = eps_sigma * Sigma_sigma per (b,c).
    // d/dx of s * xbar is (s / sigma) * (g - mean(g) - xbar * mean(g * xbar)).
    const ChannelStats st = channel_stats(X, eps_var);
    std::vector<double> ratio(B * C, 0.0);
    for (std::size_t b = 0; b < B; ++b) {
        for (std::size_t c = 0; c < C; ++c) {
            const std::size_t bc = b * C + c;
            const double s = eps.eps_sigma[bc] * std::sqrt(fused.var_sigma_hat[c]);
            ratio[bc] = st.sigma[bc] > 0.0 ? s / st.sigma[bc] : 0.0;
        }
    }
    auto backward = [features, &tape, mu = st.mu, sigma = st.sigma, ratio = std::move(ratio), HW](
                        std::span<const double> g, std::span<std::vector<double>*> gin) {
        if (!gin[0]) return;
        const Tensor& X = tape.value(features);
        std::vector<double>& gx = *gin[0];
        const double inv = 1.0 / static_cast<double>(HW);
        for (std::size_t bc = 0; bc < ratio.size(); ++bc) {
            const double* x = X.data().data() + bc * HW;
            const double* gp = g.data() + bc * HW;
            double* gxp = gx.data() + bc * HW;
            double g_mean = 0.0, gx_mean = 0.0;
            for (std::size_t t = 0; t < HW; ++t) {
                g_mean += gp[t];
                gx_mean += gp[t] * normalised(x[t], mu[bc], sigma[bc]);
            }
            g_mean *= inv;
            gx_mean *= inv;
            const double r = ratio[bc];
            for (std::size_t t = 0; t < HW; ++t) {
                const double xbar = normalised(x[t], mu[bc], sigma[bc]);
                gxp[t] += gp[t] + r * (gp[t] - g_mean - xbar * gx_mean);
            }
        }
    };
    return tape.record(std::move(out), {features}, backward, "ffa_transform");
}

std::vector<StageHook> make_ffa_hooks(const FfaConfig& cfg, std::vector<FfaSite>& sites, std::vector<Rng>& rngs,
                                      bool training) {
    if (rngs.size() != sites.size()) throw std::invalid_argument("make_ffa_hooks: one RNG stream per site required");
    std::vector<StageHook> hooks;
    for (std::size_t k = 0; k < sites.size(); ++k) {
        hooks.push_back([&cfg, &sites, &rngs, training, k](Tape& tape, Var x, std::size_t) -> Var {
            if (!training) return x;
            Rng& rng = rngs[k];
            if (!rng.bernoulli(cfg.p)) return x;
            FfaSite& site = sites[k];
            const Tensor& X = tape.value(x);
            const ChannelStats stats = channel_stats(X, cfg.eps_var);
            const BatchStatVariance client_var = batch_variances(stats);
            const FusedVariance fused =
                variant_variances(cfg.variant, client_var, site.gamma ? &*site.gamma : nullptr, cfg.lambda);
            const NoiseDraw eps = draw_noise(X.dim(0), X.dim(1), rng, cfg.share_eps_across_channels);
            Var y = ffa_transform(tape, x, fused, eps, cfg.eps_var);
            site.momentum = momentum_update(site.momentum, stats);
            ++site.activations;
            return y;
        });
    }
    return hooks;
}

}  // namespace fedfa
