#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "fedfa/autograd.hpp"
#include "fedfa/feature_stats.hpp"
#include "fedfa/model.hpp"
#include "fedfa/rng.hpp"

namespace fedfa {

// Per-channel weights derived from client-sharing variances; each vector sums
// to the channel count.
struct ModulationCoefficients {
    std::vector<double> gamma_mu;
    std::vector<double> gamma_sigma;

    static ModulationCoefficients zeros(std::size_t channels);
    std::size_t channels() const { return gamma_mu.size(); }
};

// Gaussian variances used to sample new statistics, each [C].
struct FusedVariance {
    std::vector<double> var_mu_hat;
    std::vector<double> var_sigma_hat;
};

enum class FfaVariant {
    full,         // (gamma + 1) * client variance
    client_only,  // client variance as is
    random,       // constant lambda^2
};

std::string to_string(FfaVariant v);
FfaVariant parse_ffa_variant(const std::string& s);

struct FfaConfig {
    double p = 0.5;        // per-layer activation probability
    FfaVariant variant = FfaVariant::full;
    double lambda = 0.5;   // standard deviation for FfaVariant::random
    double alpha = 0.99;   // momentum coefficient
    std::uint64_t seed = 0;
    double eps_var = kDefaultEpsVar;
    bool share_eps_across_channels = false;  // one draw per sample instead of per (sample, channel)

    void validate() const;
};

// Standard-normal draws, each [B,C].
struct NoiseDraw {
    Tensor eps_mu;
    Tensor eps_sigma;
};

// gamma_j = C * w_j / sum_c w_c with w = (1 + 1/v)^-1 = v / (1 + v). A zero
// variance maps to weight 0; an all-zero input yields all ones.
std::vector<double> modulate(std::span<const double> shared_var);
ModulationCoefficients modulate(std::span<const double> shared_var_mu, std::span<const double> shared_var_sigma);

// (gamma + 1) * client_var, elementwise.
std::vector<double> fuse(std::span<const double> gamma, std::span<const double> client_var);

// `gamma` may be null before the first server aggregation; the full variant
// then falls back to client-only.
FusedVariance variant_variances(FfaVariant variant, const BatchStatVariance& client_var,
                                const ModulationCoefficients* gamma, double lambda = 0.5);

NoiseDraw draw_noise(std::size_t batch, std::size_t channels, Rng& rng, bool share_across_channels = false);

// sigma_hat * (X - mu) / sigma + mu_hat, with mu_hat = mu + eps_mu * sqrt(var_mu_hat)
// and sigma_hat = sigma + eps_sigma * sqrt(var_sigma_hat).
Tensor apply_augmentation(const Tensor& features, const FusedVariance& fused, const NoiseDraw& eps,
                          double eps_var = kDefaultEpsVar);

struct AugmentResult {
    Tensor output;
    std::optional<NoiseDraw> eps;  // absent when the gate was closed
};

// Gated augmentation of a [B,C,H,W] feature map. One Bernoulli(p) draw gates
// the whole layer; evaluation mode never augments and draws nothing.
AugmentResult augment(const Tensor& features, const FusedVariance& fused, const FfaConfig& cfg, Rng& rng,
                      bool training = true);

// Additive noise e = eps_sigma * sqrt(var_sigma_hat) * (X - mu) / sigma
//                  + eps_mu * sqrt(var_mu_hat), so X + e equals the augmented map.
Tensor noise_view(const Tensor& features, const FusedVariance& fused, const NoiseDraw& eps,
                  double eps_var = kDefaultEpsVar);

// Differentiable form of apply_augmentation. Gradients flow through X and its
// statistics; the fused variances and eps are constants.
Var ffa_transform(Tape& tape, Var features, const FusedVariance& fused, const NoiseDraw& eps,
                  double eps_var = kDefaultEpsVar);

// State of one FFA site on one client.
struct FfaSite {
    MomentumStats momentum;
    std::optional<ModulationCoefficients> gamma;  // from the latest downlink
    std::size_t activations = 0;
};

// Builds one stage hook per site. Each hook follows the per-batch procedure:
// gate, channel statistics, client variances, fusion, sampling, transform,
// momentum update. `rngs[k]` drives site k.
std::vector<StageHook> make_ffa_hooks(const FfaConfig& cfg, std::vector<FfaSite>& sites, std::vector<Rng>& rngs,
                                      bool training);

}  // namespace fedfa
