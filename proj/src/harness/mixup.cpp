#include "fedfa/harness/mixup.hpp"

#include <algorithm>
#include <numeric>
#include <stdexcept>

namespace fedfa::harness {

namespace {

void mix_rows(Tensor& t, const std::vector<std::size_t>& partner, double lambda) {
    const std::size_t b = t.dim(0);
    const std::size_t row = t.size() / b;
    const std::vector<double> src = t.values();
    auto d = t.data();
    for (std::size_t i = 0; i < b; ++i) {
        const double* a = src.data() + i * row;
        const double* c = src.data() + partner[i] * row;
        for (std::size_t j = 0; j < row; ++j) d[i * row + j] = lambda * a[j] + (1.0 - lambda) * c[j];
    }
}

}  // namespace

MixupResult mixup_batch(Tensor& inputs, Tensor& targets, double beta_param, Rng& rng,
                        std::optional<double> forced_lambda) {
    if (!(beta_param > 0.0)) throw std::invalid_argument("mixup: beta parameter must be > 0");
    if (forced_lambda && !(*forced_lambda >= 0.0 && *forced_lambda <= 1.0)) {
        throw std::invalid_argument("mixup: lambda must lie in [0,1]");
    }
    if (inputs.rank() == 0 || targets.rank() == 0 || inputs.dim(0) != targets.dim(0)) {
        throw std::invalid_argument("mixup: inputs " + shape_str(inputs.shape()) + " and targets " +
                                    shape_str(targets.shape()) + " disagree on batch size");
    }
    MixupResult res;
    const std::size_t b = inputs.dim(0);
    res.partner.resize(b);
    std::iota(res.partner.begin(), res.partner.end(), std::size_t{0});
    if (b < 2) return res;

    std::vector<std::size_t> order(b);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::shuffle(order.begin(), order.end(), rng.engine());
    for (std::size_t i = 0; i < b; ++i) res.partner[order[i]] = order[(i + 1) % b];
    res.lambda = forced_lambda ? *forced_lambda : rng.beta(beta_param, beta_param);

    mix_rows(inputs, res.partner, res.lambda);
    mix_rows(targets, res.partner, res.lambda);
    return res;
}

BatchAugmenter make_mixup_augmenter(double beta_param) {
    if (!(beta_param > 0.0)) throw std::invalid_argument("mixup: beta parameter must be > 0");
    return [beta_param](Tensor& inputs, Tensor& targets, Rng& rng) { mixup_batch(inputs, targets, beta_param, rng); };
}

}  // namespace fedfa::harness
