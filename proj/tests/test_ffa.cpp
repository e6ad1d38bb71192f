#include <doctest.h>

#include <cmath>
#include <numeric>
#include <random>

#include "fedfa/ffa.hpp"
#include "oracles.hpp"

using namespace fedfa;

namespace {

Tensor randn(Shape s, std::mt19937_64& g, double scale = 1.0) {
    return Tensor(s, oracle::random_vec(shape_numel(s), g, scale));
}

NoiseDraw ones(std::size_t b, std::size_t c, double mu = 1.0, double sigma = 1.0) {
    return NoiseDraw{Tensor(Shape{b, c}, mu), Tensor(Shape{b, c}, sigma)};
}

const Tensor kX(Shape{1, 1, 2, 2}, std::vector<double>{1, 3, 5, 7});

}  // namespace

TEST_CASE("modulation coefficients") {
    auto sum = [](const std::vector<double>& v) { return std::accumulate(v.begin(), v.end(), 0.0); };
    SUBCASE("equal variances give ones") {
        for (double g : modulate(std::vector<double>(5, 0.7))) CHECK(g == doctest::Approx(1.0).epsilon(1e-15));
    }
    SUBCASE("[1, 3] -> [0.8, 1.2]") {
        const auto g = modulate(std::vector<double>{1.0, 3.0});
        CHECK(g[0] == doctest::Approx(0.8).epsilon(1e-14));
        CHECK(g[1] == doctest::Approx(1.2).epsilon(1e-14));
    }
    SUBCASE("zero variance channel gets no weight") {
        const auto g = modulate(std::vector<double>{0.0, 0.4});
        CHECK(g[0] == 0.0);
        CHECK(g[1] == doctest::Approx(2.0).epsilon(1e-15));
    }
    SUBCASE("all-zero input gives ones") {
        for (double g : modulate(std::vector<double>(3, 0.0))) CHECK(g == 1.0);
    }
    SUBCASE("normalisation and monotonicity over random inputs") {
        std::mt19937_64 rng(3);
        std::uniform_real_distribution<double> u(0.0, 5.0);
        std::uniform_int_distribution<std::size_t> n(1, 512);
        for (int trial = 0; trial < 200; ++trial) {
            std::vector<double> v(n(rng));
            for (auto& x : v) x = u(rng);
            const auto g = modulate(v);
            CHECK(std::abs(sum(g) - static_cast<double>(v.size())) < 1e-9);
            for (std::size_t i = 1; i < v.size(); ++i) {
                if (v[i] > v[i - 1]) CHECK(g[i] >= g[i - 1]);
                CHECK(g[i] > 0.0);
            }
        }
    }
}

TEST_CASE("variance fusion") {
    const std::vector<double> v{0.1, 0.2};
    CHECK(fuse(std::vector<double>{0, 0}, v) == v);
    const auto two = fuse(std::vector<double>{1, 1}, v);
    CHECK(two[0] == 0.2);
    CHECK(two[1] == 0.4);
    const auto f = fuse(std::vector<double>{0.8, 1.2}, v);
    CHECK(f[0] == doctest::Approx(0.18).epsilon(1e-14));
    CHECK(f[1] == doctest::Approx(0.44).epsilon(1e-14));
    CHECK_THROWS(fuse(std::vector<double>{1}, v));
}

TEST_CASE("variant variances") {
    const BatchStatVariance client{{0.3, 0.5}, {0.2, 0.1}};
    const FusedVariance r = variant_variances(FfaVariant::random, client, nullptr, 0.5);
    CHECK(r.var_mu_hat == std::vector<double>{0.25, 0.25});
    CHECK(r.var_sigma_hat == std::vector<double>{0.25, 0.25});
    const FusedVariance c = variant_variances(FfaVariant::client_only, client, nullptr);
    CHECK(c.var_mu_hat == client.var_mu);
    CHECK(c.var_sigma_hat == client.var_sigma);
    const ModulationCoefficients zero = ModulationCoefficients::zeros(2);
    const FusedVariance fz = variant_variances(FfaVariant::full, client, &zero);
    CHECK(fz.var_mu_hat == client.var_mu);
    CHECK(fz.var_sigma_hat == client.var_sigma);
    const FusedVariance first_round = variant_variances(FfaVariant::full, client, nullptr);
    CHECK(first_round.var_mu_hat == client.var_mu);
    const ModulationCoefficients g{{0.5, 1.5}, {1.0, 1.0}};
    const FusedVariance full = variant_variances(FfaVariant::full, client, &g);
    CHECK(full.var_mu_hat[1] == doctest::Approx(1.25));
    for (std::size_t i = 0; i < 2; ++i) CHECK(full.var_mu_hat[i] >= client.var_mu[i]);
}

TEST_CASE("augmentation worked example") {
    const FusedVariance fused{{1.0}, {1.0}};
    const Tensor out = apply_augmentation(kX, fused, ones(1, 1), 0.0);
    const double s5 = std::sqrt(5.0);
    const double expect[4] = {5 - 3 * (s5 + 1) / s5, 5 - (s5 + 1) / s5, 5 + (s5 + 1) / s5, 5 + 3 * (s5 + 1) / s5};
    const double rounded[4] = {0.658, 3.553, 6.447, 9.342};
    const auto scalar = oracle::augment_channel({1, 3, 5, 7}, 1.0, 1.0, 1.0, 1.0, 0.0);
    for (std::size_t i = 0; i < 4; ++i) {
        CHECK(out[i] == doctest::Approx(expect[i]).epsilon(1e-12));
        CHECK(out[i] == doctest::Approx(scalar[i]).epsilon(1e-12));
        CHECK(std::abs(out[i] - rounded[i]) < 5e-4);
    }
    const Tensor e = noise_view(kX, fused, ones(1, 1), 0.0);
    const double noise[4] = {-0.342, 0.553, 1.447, 2.342};
    for (std::size_t i = 0; i < 4; ++i) {
        CHECK(std::abs(e[i] - noise[i]) < 5e-4);
        CHECK(kX[i] + e[i] == doctest::Approx(out[i]).epsilon(1e-12));
    }
}

TEST_CASE("zero noise and closed gate are the identity") {
    std::mt19937_64 g(6);
    const Tensor x = randn({3, 2, 4, 4}, g);
    const FusedVariance fused{{0.5, 2.0}, {0.3, 1.0}};
    const Tensor out = apply_augmentation(x, fused, ones(3, 2, 0.0, 0.0));
    for (std::size_t i = 0; i < x.size(); ++i) CHECK(out[i] == doctest::Approx(x[i]).epsilon(1e-12));
    const Tensor e = noise_view(x, fused, ones(3, 2, 0.0, 0.0));
    for (double v : e.data()) CHECK(v == 0.0);

    FfaConfig cfg;
    cfg.p = 0.0;
    Rng rng(1);
    const AugmentResult r = augment(x, fused, cfg, rng);
    CHECK(r.output.same_values(x));
    CHECK_FALSE(r.eps.has_value());

    cfg.p = 1.0;
    Rng rng2(1);
    const AugmentResult eval = augment(x, fused, cfg, rng2, false);
    CHECK(eval.output.same_values(x));
    CHECK_FALSE(eval.eps.has_value());
    Rng untouched(1);
    CHECK(rng2.uniform() == untouched.uniform());
}

TEST_CASE("noise view identity over seeded cases") {
    Rng rng(2024);
    double worst = 0.0;
    for (int n = 0; n < 300; ++n) {
        const std::size_t b = 1 + rng.index(4), c = 1 + rng.index(4), h = 1 + rng.index(5), w = 1 + rng.index(5);
        Tensor x(Shape{b, c, h, w});
        for (auto& v : x.data()) v = rng.uniform(-4, 4);
        FusedVariance f;
        for (std::size_t k = 0; k < c; ++k) {
            f.var_mu_hat.push_back(rng.uniform(0, 3));
            f.var_sigma_hat.push_back(rng.uniform(0, 3));
        }
        FfaConfig cfg;
        cfg.p = 1.0;
        const AugmentResult r = augment(x, f, cfg, rng);
        REQUIRE(r.eps.has_value());
        const Tensor e = noise_view(x, f, *r.eps);
        for (std::size_t i = 0; i < x.size(); ++i) worst = std::max(worst, std::abs(r.output[i] - (x[i] + e[i])));
    }
    CHECK(worst < 1e-9);
}

TEST_CASE("noise has zero mean") {
    std::mt19937_64 g(9);
    const Tensor x = randn({2, 2, 2, 2}, g, 2.0);
    const FusedVariance f{{0.4, 1.0}, {0.2, 0.5}};
    FfaConfig cfg;
    cfg.p = 1.0;
    Rng rng(77);
    const std::size_t draws = 20000;
    std::vector<double> sum(x.size(), 0.0), sq(x.size(), 0.0);
    for (std::size_t d = 0; d < draws; ++d) {
        const Tensor out = augment(x, f, cfg, rng).output;
        for (std::size_t i = 0; i < x.size(); ++i) {
            sum[i] += out[i];
            sq[i] += out[i] * out[i];
        }
    }
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double mean = sum[i] / draws;
        const double var = sq[i] / draws - mean * mean;
        CHECK(std::abs(mean - x[i]) <= 3.0 * std::sqrt(var / draws));
    }
}

TEST_CASE("gate frequency") {
    FfaConfig cfg;
    cfg.p = 0.5;
    Rng rng(5);
    const Tensor x(Shape{1, 1, 1, 2}, std::vector<double>{0, 1});
    const FusedVariance f{{0.1}, {0.1}};
    std::size_t on = 0;
    const std::size_t trials = 100000;
    for (std::size_t t = 0; t < trials; ++t) on += augment(x, f, cfg, rng).eps.has_value();
    const double freq = static_cast<double>(on) / trials;
    CHECK(freq >= 0.494);
    CHECK(freq <= 0.506);
}

TEST_CASE("noise granularity") {
    Rng rng(3);
    const NoiseDraw per = draw_noise(4, 3, rng);
    CHECK(per.eps_mu.shape() == Shape{4, 3});
    CHECK(per.eps_mu[0] != per.eps_mu[1]);
    const NoiseDraw shared = draw_noise(4, 3, rng, true);
    for (std::size_t b = 0; b < 4; ++b)
        for (std::size_t c = 1; c < 3; ++c) {
            CHECK(shared.eps_mu[b * 3 + c] == shared.eps_mu[b * 3]);
            CHECK(shared.eps_sigma[b * 3 + c] == shared.eps_sigma[b * 3]);
        }
    CHECK(shared.eps_mu[0] != shared.eps_mu[3]);
}

TEST_CASE("transform gradient matches finite differences with eps fixed") {
    std::mt19937_64 g(12);
    const Tensor x = randn({3, 2, 3, 3}, g);
    const Tensor r = randn({3, 2, 3, 3}, g);
    const FusedVariance f{{0.3, 0.8}, {0.5, 0.2}};
    Rng rng(4);
    const NoiseDraw eps = draw_noise(3, 2, rng);

    Tape tape;
    Var xv = tape.leaf(x);
    Var y = ffa_transform(tape, xv, f, eps);
    for (std::size_t i = 0; i < x.size(); ++i) {
        CHECK(tape.value(y)[i] == doctest::Approx(apply_augmentation(x, f, eps)[i]).epsilon(1e-12));
    }
    tape.backward(ops::dot_constant(tape, y, r));
    auto loss = [&](const oracle::Vec& v) {
        const Tensor out = apply_augmentation(Tensor(x.shape(), v), f, eps);
        double s = 0.0;
        for (std::size_t i = 0; i < out.size(); ++i) s += out[i] * r[i];
        return s;
    };
    const auto fd = oracle::fd_gradient(loss, x.values());
    const auto an = tape.grad(xv);
    CHECK(oracle::max_rel_error(fd, oracle::Vec(an.begin(), an.end())) < 1e-4);
}

TEST_CASE("hooks update momentum only when the gate opens") {
    FfaConfig cfg;
    cfg.p = 1.0;
    cfg.alpha = 0.5;
    std::vector<FfaSite> sites{FfaSite{MomentumStats::initial(2, 0.5), std::nullopt, 0}};
    std::vector<Rng> rngs{Rng(1)};
    std::mt19937_64 g(1);
    const Tensor x = randn({4, 2, 3, 3}, g);
    Tape tape;
    Var xv = tape.leaf(x);
    auto hooks = make_ffa_hooks(cfg, sites, rngs, true);
    hooks[0](tape, xv, 0);
    CHECK(sites[0].activations == 1);
    const ChannelStats s = channel_stats(x);
    double m0 = 0;
    for (std::size_t b = 0; b < 4; ++b) m0 += s.mu[b * 2];
    CHECK(sites[0].momentum.mu_bar[0] == doctest::Approx(0.5 * m0 / 4));

    cfg.p = 0.0;
    const MomentumStats before = sites[0].momentum;
    Var same = hooks[0](tape, xv, 0);
    CHECK(same.id == xv.id);
    CHECK(sites[0].activations == 1);
    CHECK(sites[0].momentum.mu_bar == before.mu_bar);

    cfg.p = 1.0;
    auto eval_hooks = make_ffa_hooks(cfg, sites, rngs, false);
    CHECK(eval_hooks[0](tape, xv, 0).id == xv.id);
    CHECK(sites[0].activations == 1);
}

TEST_CASE("config validation and variant names") {
    FfaConfig cfg;
    cfg.p = 1.5;
    CHECK_THROWS(cfg.validate());
    cfg.p = 0.5;
    cfg.lambda = -1;
    CHECK_THROWS(cfg.validate());
    CHECK(parse_ffa_variant("client-only") == FfaVariant::client_only);
    CHECK(parse_ffa_variant(to_string(FfaVariant::random)) == FfaVariant::random);
    CHECK_THROWS(parse_ffa_variant("bogus"));
}
