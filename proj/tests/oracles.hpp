#pragma once

// Independent reference computations used as test oracles. Nothing here
// calls into the taped engine.

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <random>
#include <vector>

namespace oracle {

using Vec = std::vector<double>;

inline Vec random_vec(std::size_t n, std::mt19937_64& g, double scale = 1.0) {
    std::normal_distribution<double> d(0.0, scale);
    Vec v(n);
    for (auto& x : v) x = d(g);
    return v;
}

// Central finite-difference gradient of f at x.
inline Vec fd_gradient(const std::function<double(const Vec&)>& f, Vec x, double h = 1e-5) {
    Vec g(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double xi = x[i];
        x[i] = xi + h;
        const double fp = f(x);
        x[i] = xi - h;
        const double fm = f(x);
        x[i] = xi;
        g[i] = (fp - fm) / (2 * h);
    }
    return g;
}

inline double rel_error(double a, double b) { return std::abs(a - b) / std::max(1.0, std::max(std::abs(a), std::abs(b))); }

inline double max_rel_error(const Vec& a, const Vec& b) {
    double e = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) e = std::max(e, rel_error(a[i], b[i]));
    return e;
}

// out[b][o][i][j] = bias[o] + sum_{c,ki,kj} w[o][c][ki][kj] * x[b][c][i*s+ki-p][j*s+kj-p]
inline Vec conv2d(const Vec& x, std::size_t B, std::size_t C, std::size_t H, std::size_t W, const Vec& w,
                  const Vec& bias, std::size_t O, std::size_t K, std::size_t s, std::size_t p, std::size_t& Ho,
                  std::size_t& Wo) {
    Ho = (H + 2 * p - K) / s + 1;
    Wo = (W + 2 * p - K) / s + 1;
    Vec out(B * O * Ho * Wo, 0.0);
    for (std::size_t b = 0; b < B; ++b)
        for (std::size_t o = 0; o < O; ++o)
            for (std::size_t i = 0; i < Ho; ++i)
                for (std::size_t j = 0; j < Wo; ++j) {
                    double acc = bias[o];
                    for (std::size_t c = 0; c < C; ++c)
                        for (std::size_t ki = 0; ki < K; ++ki)
                            for (std::size_t kj = 0; kj < K; ++kj) {
                                const long r = static_cast<long>(i * s + ki) - static_cast<long>(p);
                                const long q = static_cast<long>(j * s + kj) - static_cast<long>(p);
                                if (r < 0 || q < 0 || r >= static_cast<long>(H) || q >= static_cast<long>(W)) continue;
                                acc += w[((o * C + c) * K + ki) * K + kj] * x[((b * C + c) * H + r) * W + q];
                            }
                    out[((b * O + o) * Ho + i) * Wo + j] = acc;
                }
    return out;
}

inline Vec relu(Vec x) {
    for (auto& v : x) v = v > 0 ? v : 0.0;
    return x;
}

inline Vec maxpool2(const Vec& x, std::size_t B, std::size_t C, std::size_t H, std::size_t W) {
    const std::size_t Ho = H / 2, Wo = W / 2;
    Vec out(B * C * Ho * Wo);
    for (std::size_t b = 0; b < B; ++b)
        for (std::size_t c = 0; c < C; ++c)
            for (std::size_t i = 0; i < Ho; ++i)
                for (std::size_t j = 0; j < Wo; ++j) {
                    double m = -std::numeric_limits<double>::infinity();
                    for (std::size_t a = 0; a < 2; ++a)
                        for (std::size_t d = 0; d < 2; ++d) m = std::max(m, x[((b * C + c) * H + 2 * i + a) * W + 2 * j + d]);
                    out[((b * C + c) * Ho + i) * Wo + j] = m;
                }
    return out;
}

// y[b][o] = bias[o] + sum_f w[o][f] x[b][f]
inline Vec linear(const Vec& x, std::size_t B, std::size_t F, const Vec& w, const Vec& bias, std::size_t O) {
    Vec y(B * O);
    for (std::size_t b = 0; b < B; ++b)
        for (std::size_t o = 0; o < O; ++o) {
            double acc = bias[o];
            for (std::size_t f = 0; f < F; ++f) acc += w[o * F + f] * x[b * F + f];
            y[b * O + o] = acc;
        }
    return y;
}

inline double mean_cross_entropy(const Vec& logits, std::size_t B, std::size_t K, const std::vector<int>& labels) {
    double total = 0.0;
    for (std::size_t b = 0; b < B; ++b) {
        double m = -std::numeric_limits<double>::infinity();
        for (std::size_t k = 0; k < K; ++k) m = std::max(m, logits[b * K + k]);
        double s = 0.0;
        for (std::size_t k = 0; k < K; ++k) s += std::exp(logits[b * K + k] - m);
        total += -(logits[b * K + static_cast<std::size_t>(labels[b])] - m - std::log(s));
    }
    return total / static_cast<double>(B);
}

// Population variance.
inline double variance(const Vec& v) {
    double m = 0.0;
    for (double x : v) m += x;
    m /= static_cast<double>(v.size());
    double s = 0.0;
    for (double x : v) s += (x - m) * (x - m);
    return s / static_cast<double>(v.size());
}

// Scalar evaluation of the augmentation of one channel of one sample.
inline Vec augment_channel(const Vec& x, double var_mu_hat, double var_sigma_hat, double eps_mu, double eps_sigma,
                           double eps_var) {
    double mu = 0.0;
    for (double v : x) mu += v;
    mu /= static_cast<double>(x.size());
    const double sigma = std::sqrt(variance(x) + eps_var);
    const double mu_hat = mu + eps_mu * std::sqrt(var_mu_hat);
    const double sigma_hat = sigma + eps_sigma * std::sqrt(var_sigma_hat);
    Vec out;
    for (double v : x) out.push_back(sigma_hat * (v - mu) / sigma + mu_hat);
    return out;
}

}  // namespace oracle
