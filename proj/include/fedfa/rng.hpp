#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>

namespace fedfa {

// Mixes a seed with a list of stream coordinates (e.g. round, client, layer)
// into an independent 64-bit stream seed.
std::uint64_t derive_seed(std::uint64_t seed, std::initializer_list<std::uint64_t> coords);

// Tags that separate independent RNG streams drawn from the same coordinates.
enum class Stream : std::uint64_t {
    init = 1,
    shuffle = 2,
    ffa = 3,
    mixup = 4,
    selection = 5,
    data = 6,
    theory = 7,
};

class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}
    Rng(std::uint64_t seed, Stream stream, std::initializer_list<std::uint64_t> coords);

    double uniform(double lo = 0.0, double hi = 1.0) {
        return std::uniform_real_distribution<double>(lo, hi)(engine_);
    }
    double normal() { return std::normal_distribution<double>(0.0, 1.0)(engine_); }
    bool bernoulli(double p) { return uniform() < p; }
    double gamma(double shape) { return std::gamma_distribution<double>(shape, 1.0)(engine_); }
    double beta(double a, double b);
    std::size_t index(std::size_t n) {
        return std::uniform_int_distribution<std::size_t>(0, n - 1)(engine_);
    }

    std::mt19937_64& engine() { return engine_; }

private:
    std::mt19937_64 engine_;
};

}  // namespace fedfa
