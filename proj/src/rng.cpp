#include "fedfa/rng.hpp"

namespace fedfa {

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

}  // namespace

std::uint64_t derive_seed(std::uint64_t seed, std::initializer_list<std::uint64_t> coords) {
    std::uint64_t h = splitmix64(seed);
    for (auto c : coords) h = splitmix64(h ^ splitmix64(c + 0x632be59bd9b4e019ULL));
    return h;
}

Rng::Rng(std::uint64_t seed, Stream stream, std::initializer_list<std::uint64_t> coords)
    : engine_(derive_seed(derive_seed(seed, {static_cast<std::uint64_t>(stream)}), coords)) {}

double Rng::beta(double a, double b) {
    const double x = gamma(a);
    const double y = gamma(b);
    if (x + y == 0.0) return uniform() < a / (a + b) ? 1.0 : 0.0;
    return x / (x + y);
}

}  // namespace fedfa
