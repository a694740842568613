#include "corrvae/rng.hpp"

#include <cmath>
#include <numbers>

namespace corrvae {

namespace {

constexpr std::uint64_t kGolden = 0x9E3779B97F4A7C15ULL;

std::uint64_t mix64(std::uint64_t z) {
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

}  // namespace

Rng::Rng(std::uint64_t seed) : state_(seed) {}

Rng Rng::for_stream(std::uint64_t seed, std::uint64_t stream) {
    return Rng(mix64(seed + kGolden * (stream + 1)));
}

std::uint64_t Rng::next_u64() {
    state_ += kGolden;
    return mix64(state_);
}

double Rng::uniform() {
    // 53-bit mantissa, shifted half a step into the open interval
    return (static_cast<double>(next_u64() >> 11) + 0.5) * 0x1.0p-53;
}

double Rng::normal() {
    double u1 = uniform();
    double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

double Rng::gumbel() { return -std::log(-std::log(uniform())); }

Tensor sample(Rng& rng, Dist kind, Shape shape) {
    if (shape.empty() || numel(shape) == 0) throw ShapeError("sample: zero-size shape");
    std::size_t n = numel(shape);
    std::vector<double> values(n);
    switch (kind) {
        case Dist::StandardNormal:
            for (double& v : values) v = rng.normal();
            break;
        case Dist::Uniform01:
            for (double& v : values) v = rng.uniform();
            break;
        case Dist::Gumbel01:
            for (double& v : values) v = rng.gumbel();
            break;
    }
    return Tensor::from_data(std::move(shape), std::move(values));
}

}  // namespace corrvae
