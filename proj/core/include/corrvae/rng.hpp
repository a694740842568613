#pragma once

#include <cstdint>

#include "corrvae/tensor.hpp"

namespace corrvae {

/// Counter-based generator (SplitMix64). The same seed and call sequence
/// always produce the same stream, and independent per-item streams can be
/// derived from (seed, stream) without coordination.
class Rng {
public:
    explicit Rng(std::uint64_t seed);

    /// Decorrelated stream for item `stream` under a common seed; used for
    /// per-sample dataset generation and per-restart optimizers.
    static Rng for_stream(std::uint64_t seed, std::uint64_t stream);

    std::uint64_t next_u64();

    double uniform();  // open interval (0,1)
    double normal();   // standard normal, Box-Muller
    double gumbel();   // Gumbel(0,1) = -log(-log(u))

private:
    std::uint64_t state_;
};

enum class Dist { StandardNormal, Uniform01, Gumbel01 };

/// Fills a fresh tensor (no grad) from the stream; the stream advances by
/// exactly numel(shape) draws for uniform/gumbel and 2*numel for normal.
Tensor sample(Rng& rng, Dist kind, Shape shape);

}  // namespace corrvae
