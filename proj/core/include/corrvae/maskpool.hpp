#pragma once

#include <set>
#include <utility>
#include <vector>

#include "corrvae/nn.hpp"
#include "corrvae/rng.hpp"
#include "corrvae/tensor.hpp"

namespace corrvae {

/// Trainable binary mask linking the l latent coordinates (rows) to the m
/// properties (columns). Relaxed samples during training, straight-through
/// hard samples when `hard` is set.
struct MaskMatrix {
    Tensor logits;  // [l, m]
    double tau = 1.0;
    bool hard = false;

    static MaskMatrix init(std::size_t l, std::size_t m, double logit0 = 0.0);
    std::size_t latent_dim() const { return logits.dim(0); }
    std::size_t property_count() const { return logits.dim(1); }
};

/// Per-entry binary-concrete sample sigma((logits + g1 - g0)/tau). With
/// `hard`, the forward value is rounded to {0,1} and the relaxed gradient
/// passes through unchanged.
Tensor sample_mask(const MaskMatrix& mask, Rng& rng);

/// sigmoid(logits), the entrywise expectation of the relaxed mask.
Tensor expected_mask(const MaskMatrix& mask);

/// Hard mask decided by the sign of the logits (eval/generation mode).
Tensor hard_mask(const MaskMatrix& mask);

/// L1 norm of the expected mask; a deterministic sparsity penalty.
Tensor sparsity_loss(const MaskMatrix& mask);

/// Per-property aggregation networks h_j mapping the masked latent vector
/// to one bridging coordinate each.
struct Aggregator {
    enum class Kind { Mlp, Linear };
    Kind kind = Kind::Mlp;
    std::vector<Mlp> nets;  // m nets, each l -> 1

    static Aggregator make(std::size_t l, std::size_t m, std::size_t hidden, Kind kind, Rng& rng);
    std::size_t property_count() const { return nets.size(); }
};

/// w' with w'_j = h_j(w * M[:,j]); w is [B,l], the sampled mask [l,m], the
/// result [B,m]. Differentiable through w, the mask sample, and the nets.
Tensor aggregate(const Tensor& w, const Tensor& mask_sample, const Aggregator& agg);

/// Unordered property pairs (i<j) whose mask columns share at least one
/// active row. Input must be exactly binary.
std::set<std::pair<std::size_t, std::size_t>> correlation_pairs(const Tensor& mask_hard);

}  // namespace corrvae
