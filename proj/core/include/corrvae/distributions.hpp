#pragma once

#include "corrvae/tensor.hpp"

namespace corrvae {

/// Diagonal Gaussian with per-dimension mean and log-variance. Shapes may be
/// [d] for a single distribution or [B,d] for a batch of posteriors.
struct DiagGaussian {
    Tensor mu;
    Tensor logvar;

    DiagGaussian(Tensor mu_in, Tensor logvar_in);
};

/// mu + exp(logvar/2) * eps, differentiable through mu and logvar.
Tensor reparameterize(const DiagGaussian& g, const Tensor& eps);

/// Analytic KL(g || N(0,I)) summed over every dimension (and batch row):
/// 0.5 * sum(mu^2 + sigma^2 - logvar - 1). Non-negative, zero iff standard.
Tensor kl_to_standard(const DiagGaussian& g);

/// Exact log-density of x under g, reduced over the event dimension.
/// x [B,d] against g with matching (or broadcastable [d]) parameters gives a
/// [B] result; a plain [d] x gives a scalar.
Tensor log_prob(const DiagGaussian& g, const Tensor& x);

/// [B,B] matrix with entry (i,j) = log density of row x_i under posterior j.
/// Both arguments must be [B,d]; used by the minibatch TC estimators.
Tensor pairwise_log_prob(const DiagGaussian& g, const Tensor& x);

struct TotalCorrelation {
    Tensor tc_zw;  // estimate of KL(q(z,w) || q(z) q(w))
    Tensor tc_w;   // estimate of KL(q(w) || prod_i q(w_i))
};

/// Minibatch-weighted Monte-Carlo estimates of the two total-correlation
/// penalties, normalized by log(B * dataset_size). Differentiable through
/// samples and posterior parameters. Batch size must be >= 2.
TotalCorrelation total_correlation_terms(const Tensor& w_samples, const Tensor& z_samples,
                                         const DiagGaussian& w_posteriors,
                                         const DiagGaussian& z_posteriors,
                                         std::size_t dataset_size);

}  // namespace corrvae
