#include "corrvae/distributions.hpp"

#include <cmath>
#include <numbers>

namespace corrvae {

namespace {
constexpr double kLog2Pi = 1.8378770664093454836;  // log(2*pi)
}

DiagGaussian::DiagGaussian(Tensor mu_in, Tensor logvar_in)
    : mu(std::move(mu_in)), logvar(std::move(logvar_in)) {
    if (mu.shape() != logvar.shape())
        throw ShapeError("DiagGaussian: mu " + shape_str(mu.shape()) + " vs logvar " +
                         shape_str(logvar.shape()));
    for (double lv : logvar.values()) {
        if (!std::isfinite(std::exp(lv)) || std::exp(lv) <= 0.0)
            throw NumericError("DiagGaussian: exp(logvar) must be finite and positive");
    }
}

Tensor reparameterize(const DiagGaussian& g, const Tensor& eps) {
    if (eps.shape() != g.mu.shape())
        throw ShapeError("reparameterize: eps shape " + shape_str(eps.shape()) +
                         " does not match mu " + shape_str(g.mu.shape()));
    return add(g.mu, mul(exp(scale(g.logvar, 0.5)), eps));
}

Tensor kl_to_standard(const DiagGaussian& g) {
    // 0.5 * sum(mu^2 + exp(logvar) - logvar - 1)
    Tensor per_dim = sub(sub(add(square(g.mu), exp(g.logvar)), g.logvar),
                         Tensor::ones(g.mu.shape()));
    return scale(sum(per_dim), 0.5);
}

Tensor log_prob(const DiagGaussian& g, const Tensor& x) {
    if (x.shape() != g.mu.shape() && !(x.shape().size() == 2 && g.mu.shape().size() == 1 &&
                                       x.dim(1) == g.mu.dim(0)))
        throw ShapeError("log_prob: x " + shape_str(x.shape()) + " vs mu " +
                         shape_str(g.mu.shape()));
    Tensor diff = sub(x, g.mu);
    Tensor inv_var = exp(scale(g.logvar, -1.0));
    Tensor quad = mul(square(diff), inv_var);
    Tensor per_dim = add(add(quad, g.logvar), Tensor::full(quad.shape(), kLog2Pi));
    std::size_t event_axis = per_dim.shape().size() - 1;
    return scale(sum(per_dim, event_axis), -0.5);
}

Tensor pairwise_log_prob(const DiagGaussian& g, const Tensor& x) {
    if (g.mu.shape().size() != 2 || x.shape().size() != 2 || x.shape() != g.mu.shape())
        throw ShapeError("pairwise_log_prob needs matching [B,d] posteriors and samples");
    const std::size_t d = x.dim(1);

    // log N(x_i | mu_j, var_j) expands into three matmul terms plus row terms
    //   -0.5 * [ sum_d x_id^2 a_jd - 2 sum_d x_id (mu a)_jd
    //            + sum_d mu_jd^2 a_jd + sum_d logvar_jd + d log 2pi ]
    // with a = exp(-logvar).
    Tensor a = exp(scale(g.logvar, -1.0));
    Tensor t1 = matmul(square(x), a, false, true);          // [B,B]
    Tensor t2 = matmul(x, mul(g.mu, a), false, true);       // [B,B]
    Tensor t3 = sum(mul(square(g.mu), a), 1);               // [B], indexed by j
    Tensor t4 = sum(g.logvar, 1);                           // [B], indexed by j
    Tensor row_terms = add(t3, t4);                         // broadcast over columns
    Tensor quad = add(sub(t1, scale(t2, 2.0)), row_terms);
    Tensor with_const = add(quad, Tensor::scalar(static_cast<double>(d) * kLog2Pi));
    return scale(with_const, -0.5);
}

TotalCorrelation total_correlation_terms(const Tensor& w_samples, const Tensor& z_samples,
                                         const DiagGaussian& w_posteriors,
                                         const DiagGaussian& z_posteriors,
                                         std::size_t dataset_size) {
    if (w_samples.shape().size() != 2 || z_samples.shape().size() != 2)
        throw ShapeError("total_correlation_terms expects [B,d] samples");
    const std::size_t batch = w_samples.dim(0);
    if (batch < 2) throw Error("total_correlation_terms: batch size must be >= 2");
    if (z_samples.dim(0) != batch) throw ShapeError("w and z batch sizes disagree");
    if (dataset_size == 0) throw Error("total_correlation_terms: dataset_size must be positive");

    const double log_bn =
        std::log(static_cast<double>(batch)) + std::log(static_cast<double>(dataset_size));
    Tensor log_bn_t = Tensor::scalar(log_bn);

    Tensor lp_w = pairwise_log_prob(w_posteriors, w_samples);  // [B,B]
    Tensor lp_z = pairwise_log_prob(z_posteriors, z_samples);  // [B,B]

    Tensor log_qzw = sub(logsumexp(add(lp_w, lp_z), 1), log_bn_t);  // [B]
    Tensor log_qw = sub(logsumexp(lp_w, 1), log_bn_t);
    Tensor log_qz = sub(logsumexp(lp_z, 1), log_bn_t);

    // sum_k log q(w_k), one [B,B] pass per latent coordinate
    const std::size_t d_w = w_samples.dim(1);
    Tensor log_prod_w;
    for (std::size_t k = 0; k < d_w; ++k) {
        DiagGaussian marginal(slice(w_posteriors.mu, 1, k, k + 1),
                              slice(w_posteriors.logvar, 1, k, k + 1));
        Tensor lp_k = pairwise_log_prob(marginal, slice(w_samples, 1, k, k + 1));
        Tensor log_qwk = sub(logsumexp(lp_k, 1), log_bn_t);
        log_prod_w = (k == 0) ? log_qwk : add(log_prod_w, log_qwk);
    }

    TotalCorrelation out{mean(sub(sub(log_qzw, log_qz), log_qw)),
                         mean(sub(log_qw, log_prod_w))};
    return out;
}

}  // namespace corrvae
