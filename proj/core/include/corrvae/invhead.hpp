#pragma once

#include <vector>

#include "corrvae/nn.hpp"
#include "corrvae/rng.hpp"
#include "corrvae/tensor.hpp"

namespace corrvae {

/// Persistent power-iteration state for one weight matrix.
struct SpectralState {
    std::vector<double> u;  // left vector, length rows
    std::vector<double> v;  // right vector, length cols

    static SpectralState init(std::size_t rows, std::size_t cols, Rng& rng);
};

/// Power-iteration estimate of the top singular value; advances u/v in place.
double power_iteration_sigma(const Tensor& w, SpectralState& state, int iters);

/// c * W / sigma_hat(W). A zero matrix is returned unchanged.
Tensor spectral_normalize(const Tensor& w, SpectralState& state, int iters, double c);

struct InvertResult {
    std::vector<double> w_prime;
    int iterations = 0;
    bool converged = false;
    std::vector<double> residuals;  // sup-norm residual after each sweep
};

/// Residual property map f(w') = w' + fbar(w') with every layer of fbar
/// spectrally normalized to lip_target < 1, making fbar a contraction and
/// f exactly invertible by fixed-point iteration.
class InvertibleHead {
public:
    InvertibleHead() = default;
    InvertibleHead(std::size_t m, std::size_t hidden, std::size_t hidden_layers,
                   double lip_target, Rng& rng);

    /// Re-estimates per-layer spectral norms (warm-started power iteration)
    /// and freezes them for subsequent forward passes. Run with a large
    /// iteration count before certification or generation.
    void normalize(int power_iters);

    /// Exact per-layer top singular values (Jacobi on the Gram matrix).
    /// Used by the training loop: warm power iteration can lag the true
    /// norm past the certification bound when top singular values nearly
    /// collide, and these layers are small enough that exactness is free.
    void normalize_exact();
    bool normalized() const { return normalized_; }

    Tensor residual(const Tensor& w_prime) const;  // fbar, [B,m] -> [B,m]
    Tensor predict(const Tensor& w_prime) const;   // w' + fbar(w')

    /// Solves f(w') = y by iterating w' <- y - fbar(w') from w' = y.
    /// Throws if max_iter sweeps cannot reach tol (a Lipschitz violation).
    InvertResult invert(const std::vector<double>& y, double tol = 1e-10,
                        int max_iter = 200) const;

    /// Gaussian negative log-likelihood of y under N(f(w'), I), averaged
    /// over the batch: mean_row(0.5 ||y - f(w')||^2 + (m/2) log 2pi).
    Tensor l3_loss(const Tensor& w_prime, const Tensor& y) const;

    std::size_t property_count() const { return m_; }
    double lip_target() const { return c_; }

    /// Property noise covariance of the Gaussian likelihood. Fixed to the
    /// identity: the optimizer-equivalence property makes the maximizer set
    /// independent of it, so it exists only as a hook for tests that sweep
    /// positive-definite alternatives.
    const std::vector<double>& sigma() const { return sigma_; }
    void set_sigma(std::vector<double> sigma_row_major);
    std::size_t layer_count() const { return layers_.size(); }
    const Tensor& layer_weight(std::size_t i) const { return layers_[i].w; }
    const Tensor& layer_bias(std::size_t i) const { return layers_[i].b; }
    double layer_sigma(std::size_t i) const { return layers_[i].sigma; }
    SpectralState& layer_state(std::size_t i) { return layers_[i].state; }

    void register_params(struct ParamRegistry& reg, const std::string& prefix) const;

    /// Raw fbar evaluation on one m-vector with the frozen normalized
    /// weights; the workhorse of the fixed-point inversion loop.
    void residual_raw(const double* in, double* out) const;

private:
    struct Layer {
        Tensor w;  // [in, out]
        Tensor b;  // [out]
        SpectralState state;
        double sigma = 0.0;  // frozen estimate from the last normalize()
    };

    Tensor normalized_weight(const Layer& layer) const;

    std::vector<Layer> layers_;
    std::size_t m_ = 0;
    double c_ = 0.97;
    bool normalized_ = false;
    std::vector<double> sigma_;  // m x m, identity unless a test overrides it
};

}  // namespace corrvae
