#include "corrvae/invhead.hpp"

#include <cmath>

namespace corrvae {

namespace {
constexpr double kLog2Pi = 1.8378770664093454836;

double norm2(const std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) s += x * x;
    return std::sqrt(s);
}
}  // namespace

SpectralState SpectralState::init(std::size_t rows, std::size_t cols, Rng& rng) {
    SpectralState s;
    s.u.resize(rows);
    s.v.resize(cols);
    for (double& x : s.u) x = rng.normal();
    for (double& x : s.v) x = rng.normal();
    double nu = norm2(s.u), nv = norm2(s.v);
    for (double& x : s.u) x /= nu;
    for (double& x : s.v) x /= nv;
    return s;
}

double power_iteration_sigma(const Tensor& w, SpectralState& state, int iters) {
    if (w.shape().size() != 2) throw ShapeError("power iteration expects a matrix");
    if (iters < 1) throw Error("power iteration needs at least one step");
    const std::size_t rows = w.dim(0), cols = w.dim(1);
    if (state.u.size() != rows || state.v.size() != cols)
        throw ShapeError("spectral state does not match the matrix");
    const auto& m = w.values();

    for (int it = 0; it < iters; ++it) {
        // v = normalize(W^T u)
        for (std::size_t j = 0; j < cols; ++j) state.v[j] = 0.0;
        for (std::size_t i = 0; i < rows; ++i) {
            const double ui = state.u[i];
            for (std::size_t j = 0; j < cols; ++j) state.v[j] += m[i * cols + j] * ui;
        }
        double nv = norm2(state.v);
        if (nv == 0.0) return 0.0;
        for (double& x : state.v) x /= nv;

        // u = normalize(W v)
        for (std::size_t i = 0; i < rows; ++i) {
            double s = 0.0;
            for (std::size_t j = 0; j < cols; ++j) s += m[i * cols + j] * state.v[j];
            state.u[i] = s;
        }
        double nu = norm2(state.u);
        if (nu == 0.0) return 0.0;
        for (double& x : state.u) x /= nu;
    }

    double sigma = 0.0;
    for (std::size_t i = 0; i < rows; ++i) {
        double s = 0.0;
        for (std::size_t j = 0; j < cols; ++j) s += m[i * cols + j] * state.v[j];
        sigma += state.u[i] * s;
    }
    return sigma;
}

Tensor spectral_normalize(const Tensor& w, SpectralState& state, int iters, double c) {
    double sigma = power_iteration_sigma(w, state, iters);
    if (sigma == 0.0) return w;
    return scale(w, c / sigma);
}

InvertibleHead::InvertibleHead(std::size_t m, std::size_t hidden, std::size_t hidden_layers,
                               double lip_target, Rng& rng)
    : m_(m), c_(lip_target) {
    if (lip_target <= 0.0 || lip_target >= 1.0)
        throw Error("InvertibleHead: lip_target must lie in (0,1)");
    std::vector<std::size_t> widths;
    widths.push_back(m);
    for (std::size_t i = 0; i < hidden_layers; ++i) widths.push_back(hidden);
    widths.push_back(m);
    for (std::size_t i = 0; i + 1 < widths.size(); ++i) {
        Layer layer;
        // zero-initialized residual output: f starts at the identity and the
        // bridging variables stay aligned with the properties they predict
        Linear lin = (i + 2 == widths.size()) ? Linear::zeros(widths[i], widths[i + 1])
                                              : Linear::init(widths[i], widths[i + 1], rng, 1.0);
        layer.w = lin.weight;
        layer.b = lin.bias;
        layer.state = SpectralState::init(widths[i], widths[i + 1], rng);
        layers_.push_back(std::move(layer));
    }
    sigma_.assign(m * m, 0.0);
    for (std::size_t i = 0; i < m; ++i) sigma_[i * m + i] = 1.0;
    normalize(50);  // burn in the power-iteration vectors on the fresh weights
    normalize_exact();
}

void InvertibleHead::set_sigma(std::vector<double> sigma_row_major) {
    if (sigma_row_major.size() != m_ * m_)
        throw ShapeError("set_sigma: covariance must be m x m");
    sigma_ = std::move(sigma_row_major);
}

namespace {

// Exact top singular value via cyclic Jacobi on the smaller Gram matrix.
double jacobi_top_sigma(const std::vector<double>& w, std::size_t rows, std::size_t cols) {
    const bool use_cols = cols <= rows;
    const std::size_t n = use_cols ? cols : rows;
    std::vector<double> g(n * n, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = i; j < n; ++j) {
            double acc = 0.0;
            if (use_cols) {
                for (std::size_t k = 0; k < rows; ++k) acc += w[k * cols + i] * w[k * cols + j];
            } else {
                for (std::size_t k = 0; k < cols; ++k) acc += w[i * cols + k] * w[j * cols + k];
            }
            g[i * n + j] = acc;
            g[j * n + i] = acc;
        }
    }
    for (int sweep = 0; sweep < 40; ++sweep) {
        double off = 0.0;
        for (std::size_t p = 0; p < n; ++p)
            for (std::size_t q = p + 1; q < n; ++q) off += g[p * n + q] * g[p * n + q];
        if (off < 1e-22) break;
        for (std::size_t p = 0; p < n; ++p) {
            for (std::size_t q = p + 1; q < n; ++q) {
                const double apq = g[p * n + q];
                if (apq == 0.0) continue;
                const double theta = 0.5 * std::atan2(2.0 * apq, g[q * n + q] - g[p * n + p]);
                const double c = std::cos(theta), s = std::sin(theta);
                for (std::size_t k = 0; k < n; ++k) {
                    const double gkp = g[k * n + p], gkq = g[k * n + q];
                    g[k * n + p] = c * gkp - s * gkq;
                    g[k * n + q] = s * gkp + c * gkq;
                }
                for (std::size_t k = 0; k < n; ++k) {
                    const double gpk = g[p * n + k], gqk = g[q * n + k];
                    g[p * n + k] = c * gpk - s * gqk;
                    g[q * n + k] = s * gpk + c * gqk;
                }
            }
        }
    }
    double top = 0.0;
    for (std::size_t i = 0; i < n; ++i) top = std::max(top, g[i * n + i]);
    return std::sqrt(std::max(0.0, top));
}

}  // namespace

void InvertibleHead::normalize(int power_iters) {
    for (Layer& layer : layers_)
        layer.sigma = power_iteration_sigma(layer.w, layer.state, power_iters);
    normalized_ = true;
}

void InvertibleHead::normalize_exact() {
    for (Layer& layer : layers_)
        layer.sigma = jacobi_top_sigma(layer.w.values(), layer.w.dim(0), layer.w.dim(1));
    normalized_ = true;
}

Tensor InvertibleHead::normalized_weight(const Layer& layer) const {
    if (layer.sigma == 0.0) return layer.w;
    return scale(layer.w, c_ / layer.sigma);
}

Tensor InvertibleHead::residual(const Tensor& w_prime) const {
    if (!normalized_) throw Error("InvertibleHead: call normalize() before forward passes");
    if (w_prime.shape().size() != 2 || w_prime.dim(1) != m_)
        throw ShapeError("InvertibleHead: expected [B," + std::to_string(m_) + "], got " +
                         shape_str(w_prime.shape()));
    Tensor h = w_prime;
    for (std::size_t i = 0; i < layers_.size(); ++i) {
        h = add(matmul(h, normalized_weight(layers_[i])), layers_[i].b);
        if (i + 1 < layers_.size()) h = tanh(h);
    }
    return h;
}

Tensor InvertibleHead::predict(const Tensor& w_prime) const {
    return add(w_prime, residual(w_prime));
}

void InvertibleHead::residual_raw(const double* in, double* out) const {
    std::vector<double> cur(in, in + m_);
    std::vector<double> next;
    for (std::size_t li = 0; li < layers_.size(); ++li) {
        const Layer& layer = layers_[li];
        const std::size_t rows = layer.w.dim(0), cols = layer.w.dim(1);
        const double s = layer.sigma == 0.0 ? 1.0 : c_ / layer.sigma;
        const auto& wv = layer.w.values();
        const auto& bv = layer.b.values();
        next.assign(cols, 0.0);
        for (std::size_t i = 0; i < rows; ++i) {
            const double x = cur[i];
            if (x == 0.0) continue;
            for (std::size_t j = 0; j < cols; ++j) next[j] += x * s * wv[i * cols + j];
        }
        for (std::size_t j = 0; j < cols; ++j) {
            next[j] += bv[j];
            if (li + 1 < layers_.size()) next[j] = std::tanh(next[j]);
        }
        cur.swap(next);
    }
    for (std::size_t j = 0; j < m_; ++j) out[j] = cur[j];
}

InvertResult InvertibleHead::invert(const std::vector<double>& y, double tol, int max_iter) const {
    if (!normalized_) throw Error("InvertibleHead: call normalize() before invert()");
    if (y.size() != m_) throw ShapeError("invert: target has wrong dimension");
    InvertResult result;
    result.w_prime = y;
    std::vector<double> fbar(m_);
    // residuals[k] is ||f(w') - y||_inf after k replacement sweeps; each
    // successive ratio is bounded by Lip(fbar).
    for (int evals = 1; evals <= max_iter; ++evals) {
        residual_raw(result.w_prime.data(), fbar.data());
        double r = 0.0;
        for (std::size_t j = 0; j < m_; ++j)
            r = std::max(r, std::abs(result.w_prime[j] + fbar[j] - y[j]));
        result.residuals.push_back(r);
        result.iterations = evals;
        if (r <= tol) {
            result.converged = true;
            return result;
        }
        for (std::size_t j = 0; j < m_; ++j) result.w_prime[j] = y[j] - fbar[j];
    }
    throw NumericError("invert: fixed-point iteration exceeded max_iter; the residual map is not "
                       "contracting to tolerance");
}

Tensor InvertibleHead::l3_loss(const Tensor& w_prime, const Tensor& y) const {
    if (y.shape() != w_prime.shape())
        throw ShapeError("l3_loss: y " + shape_str(y.shape()) + " vs w' " +
                         shape_str(w_prime.shape()));
    const double batch = static_cast<double>(w_prime.dim(0));
    Tensor err = sub(y, predict(w_prime));
    Tensor half_sq = scale(sum(square(err)), 0.5 / batch);
    return add(half_sq, Tensor::scalar(0.5 * static_cast<double>(m_) * kLog2Pi));
}

void InvertibleHead::register_params(ParamRegistry& reg, const std::string& prefix) const {
    for (std::size_t i = 0; i < layers_.size(); ++i) {
        reg.add(prefix + "." + std::to_string(i) + ".w", layers_[i].w);
        reg.add(prefix + "." + std::to_string(i) + ".b", layers_[i].b);
    }
}

}  // namespace corrvae
