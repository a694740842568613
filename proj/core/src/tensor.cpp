#include "corrvae/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>
#include <unordered_set>

namespace corrvae {

std::size_t numel(const Shape& shape) {
    std::size_t n = 1;
    for (std::size_t d : shape) n *= d;
    return n;
}

std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << ",";
        os << shape[i];
    }
    os << "]";
    return os.str();
}

namespace detail {

void TensorImpl::ensure_grad() {
    if (grad.empty()) grad.assign(data.size(), 0.0);
}

void TensorImpl::accumulate_grad(const std::vector<double>& g) {
    ensure_grad();
    for (std::size_t i = 0; i < grad.size(); ++i) grad[i] += g[i];
}

}  // namespace detail

using detail::Node;
using detail::TensorImpl;

namespace {

std::shared_ptr<TensorImpl> new_impl(Shape shape, std::vector<double> values, bool requires_grad) {
    if (shape.empty()) throw ShapeError("tensor shape must be non-empty");
    std::size_t n = numel(shape);
    if (n == 0) throw ShapeError("tensor shape has a zero dimension: " + shape_str(shape));
    if (values.size() != n)
        throw ShapeError("data length " + std::to_string(values.size()) + " does not match shape " +
                         shape_str(shape));
    auto impl = std::make_shared<TensorImpl>();
    impl->shape = std::move(shape);
    impl->data = std::move(values);
    impl->requires_grad = requires_grad;
    return impl;
}

void check_finite(const char* op, const std::vector<double>& values) {
    for (double v : values) {
        if (!std::isfinite(v))
            throw NumericError(std::string("op '") + op + "' produced a non-finite value");
    }
}

}  // namespace

Tensor make_op_result(Shape shape, std::vector<double> values, std::vector<Tensor> parents,
                      std::function<void(const TensorImpl&)> backward, const char* op_name) {
    check_finite(op_name, values);
    bool needs_grad = false;
    for (const Tensor& p : parents) needs_grad = needs_grad || p.requires_grad();
    auto impl = new_impl(std::move(shape), std::move(values), needs_grad);
    if (needs_grad) {
        auto node = std::make_unique<Node>();
        for (const Tensor& p : parents) node->parents.push_back(p.impl());
        node->backward = std::move(backward);
        impl->node = std::move(node);
    }
    return Tensor(std::move(impl));
}

// --- construction and access ---

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
    return full(std::move(shape), 0.0, requires_grad);
}

Tensor Tensor::ones(Shape shape, bool requires_grad) {
    return full(std::move(shape), 1.0, requires_grad);
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
    std::size_t n = numel(shape);
    return Tensor(new_impl(std::move(shape), std::vector<double>(n, value), requires_grad));
}

Tensor Tensor::from_data(Shape shape, std::vector<double> values, bool requires_grad) {
    return Tensor(new_impl(std::move(shape), std::move(values), requires_grad));
}

Tensor Tensor::scalar(double value, bool requires_grad) {
    return Tensor(new_impl({1}, {value}, requires_grad));
}

const Shape& Tensor::shape() const {
    if (!impl_) throw Error("use of an empty tensor");
    return impl_->shape;
}

std::size_t Tensor::size() const { return shape().empty() ? 0 : impl_->numel(); }

std::size_t Tensor::dim(std::size_t axis) const {
    const Shape& s = shape();
    if (axis >= s.size()) throw ShapeError("axis out of range");
    return s[axis];
}

bool Tensor::requires_grad() const { return impl_ && impl_->requires_grad; }

const std::vector<double>& Tensor::values() const {
    if (!impl_) throw Error("use of an empty tensor");
    return impl_->data;
}

std::vector<double>& Tensor::mutable_values() {
    if (!impl_) throw Error("use of an empty tensor");
    return impl_->data;
}

double Tensor::item() const {
    if (size() != 1) throw ShapeError("item() requires a single-element tensor, got " + shape_str(shape()));
    return impl_->data[0];
}

double Tensor::at(std::size_t flat_index) const {
    const auto& v = values();
    if (flat_index >= v.size()) throw ShapeError("flat index out of range");
    return v[flat_index];
}

const std::vector<double>& Tensor::grad() const {
    if (!impl_) throw Error("use of an empty tensor");
    return impl_->grad;
}

void Tensor::zero_grad() {
    if (impl_) impl_->grad.assign(impl_->data.size(), 0.0);
}

Tensor Tensor::detach() const {
    return Tensor(new_impl(shape(), values(), false));
}

// --- backward engine ---

void Tensor::backward() const {
    if (!impl_) throw Error("backward() on an empty tensor");
    if (impl_->numel() != 1) throw ShapeError("backward() requires a scalar output");
    if (!impl_->node) throw Error("backward() on a tensor outside a recorded graph");

    // Topological order over impls that carry graph nodes.
    std::vector<TensorImpl*> order;
    std::unordered_set<TensorImpl*> visited;
    std::vector<std::pair<TensorImpl*, std::size_t>> stack;
    stack.emplace_back(impl_.get(), 0);
    visited.insert(impl_.get());
    while (!stack.empty()) {
        auto& [cur, idx] = stack.back();
        if (!cur->node || idx >= cur->node->parents.size()) {
            order.push_back(cur);
            stack.pop_back();
            continue;
        }
        TensorImpl* next = cur->node->parents[idx++].get();
        if (next->node && !visited.count(next)) {
            visited.insert(next);
            stack.emplace_back(next, 0);
        }
    }

    // Node-bearing tensors are intermediates: their grads are scratch space
    // for this pass only. Leaves (no node) retain accumulated gradients
    // across calls until zeroed.
    for (TensorImpl* t : order) t->grad.assign(t->data.size(), 0.0);
    impl_->grad[0] = 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        TensorImpl* t = *it;
        if (t->node && !t->grad.empty()) t->node->backward(*t);
    }
}

// --- elementwise binary with limited broadcasting ---

namespace {

// b broadcasts over a when it is a scalar or an exact trailing suffix of a's
// shape; then index_b = flat_index % b.numel().
bool broadcasts_over(const Shape& a, const Shape& b) {
    if (b.size() == 1 && b[0] == 1) return true;
    if (b.size() > a.size()) return false;
    for (std::size_t i = 0; i < b.size(); ++i) {
        if (b[b.size() - 1 - i] != a[a.size() - 1 - i]) return false;
    }
    return true;
}

// Reduce a full-shape gradient onto the broadcast operand.
std::vector<double> reduce_to(const std::vector<double>& g, std::size_t small_n) {
    std::vector<double> out(small_n, 0.0);
    for (std::size_t i = 0; i < g.size(); ++i) out[i % small_n] += g[i];
    return out;
}

enum class BinKind { Add, Sub, Mul };

Tensor binary_op(const Tensor& a, const Tensor& b, BinKind kind, const char* name) {
    Shape out_shape;
    if (a.shape() == b.shape() || broadcasts_over(a.shape(), b.shape())) {
        out_shape = a.shape();
    } else if (broadcasts_over(b.shape(), a.shape())) {
        out_shape = b.shape();
    } else {
        throw ShapeError(std::string(name) + ": incompatible shapes " + shape_str(a.shape()) +
                         " vs " + shape_str(b.shape()));
    }

    const auto& av = a.values();
    const auto& bv = b.values();
    const std::size_t an = av.size(), bn = bv.size();
    const std::size_t on = numel(out_shape);

    std::vector<double> out(on);
    for (std::size_t i = 0; i < on; ++i) {
        double x = av[i % an];
        double y = bv[i % bn];
        switch (kind) {
            case BinKind::Add: out[i] = x + y; break;
            case BinKind::Sub: out[i] = x - y; break;
            case BinKind::Mul: out[i] = x * y; break;
        }
    }

    auto ai = a.impl();
    auto bi = b.impl();
    auto backward = [ai, bi, kind, an, bn, on](const TensorImpl& o) {
        const auto& g = o.grad;
        if (ai->requires_grad) {
            std::vector<double> piece(on);
            for (std::size_t i = 0; i < on; ++i)
                piece[i] = (kind == BinKind::Mul) ? g[i] * bi->data[i % bn] : g[i];
            ai->accumulate_grad(an == on ? piece : reduce_to(piece, an));
        }
        if (bi->requires_grad) {
            std::vector<double> piece(on);
            for (std::size_t i = 0; i < on; ++i) {
                double f = (kind == BinKind::Mul) ? ai->data[i % an]
                                                  : (kind == BinKind::Sub ? -1.0 : 1.0);
                piece[i] = g[i] * f;
            }
            bi->accumulate_grad(bn == on ? piece : reduce_to(piece, bn));
        }
    };

    return make_op_result(out_shape, std::move(out), {a, b}, std::move(backward), name);
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) { return binary_op(a, b, BinKind::Add, "add"); }
Tensor sub(const Tensor& a, const Tensor& b) { return binary_op(a, b, BinKind::Sub, "sub"); }
Tensor mul(const Tensor& a, const Tensor& b) { return binary_op(a, b, BinKind::Mul, "mul"); }

Tensor scale(const Tensor& a, double factor) {
    std::vector<double> out(a.values());
    for (double& v : out) v *= factor;
    auto ai = a.impl();
    auto backward = [ai, factor](const TensorImpl& o) {
        if (!ai->requires_grad) return;
        std::vector<double> g(o.grad);
        for (double& v : g) v *= factor;
        ai->accumulate_grad(g);
    };
    return make_op_result(a.shape(), std::move(out), {a}, std::move(backward), "scale");
}

// --- elementwise unary ---

namespace {

Tensor unary_op(const Tensor& a, const char* name, double (*fwd)(double),
                double (*bwd)(double x, double y)) {
    const auto& av = a.values();
    std::vector<double> out(av.size());
    for (std::size_t i = 0; i < av.size(); ++i) out[i] = fwd(av[i]);
    auto ai = a.impl();
    auto backward = [ai, bwd](const TensorImpl& o) {
        if (!ai->requires_grad) return;
        std::vector<double> g(o.grad.size());
        for (std::size_t i = 0; i < g.size(); ++i) g[i] = o.grad[i] * bwd(ai->data[i], o.data[i]);
        ai->accumulate_grad(g);
    };
    return make_op_result(a.shape(), std::move(out), {a}, std::move(backward), name);
}

double stable_sigmoid(double x) {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    double e = std::exp(x);
    return e / (1.0 + e);
}

double stable_logsigmoid(double x) {
    // log(1/(1+e^-x)) without overflow on either tail
    return x >= 0.0 ? -std::log1p(std::exp(-x)) : x - std::log1p(std::exp(x));
}

}  // namespace

Tensor relu(const Tensor& a) {
    return unary_op(
        a, "relu", [](double x) { return x > 0.0 ? x : 0.0; },
        [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Tensor tanh(const Tensor& a) {
    return unary_op(
        a, "tanh", [](double x) { return std::tanh(x); },
        [](double, double y) { return 1.0 - y * y; });
}

Tensor sigmoid(const Tensor& a) {
    return unary_op(
        a, "sigmoid", [](double x) { return stable_sigmoid(x); },
        [](double, double y) { return y * (1.0 - y); });
}

Tensor logsigmoid(const Tensor& a) {
    return unary_op(
        a, "logsigmoid", [](double x) { return stable_logsigmoid(x); },
        [](double x, double) { return 1.0 - stable_sigmoid(x); });
}

Tensor exp(const Tensor& a) {
    return unary_op(
        a, "exp", [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

Tensor log(const Tensor& a) {
    for (double v : a.values()) {
        if (v <= 0.0) throw NumericError("log of a non-positive input");
    }
    return unary_op(
        a, "log", [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

Tensor square(const Tensor& a) {
    return unary_op(
        a, "square", [](double x) { return x * x; }, [](double x, double) { return 2.0 * x; });
}

// --- matmul ---

namespace {

std::vector<double> transposed(const std::vector<double>& m, std::size_t rows, std::size_t cols) {
    std::vector<double> t(m.size());
    for (std::size_t i = 0; i < rows; ++i)
        for (std::size_t j = 0; j < cols; ++j) t[j * rows + i] = m[i * cols + j];
    return t;
}

// C[M,N] (+)= A[M,K] * B[K,N], row-major
void gemm_nn(const double* a, const double* b, double* c, std::size_t M, std::size_t K,
             std::size_t N) {
    for (std::size_t i = 0; i < M; ++i) {
        const double* arow = a + i * K;
        double* crow = c + i * N;
        for (std::size_t k = 0; k < K; ++k) {
            const double aik = arow[k];
            if (aik == 0.0) continue;
            const double* brow = b + k * N;
            for (std::size_t j = 0; j < N; ++j) crow[j] += aik * brow[j];
        }
    }
}

std::vector<double> matmul_raw(const std::vector<double>& a, std::size_t ar, std::size_t ac,
                               bool ta, const std::vector<double>& b, std::size_t br,
                               std::size_t bc, bool tb) {
    const std::vector<double>& ae = ta ? transposed(a, ar, ac) : a;
    const std::vector<double>& be = tb ? transposed(b, br, bc) : b;
    std::size_t M = ta ? ac : ar;
    std::size_t K = ta ? ar : ac;
    std::size_t Kb = tb ? bc : br;
    std::size_t N = tb ? br : bc;
    if (K != Kb) throw ShapeError("matmul: inner dimensions disagree");
    std::vector<double> out(M * N, 0.0);
    gemm_nn(ae.data(), be.data(), out.data(), M, K, N);
    return out;
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b, bool trans_a, bool trans_b) {
    if (a.shape().size() != 2 || b.shape().size() != 2)
        throw ShapeError("matmul expects 2-D tensors, got " + shape_str(a.shape()) + " and " +
                         shape_str(b.shape()));
    const std::size_t ar = a.dim(0), ac = a.dim(1);
    const std::size_t br = b.dim(0), bc = b.dim(1);
    const std::size_t M = trans_a ? ac : ar;
    const std::size_t K = trans_a ? ar : ac;
    const std::size_t Kb = trans_b ? bc : br;
    const std::size_t N = trans_b ? br : bc;
    if (K != Kb)
        throw ShapeError("matmul: inner dimensions disagree: " + shape_str(a.shape()) +
                         (trans_a ? "^T" : "") + " x " + shape_str(b.shape()) +
                         (trans_b ? "^T" : ""));

    std::vector<double> out = matmul_raw(a.values(), ar, ac, trans_a, b.values(), br, bc, trans_b);

    auto ai = a.impl();
    auto bi = b.impl();
    auto backward = [ai, bi, ar, ac, br, bc, trans_a, trans_b, M, N](const TensorImpl& o) {
        // dA and dB from dC with the effective orientations undone.
        const auto& g = o.grad;
        if (ai->requires_grad) {
            std::vector<double> da;
            if (!trans_a) {
                // dA = dC * B_eff^T
                da = matmul_raw(g, M, N, false, bi->data, br, bc, !trans_b);
            } else {
                // A used transposed: dA = (dC * B_eff^T)^T = B_eff * dC^T
                da = matmul_raw(bi->data, br, bc, trans_b, g, M, N, true);
            }
            ai->accumulate_grad(da);
        }
        if (bi->requires_grad) {
            std::vector<double> db;
            if (!trans_b) {
                // dB = A_eff^T * dC
                db = matmul_raw(ai->data, ar, ac, !trans_a, g, M, N, false);
            } else {
                // B used transposed: dB = dC^T * A_eff
                db = matmul_raw(g, M, N, true, ai->data, ar, ac, trans_a);
            }
            bi->accumulate_grad(db);
        }
    };

    return make_op_result({M, N}, std::move(out), {a, b}, std::move(backward), "matmul");
}

// --- reductions ---

namespace {

struct AxisView {
    std::size_t outer, n, inner;
};

AxisView axis_view(const Shape& shape, std::size_t axis) {
    if (axis >= shape.size()) throw ShapeError("reduction axis out of range");
    AxisView v{1, shape[axis], 1};
    for (std::size_t i = 0; i < axis; ++i) v.outer *= shape[i];
    for (std::size_t i = axis + 1; i < shape.size(); ++i) v.inner *= shape[i];
    return v;
}

Shape reduced_shape(const Shape& shape, std::size_t axis) {
    Shape out;
    for (std::size_t i = 0; i < shape.size(); ++i)
        if (i != axis) out.push_back(shape[i]);
    if (out.empty()) out.push_back(1);
    return out;
}

}  // namespace

Tensor sum(const Tensor& a) {
    double total = 0.0;
    for (double v : a.values()) total += v;
    auto ai = a.impl();
    auto backward = [ai](const TensorImpl& o) {
        if (!ai->requires_grad) return;
        std::vector<double> g(ai->data.size(), o.grad[0]);
        ai->accumulate_grad(g);
    };
    return make_op_result({1}, {total}, {a}, std::move(backward), "sum");
}

Tensor sum(const Tensor& a, std::size_t axis) {
    AxisView v = axis_view(a.shape(), axis);
    std::vector<double> out(v.outer * v.inner, 0.0);
    const auto& av = a.values();
    for (std::size_t o = 0; o < v.outer; ++o)
        for (std::size_t k = 0; k < v.n; ++k)
            for (std::size_t i = 0; i < v.inner; ++i)
                out[o * v.inner + i] += av[(o * v.n + k) * v.inner + i];
    auto ai = a.impl();
    auto backward = [ai, v](const TensorImpl& o) {
        if (!ai->requires_grad) return;
        std::vector<double> g(ai->data.size());
        for (std::size_t ou = 0; ou < v.outer; ++ou)
            for (std::size_t k = 0; k < v.n; ++k)
                for (std::size_t i = 0; i < v.inner; ++i)
                    g[(ou * v.n + k) * v.inner + i] = o.grad[ou * v.inner + i];
        ai->accumulate_grad(g);
    };
    return make_op_result(reduced_shape(a.shape(), axis), std::move(out), {a}, std::move(backward),
                          "sum_axis");
}

Tensor mean(const Tensor& a) { return scale(sum(a), 1.0 / static_cast<double>(a.size())); }

Tensor mean(const Tensor& a, std::size_t axis) {
    return scale(sum(a, axis), 1.0 / static_cast<double>(a.dim(axis)));
}

Tensor logsumexp(const Tensor& a, std::size_t axis) {
    AxisView v = axis_view(a.shape(), axis);
    const auto& av = a.values();
    std::vector<double> out(v.outer * v.inner);
    for (std::size_t o = 0; o < v.outer; ++o) {
        for (std::size_t i = 0; i < v.inner; ++i) {
            double m = -std::numeric_limits<double>::infinity();
            for (std::size_t k = 0; k < v.n; ++k)
                m = std::max(m, av[(o * v.n + k) * v.inner + i]);
            double s = 0.0;
            for (std::size_t k = 0; k < v.n; ++k)
                s += std::exp(av[(o * v.n + k) * v.inner + i] - m);
            out[o * v.inner + i] = m + std::log(s);
        }
    }
    auto ai = a.impl();
    auto backward = [ai, v](const TensorImpl& o) {
        if (!ai->requires_grad) return;
        std::vector<double> g(ai->data.size());
        for (std::size_t ou = 0; ou < v.outer; ++ou)
            for (std::size_t k = 0; k < v.n; ++k)
                for (std::size_t i = 0; i < v.inner; ++i) {
                    std::size_t src = ou * v.inner + i;
                    std::size_t dst = (ou * v.n + k) * v.inner + i;
                    g[dst] = o.grad[src] * std::exp(ai->data[dst] - o.data[src]);
                }
        ai->accumulate_grad(g);
    };
    return make_op_result(reduced_shape(a.shape(), axis), std::move(out), {a}, std::move(backward),
                          "logsumexp");
}

// --- structural ops ---

Tensor concat(const std::vector<Tensor>& parts, std::size_t axis) {
    if (parts.empty()) throw ShapeError("concat of zero tensors");
    const Shape& first = parts[0].shape();
    if (axis >= first.size()) throw ShapeError("concat axis out of range");
    std::size_t total_axis = 0;
    for (const Tensor& p : parts) {
        const Shape& s = p.shape();
        if (s.size() != first.size()) throw ShapeError("concat rank mismatch");
        for (std::size_t i = 0; i < s.size(); ++i)
            if (i != axis && s[i] != first[i])
                throw ShapeError("concat: shapes differ outside the concat axis");
        total_axis += s[axis];
    }
    Shape out_shape = first;
    out_shape[axis] = total_axis;

    AxisView ov = axis_view(out_shape, axis);
    std::vector<double> out(numel(out_shape));
    std::size_t offset = 0;
    for (const Tensor& p : parts) {
        AxisView pv = axis_view(p.shape(), axis);
        const auto& pvals = p.values();
        for (std::size_t o = 0; o < pv.outer; ++o)
            for (std::size_t k = 0; k < pv.n; ++k)
                for (std::size_t i = 0; i < pv.inner; ++i)
                    out[(o * ov.n + offset + k) * ov.inner + i] =
                        pvals[(o * pv.n + k) * pv.inner + i];
        offset += pv.n;
    }

    std::vector<std::shared_ptr<TensorImpl>> impls;
    std::vector<std::size_t> sizes;
    for (const Tensor& p : parts) {
        impls.push_back(p.impl());
        sizes.push_back(p.dim(axis));
    }
    auto backward = [impls, sizes, ov](const TensorImpl& o) {
        std::size_t off = 0;
        for (std::size_t pi = 0; pi < impls.size(); ++pi) {
            const auto& t = impls[pi];
            std::size_t n = sizes[pi];
            if (t->requires_grad) {
                std::vector<double> g(t->data.size());
                std::size_t inner = ov.inner;
                std::size_t outer = ov.outer;
                for (std::size_t ou = 0; ou < outer; ++ou)
                    for (std::size_t k = 0; k < n; ++k)
                        for (std::size_t i = 0; i < inner; ++i)
                            g[(ou * n + k) * inner + i] =
                                o.grad[(ou * ov.n + off + k) * inner + i];
                t->accumulate_grad(g);
            }
            off += n;
        }
    };
    return make_op_result(out_shape, std::move(out), parts, std::move(backward), "concat");
}

Tensor slice(const Tensor& a, std::size_t axis, std::size_t begin, std::size_t end) {
    const Shape& s = a.shape();
    if (axis >= s.size()) throw ShapeError("slice axis out of range");
    if (begin >= end || end > s[axis]) throw ShapeError("slice bounds out of range");
    AxisView v = axis_view(s, axis);
    std::size_t n = end - begin;
    Shape out_shape = s;
    out_shape[axis] = n;
    std::vector<double> out(numel(out_shape));
    const auto& av = a.values();
    for (std::size_t o = 0; o < v.outer; ++o)
        for (std::size_t k = 0; k < n; ++k)
            for (std::size_t i = 0; i < v.inner; ++i)
                out[(o * n + k) * v.inner + i] = av[(o * v.n + begin + k) * v.inner + i];
    auto ai = a.impl();
    auto backward = [ai, v, begin, n](const TensorImpl& o) {
        if (!ai->requires_grad) return;
        std::vector<double> g(ai->data.size(), 0.0);
        for (std::size_t ou = 0; ou < v.outer; ++ou)
            for (std::size_t k = 0; k < n; ++k)
                for (std::size_t i = 0; i < v.inner; ++i)
                    g[(ou * v.n + begin + k) * v.inner + i] = o.grad[(ou * n + k) * v.inner + i];
        ai->accumulate_grad(g);
    };
    return make_op_result(out_shape, std::move(out), {a}, std::move(backward), "slice");
}

Tensor reshape(const Tensor& a, Shape shape) {
    if (numel(shape) != a.size())
        throw ShapeError("reshape to " + shape_str(shape) + " changes element count");
    auto ai = a.impl();
    auto backward = [ai](const TensorImpl& o) {
        if (!ai->requires_grad) return;
        ai->accumulate_grad(o.grad);
    };
    return make_op_result(std::move(shape), a.values(), {a}, std::move(backward), "reshape");
}

}  // namespace corrvae
