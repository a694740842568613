#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

namespace corrvae {

struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct ShapeError : Error {
    using Error::Error;
};
struct NumericError : Error {
    using Error::Error;
};

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape);
std::string shape_str(const Shape& shape);

namespace detail {
struct TensorImpl;

struct Node {
    std::vector<std::shared_ptr<TensorImpl>> parents;
    std::function<void(const TensorImpl& out)> backward;
};

struct TensorImpl {
    Shape shape;
    std::vector<double> data;
    bool requires_grad = false;
    std::vector<double> grad;  // empty until first accumulation
    std::unique_ptr<Node> node;

    std::size_t numel() const { return data.size(); }
    void ensure_grad();
    void accumulate_grad(const std::vector<double>& g);
};
}  // namespace detail

/// Dense row-major tensor of doubles participating in a define-by-run
/// reverse-mode graph. Copying a Tensor copies the handle, not the buffer.
class Tensor {
public:
    Tensor() = default;

    static Tensor zeros(Shape shape, bool requires_grad = false);
    static Tensor ones(Shape shape, bool requires_grad = false);
    static Tensor full(Shape shape, double value, bool requires_grad = false);
    static Tensor from_data(Shape shape, std::vector<double> values, bool requires_grad = false);
    static Tensor scalar(double value, bool requires_grad = false);

    bool defined() const { return impl_ != nullptr; }
    const Shape& shape() const;
    std::size_t size() const;
    std::size_t dim(std::size_t axis) const;
    bool requires_grad() const;

    const std::vector<double>& values() const;
    /// Mutable access to the raw buffer; meant for leaf parameters between
    /// graph steps (optimizer updates, initialization).
    std::vector<double>& mutable_values();

    double item() const;  // numel()==1 only
    double at(std::size_t flat_index) const;

    const std::vector<double>& grad() const;  // empty vector if never written
    void zero_grad();

    /// Reverse pass from a scalar output. Gradients accumulate on every
    /// requires_grad tensor in the recorded graph until zeroed.
    void backward() const;

    /// Copy of the values detached from any graph.
    Tensor detach() const;

    std::shared_ptr<detail::TensorImpl> impl() const { return impl_; }

private:
    explicit Tensor(std::shared_ptr<detail::TensorImpl> impl) : impl_(std::move(impl)) {}
    std::shared_ptr<detail::TensorImpl> impl_;

    friend Tensor make_op_result(Shape shape, std::vector<double> values,
                                 std::vector<Tensor> parents,
                                 std::function<void(const detail::TensorImpl&)> backward,
                                 const char* op_name);
};

// --- supported op set ---

Tensor matmul(const Tensor& a, const Tensor& b, bool trans_a = false, bool trans_b = false);

// Elementwise; `b` may also be a scalar or a trailing-suffix shape of `a`
// (and symmetrically), in which case it is broadcast.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);

Tensor scale(const Tensor& a, double factor);

Tensor relu(const Tensor& a);
Tensor tanh(const Tensor& a);
Tensor sigmoid(const Tensor& a);
/// Numerically stable log(sigmoid(x)); the naive composition overflows.
Tensor logsigmoid(const Tensor& a);
Tensor exp(const Tensor& a);
Tensor log(const Tensor& a);
Tensor square(const Tensor& a);

Tensor sum(const Tensor& a);               // full reduction to a scalar
Tensor sum(const Tensor& a, std::size_t axis);
Tensor mean(const Tensor& a);
Tensor mean(const Tensor& a, std::size_t axis);
Tensor logsumexp(const Tensor& a, std::size_t axis);  // overflow-safe

Tensor concat(const std::vector<Tensor>& parts, std::size_t axis);
Tensor slice(const Tensor& a, std::size_t axis, std::size_t begin, std::size_t end);
Tensor reshape(const Tensor& a, Shape shape);

}  // namespace corrvae
