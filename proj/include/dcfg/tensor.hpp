#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace dcfg {

using Shape = std::vector<int>;

/// Base of every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Shape, range or configuration contract violated by a caller.
class ShapeError : public Error {
public:
    using Error::Error;
};

/// NaN/Inf produced, or an optimisation diverged.
class NumericError : public Error {
public:
    using Error::Error;
};

/// Missing, unreadable or corrupt files.
class IoError : public Error {
public:
    using Error::Error;
};

std::string shape_str(const Shape& shape);
std::size_t shape_numel(const Shape& shape);

namespace detail {
struct TensorImpl;
struct Node;
}  // namespace detail

/// Dense double-precision tensor handle with an optional gradient slot.
///
/// Copies share storage. Values are immutable once an op has produced them;
/// only leaves (parameters, inputs) may be written through mutable_data(),
/// which the optimiser and the finite-difference checker rely on.
class Tensor {
public:
    Tensor() = default;

    static Tensor zeros(const Shape& shape, bool requires_grad = false);
    static Tensor full(const Shape& shape, double value, bool requires_grad = false);
    static Tensor from(const Shape& shape, std::vector<double> values, bool requires_grad = false);
    static Tensor scalar(double value, bool requires_grad = false);

    bool defined() const { return impl_ != nullptr; }
    const Shape& shape() const;
    int rank() const { return static_cast<int>(shape().size()); }
    int dim(int axis) const;
    std::size_t numel() const;

    std::span<const double> data() const;
    /// Writable view; rejected for tensors produced by a recorded op.
    std::span<double> mutable_data();
    double item() const;
    double operator[](std::size_t flat) const { return data()[flat]; }
    /// [C,H,W] accessor.
    double at(int c, int y, int x) const;

    bool requires_grad() const;
    Tensor& set_requires_grad(bool value);
    bool is_leaf() const;

    bool has_grad() const;
    std::span<const double> grad() const;
    void zero_grad();

    /// Reverse-mode pass from this scalar. Fills the grad slot of every
    /// reachable requires_grad tensor (accumulating). A graph can be
    /// back-propagated once.
    void backward() const;

    /// Deep copy of values only, detached from any graph.
    Tensor detach() const;

    /// Same storage identity?
    bool same(const Tensor& other) const { return impl_ == other.impl_; }

private:
    explicit Tensor(std::shared_ptr<detail::TensorImpl> impl) : impl_(std::move(impl)) {}
    std::shared_ptr<detail::TensorImpl> impl_;

    friend struct OpRecorder;
};

/// Gradient callback of a recorded op: receives d(loss)/d(output) and
/// returns one gradient buffer per input (empty vector = no contribution).
using BackwardFn = std::function<std::vector<std::vector<double>>(std::span<const double> grad_out)>;

/// Entry point for ops: builds the output tensor, checks that it is finite
/// and, when any input requires grad and recording is enabled, appends a
/// node to the graph.
struct OpRecorder {
    static Tensor make(const char* op_name, const Shape& shape, std::vector<double> values,
                       std::vector<Tensor> inputs, BackwardFn backward);
    static bool any_requires_grad(std::initializer_list<const Tensor*> inputs);
    static bool any_requires_grad(const std::vector<Tensor>& inputs);
};

/// Is graph recording currently enabled on this thread?
bool grad_enabled();

/// Disables graph recording on the current thread for its lifetime.
class NoGradGuard {
public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool previous_;
};

}  // namespace dcfg
