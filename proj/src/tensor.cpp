#include "dcfg/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <sstream>
#include <unordered_set>

namespace dcfg {

namespace detail {

struct Node {
    std::uint64_t seq = 0;
    const char* name = "";
    std::vector<std::shared_ptr<TensorImpl>> inputs;
    BackwardFn backward;
    bool consumed = false;
};

struct TensorImpl {
    Shape shape;
    std::vector<double> data;
    std::vector<double> grad;  // empty until first accumulation
    bool requires_grad = false;
    std::shared_ptr<Node> grad_fn;
};

}  // namespace detail

namespace {

std::atomic<std::uint64_t> g_next_seq{1};
thread_local bool t_grad_enabled = true;

void validate_shape(const Shape& shape) {
    if (shape.empty()) {
        throw ShapeError("tensor shape must have at least one extent");
    }
    for (int extent : shape) {
        if (extent <= 0) {
            throw ShapeError("tensor extents must be positive, got " + shape_str(shape));
        }
    }
}

void require_finite(const char* op_name, std::span<const double> values) {
    for (double v : values) {
        if (!std::isfinite(v)) {
            throw NumericError(std::string("non-finite value produced by ") + op_name);
        }
    }
}

}  // namespace

std::string shape_str(const Shape& shape) {
    std::ostringstream out;
    out << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        out << (i ? "," : "") << shape[i];
    }
    out << ']';
    return out.str();
}

std::size_t shape_numel(const Shape& shape) {
    std::size_t n = 1;
    for (int e : shape) {
        n *= static_cast<std::size_t>(e);
    }
    return n;
}

bool grad_enabled() { return t_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(t_grad_enabled) { t_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { t_grad_enabled = previous_; }

Tensor Tensor::zeros(const Shape& shape, bool requires_grad) { return full(shape, 0.0, requires_grad); }

Tensor Tensor::full(const Shape& shape, double value, bool requires_grad) {
    validate_shape(shape);
    return from(shape, std::vector<double>(shape_numel(shape), value), requires_grad);
}

Tensor Tensor::from(const Shape& shape, std::vector<double> values, bool requires_grad) {
    validate_shape(shape);
    if (values.size() != shape_numel(shape)) {
        throw ShapeError("value count " + std::to_string(values.size()) + " does not match shape " +
                         shape_str(shape));
    }
    require_finite("Tensor::from", values);
    auto impl = std::make_shared<detail::TensorImpl>();
    impl->shape = shape;
    impl->data = std::move(values);
    impl->requires_grad = requires_grad;
    return Tensor(std::move(impl));
}

Tensor Tensor::scalar(double value, bool requires_grad) { return from({1}, {value}, requires_grad); }

const Shape& Tensor::shape() const {
    if (!impl_) {
        throw ShapeError("use of undefined tensor");
    }
    return impl_->shape;
}

int Tensor::dim(int axis) const {
    const Shape& s = shape();
    if (axis < 0) {
        axis += static_cast<int>(s.size());
    }
    if (axis < 0 || axis >= static_cast<int>(s.size())) {
        throw ShapeError("axis out of range for shape " + shape_str(s));
    }
    return s[static_cast<std::size_t>(axis)];
}

std::size_t Tensor::numel() const { return shape_numel(shape()); }

std::span<const double> Tensor::data() const {
    shape();
    return impl_->data;
}

std::span<double> Tensor::mutable_data() {
    shape();
    if (impl_->grad_fn) {
        throw ShapeError("cannot write to a tensor produced by a recorded op");
    }
    return impl_->data;
}

double Tensor::item() const {
    if (numel() != 1) {
        throw ShapeError("item() on non-scalar tensor " + shape_str(shape()));
    }
    return impl_->data[0];
}

double Tensor::at(int c, int y, int x) const {
    const Shape& s = shape();
    if (s.size() != 3) {
        throw ShapeError("at(c,y,x) needs a rank-3 tensor");
    }
    return impl_->data[(static_cast<std::size_t>(c) * s[1] + y) * s[2] + x];
}

bool Tensor::requires_grad() const { return impl_ && impl_->requires_grad; }

Tensor& Tensor::set_requires_grad(bool value) {
    shape();
    if (impl_->grad_fn) {
        throw ShapeError("requires_grad can only be set on leaf tensors");
    }
    impl_->requires_grad = value;
    return *this;
}

bool Tensor::is_leaf() const { return impl_ && !impl_->grad_fn; }

bool Tensor::has_grad() const { return impl_ && !impl_->grad.empty(); }

std::span<const double> Tensor::grad() const {
    if (!has_grad()) {
        throw ShapeError("tensor has no gradient");
    }
    return impl_->grad;
}

void Tensor::zero_grad() {
    if (impl_) {
        impl_->grad.clear();
    }
}

Tensor Tensor::detach() const { return from(shape(), impl_->data, false); }

void Tensor::backward() const {
    if (numel() != 1) {
        throw ShapeError("backward() requires a scalar loss, got shape " + shape_str(shape()));
    }
    if (!impl_->grad_fn) {
        throw ShapeError("backward() on a tensor that was not produced by recorded ops");
    }
    if (impl_->grad_fn->consumed) {
        throw ShapeError("backward() called twice on the same graph");
    }

    // Collect every recorded tensor reachable from the loss.
    std::vector<detail::TensorImpl*> order;
    std::unordered_set<detail::TensorImpl*> seen;
    std::vector<detail::TensorImpl*> stack{impl_.get()};
    seen.insert(impl_.get());
    while (!stack.empty()) {
        detail::TensorImpl* cur = stack.back();
        stack.pop_back();
        if (!cur->grad_fn) {
            continue;
        }
        if (cur->grad_fn->consumed) {
            throw ShapeError("backward() reached a graph segment that was already back-propagated");
        }
        order.push_back(cur);
        for (const auto& in : cur->grad_fn->inputs) {
            if (in && seen.insert(in.get()).second) {
                stack.push_back(in.get());
            }
        }
    }
    // Creation order is a topological order; walk it in reverse.
    std::sort(order.begin(), order.end(), [](const detail::TensorImpl* a, const detail::TensorImpl* b) {
        return a->grad_fn->seq > b->grad_fn->seq;
    });

    impl_->grad.assign(1, 1.0);
    for (detail::TensorImpl* cur : order) {
        detail::Node& node = *cur->grad_fn;
        if (!cur->grad.empty()) {
            std::vector<std::vector<double>> in_grads = node.backward(cur->grad);
            for (std::size_t i = 0; i < node.inputs.size() && i < in_grads.size(); ++i) {
                detail::TensorImpl* in = node.inputs[i].get();
                std::vector<double>& g = in_grads[i];
                if (!in || !in->requires_grad || g.empty()) {
                    continue;
                }
                if (g.size() != in->data.size()) {
                    throw ShapeError(std::string("gradient size mismatch in backward of ") + node.name);
                }
                if (in->grad.empty()) {
                    in->grad.assign(in->data.size(), 0.0);
                }
                for (std::size_t k = 0; k < g.size(); ++k) {
                    in->grad[k] += g[k];
                }
            }
        }
        node.consumed = true;
        node.backward = nullptr;
    }
}

bool OpRecorder::any_requires_grad(std::initializer_list<const Tensor*> inputs) {
    for (const Tensor* t : inputs) {
        if (t && t->requires_grad()) {
            return true;
        }
    }
    return false;
}

bool OpRecorder::any_requires_grad(const std::vector<Tensor>& inputs) {
    for (const Tensor& t : inputs) {
        if (t.requires_grad()) {
            return true;
        }
    }
    return false;
}

Tensor OpRecorder::make(const char* op_name, const Shape& shape, std::vector<double> values,
                        std::vector<Tensor> inputs, BackwardFn backward) {
    validate_shape(shape);
    if (values.size() != shape_numel(shape)) {
        throw ShapeError(std::string(op_name) + ": produced " + std::to_string(values.size()) +
                         " values for shape " + shape_str(shape));
    }
    require_finite(op_name, values);
    auto impl = std::make_shared<detail::TensorImpl>();
    impl->shape = shape;
    impl->data = std::move(values);
    if (grad_enabled() && any_requires_grad(inputs)) {
        auto node = std::make_shared<detail::Node>();
        node->seq = g_next_seq.fetch_add(1, std::memory_order_relaxed);
        node->name = op_name;
        node->backward = std::move(backward);
        node->inputs.reserve(inputs.size());
        for (Tensor& t : inputs) {
            node->inputs.push_back(t.impl_);
        }
        impl->requires_grad = true;
        impl->grad_fn = std::move(node);
    }
    return Tensor(std::move(impl));
}

}  // namespace dcfg
