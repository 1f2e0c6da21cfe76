#include "ursct/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace ursct {

std::int64_t numel_of(const Shape& shape) {
    std::int64_t n = 1;
    for (auto d : shape) {
        if (d <= 0) throw DimensionError("tensor extents must be positive, got " + shape_str(shape));
        n *= d;
    }
    return n;
}

std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << ", ";
        os << shape[i];
    }
    os << "]";
    return os.str();
}

std::vector<std::int64_t> row_major_strides(const Shape& shape) {
    std::vector<std::int64_t> strides(shape.size(), 1);
    for (int i = static_cast<int>(shape.size()) - 2; i >= 0; --i) {
        strides[i] = strides[i + 1] * shape[i + 1];
    }
    return strides;
}

template <typename T>
Tensor<T> Tensor<T>::zeros(Shape shape) {
    auto n = numel_of(shape);
    auto p = std::make_shared<detail::Payload<T>>();
    p->shape = std::move(shape);
    p->values.assign(static_cast<std::size_t>(n), T(0));
    return Tensor(std::move(p));
}

template <typename T>
Tensor<T> Tensor<T>::ones(Shape shape) {
    return full(std::move(shape), T(1));
}

template <typename T>
Tensor<T> Tensor<T>::full(Shape shape, T value) {
    auto n = numel_of(shape);
    auto p = std::make_shared<detail::Payload<T>>();
    p->shape = std::move(shape);
    p->values.assign(static_cast<std::size_t>(n), value);
    return Tensor(std::move(p));
}

template <typename T>
Tensor<T> Tensor<T>::from(Shape shape, std::vector<T> values) {
    auto n = numel_of(shape);
    if (n != static_cast<std::int64_t>(values.size())) {
        throw DimensionError("value count " + std::to_string(values.size()) +
                             " does not match shape " + shape_str(shape));
    }
    auto p = std::make_shared<detail::Payload<T>>();
    p->shape = std::move(shape);
    p->values = std::move(values);
    return Tensor(std::move(p));
}

template <typename T>
Tensor<T> Tensor<T>::scalar(T value) {
    return full(Shape{1}, value);
}

template <typename T>
Tensor<T> Tensor<T>::trunc_normal(Shape shape, Rng& rng, T stddev) {
    auto t = zeros(std::move(shape));
    for (auto& v : t.p_->values) v = static_cast<T>(rng.truncated_normal(stddev));
    return t;
}

template <typename T>
std::int64_t Tensor<T>::dim(int axis) const {
    const int n = ndim();
    if (axis < 0) axis += n;
    if (axis < 0 || axis >= n) {
        throw DimensionError("axis " + std::to_string(axis) + " out of range for " +
                             shape_str(p_->shape));
    }
    return p_->shape[axis];
}

template <typename T>
T Tensor<T>::item() const {
    if (numel() != 1) throw DimensionError("item() requires a scalar tensor, got " + shape_str(p_->shape));
    return p_->values[0];
}

template <typename T>
static std::int64_t flat_index(const detail::Payload<T>& p, std::initializer_list<std::int64_t> idx) {
    if (static_cast<int>(idx.size()) != static_cast<int>(p.shape.size())) {
        throw DimensionError("index rank mismatch for " + shape_str(p.shape));
    }
    const auto strides = row_major_strides(p.shape);
    std::int64_t flat = 0;
    int i = 0;
    for (auto v : idx) {
        if (v < 0 || v >= p.shape[i]) throw DimensionError("index out of bounds for " + shape_str(p.shape));
        flat += v * strides[i];
        ++i;
    }
    return flat;
}

template <typename T>
T Tensor<T>::at(std::initializer_list<std::int64_t> idx) const {
    return p_->values[static_cast<std::size_t>(flat_index(*p_, idx))];
}

template <typename T>
T Tensor<T>::grad_at(std::initializer_list<std::int64_t> idx) const {
    if (!has_grad()) throw Error("tensor has no gradient buffer");
    return p_->grad[static_cast<std::size_t>(flat_index(*p_, idx))];
}

template <typename T>
Tensor<T>& Tensor<T>::set_requires_grad(bool flag) {
    p_->requires_grad = flag;
    p_->on_grad_path = flag;
    return *this;
}

template <typename T>
void Tensor<T>::zero_grad() {
    if (!p_->grad.empty()) std::fill(p_->grad.begin(), p_->grad.end(), T(0));
}

template <typename T>
Tensor<T> Tensor<T>::clone() const {
    auto p = std::make_shared<detail::Payload<T>>();
    p->shape = p_->shape;
    p->values = p_->values;
    return Tensor(std::move(p));
}

// ---------------------------------------------------------------------------
// GradTape

namespace {
template <typename T>
GradTape<T>*& active_slot() {
    thread_local GradTape<T>* slot = nullptr;
    return slot;
}
}  // namespace

template <typename T>
GradTape<T>::Scope::Scope(GradTape& tape) {
    prev_ = active_slot<T>();
    active_slot<T>() = &tape;
}

template <typename T>
GradTape<T>::Scope::~Scope() {
    active_slot<T>() = prev_;
}

template <typename T>
GradTape<T>* GradTape<T>::active() {
    return active_slot<T>();
}

template <typename T>
void GradTape<T>::record(Tensor<T> output, std::function<void()> backward) {
    entries_.push_back(Entry{std::move(output), std::move(backward)});
}

template <typename T>
void GradTape<T>::backward(const Tensor<T>& loss) {
    if (entries_.empty()) throw Error("backward on an empty tape");
    if (loss.numel() != 1) {
        throw DimensionError("backward requires a scalar loss, got " + shape_str(loss.shape()));
    }
    // Intermediate grads are scratch per call; leaf parameter grads persist
    // and accumulate across calls.
    for (auto& e : entries_) {
        auto p = e.output.payload();
        if (!p->requires_grad) {
            p->grad.assign(p->values.size(), T(0));
        }
    }
    auto lp = loss.payload();
    if (lp->grad.empty()) lp->grad.assign(lp->values.size(), T(0));
    lp->grad[0] += T(1);
    for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) {
        it->backward();
    }
}

template class Tensor<float>;
template class Tensor<double>;
template class GradTape<float>;
template class GradTape<double>;

}  // namespace ursct
