#pragma once

#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "ursct/errors.hpp"
#include "ursct/rng.hpp"

namespace ursct {

using Shape = std::vector<std::int64_t>;

std::int64_t numel_of(const Shape& shape);
std::string shape_str(const Shape& shape);
std::vector<std::int64_t> row_major_strides(const Shape& shape);

namespace detail {

template <typename T>
struct Payload {
    Shape shape;
    std::vector<T> values;
    std::vector<T> grad;          // empty until touched by backward
    bool requires_grad = false;   // leaf parameter flag
    bool on_grad_path = false;    // gradient must flow through this tensor
};

}  // namespace detail

template <typename T>
class GradTape;

// Dense row-major tensor handle with value semantics over a shared payload.
// Values are immutable once an op has produced the tensor; only the grad
// buffer (and, for leaf parameters, the optimizer's in-place update) mutates.
template <typename T>
class Tensor {
public:
    using value_type = T;

    Tensor() = default;

    static Tensor zeros(Shape shape);
    static Tensor ones(Shape shape);
    static Tensor full(Shape shape, T value);
    static Tensor from(Shape shape, std::vector<T> values);
    static Tensor scalar(T value);
    // Truncated normal (|z| <= 2*stddev), the init used for projections.
    static Tensor trunc_normal(Shape shape, Rng& rng, T stddev);

    bool defined() const { return static_cast<bool>(p_); }
    const Shape& shape() const { return p_->shape; }
    int ndim() const { return static_cast<int>(p_->shape.size()); }
    std::int64_t numel() const { return static_cast<std::int64_t>(p_->values.size()); }
    std::int64_t dim(int axis) const;  // negative axis counts from the back

    std::span<const T> data() const { return {p_->values.data(), p_->values.size()}; }
    // In-place access, for parameter updates only; never call on a tensor
    // that a live tape depends on.
    std::span<T> mutable_data() { return {p_->values.data(), p_->values.size()}; }

    T item() const;                                    // scalar tensors
    T at(std::initializer_list<std::int64_t> idx) const;

    bool requires_grad() const { return p_->requires_grad; }
    Tensor& set_requires_grad(bool flag);
    bool on_grad_path() const { return p_ && p_->on_grad_path; }

    bool has_grad() const { return p_ && !p_->grad.empty(); }
    std::span<const T> grad() const { return {p_->grad.data(), p_->grad.size()}; }
    T grad_at(std::initializer_list<std::int64_t> idx) const;
    void zero_grad();

    Tensor clone() const;

    std::shared_ptr<detail::Payload<T>> payload() const { return p_; }

private:
    explicit Tensor(std::shared_ptr<detail::Payload<T>> p) : p_(std::move(p)) {}
    std::shared_ptr<detail::Payload<T>> p_;
};

// Reverse-mode tape: a Wengert list of executed ops. Ops record themselves
// while a tape is active on the current thread; backward() replays entries
// in exact reverse order. Gradients of leaf parameters accumulate across
// backward() calls until zero_grad(); intermediate gradients are scratch,
// re-zeroed at the start of every backward().
template <typename T>
class GradTape {
public:
    GradTape() = default;
    GradTape(const GradTape&) = delete;
    GradTape& operator=(const GradTape&) = delete;

    // RAII activation on the current thread.
    class Scope {
    public:
        explicit Scope(GradTape& tape);
        ~Scope();
        Scope(const Scope&) = delete;
        Scope& operator=(const Scope&) = delete;

    private:
        GradTape* prev_;
    };

    static GradTape* active();

    void record(Tensor<T> output, std::function<void()> backward);
    std::size_t size() const { return entries_.size(); }
    bool empty() const { return entries_.empty(); }
    void clear() { entries_.clear(); }

    // Seeds d(loss)/d(loss) = 1 and replays the tape backward. loss must be
    // scalar and the tape nonempty.
    void backward(const Tensor<T>& loss);

private:
    struct Entry {
        Tensor<T> output;
        std::function<void()> backward;
    };
    std::vector<Entry> entries_;
};

template <typename U, typename T>
Tensor<U> tensor_cast(const Tensor<T>& t) {
    std::vector<U> out(t.data().begin(), t.data().end());
    return Tensor<U>::from(t.shape(), std::move(out));
}

}  // namespace ursct
