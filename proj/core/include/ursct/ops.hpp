#pragma once

#include <optional>
#include <type_traits>

#include "ursct/tensor.hpp"

namespace ursct {

// Keep optional arguments out of template deduction so call sites can pass
// std::nullopt or plain literals.
template <typename T>
using OptTensor = std::optional<Tensor<std::type_identity_t<T>>>;
template <typename T>
using OptScalar = std::optional<std::type_identity_t<T>>;

// Differentiable op surface. Every op validates shapes, produces finite
// outputs (non-finite results raise NumericError), and records its backward
// rule on the active GradTape when any input lies on the gradient path.
//
// Binary elementwise ops broadcast NumPy-style: shapes are right-aligned and
// dimensions must match or be 1 (missing leading dimensions count as 1).

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);
// div raises NumericError on any zero divisor instead of producing inf.
template <typename T>
Tensor<T> div(const Tensor<T>& a, const Tensor<T>& b);

template <typename T>
Tensor<T> add_scalar(const Tensor<T>& a, T s);
template <typename T>
Tensor<T> scale(const Tensor<T>& a, T s);

template <typename T>
Tensor<T> sqrt(const Tensor<T>& x);
// Subgradient at x == 0 is 0.
template <typename T>
Tensor<T> abs(const Tensor<T>& x);
// Clamp to [lo, hi]; either bound optional. Subgradient at the kinks is 0.
template <typename T>
Tensor<T> clamp(const Tensor<T>& x, OptScalar<T> lo, OptScalar<T> hi);
// x^p for x >= 0; subgradient at x == 0 is 0 (keeps p < 1 finite).
template <typename T>
Tensor<T> pow_nonneg(const Tensor<T>& x, T p);
// Exact-erf GELU: x * Phi(x).
template <typename T>
Tensor<T> gelu(const Tensor<T>& x);

// Batched matrix product a[..., m, k] x b[..., k, n] with right-aligned
// broadcasting over the leading batch dimensions.
template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b);

// Cross-correlation conv2d, NCHW x [Cout, Cin/groups, kh, kw].
template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, const OptTensor<T>& bias, int stride,
                 int padding, int groups);

// Max-subtracted softmax along `axis`.
template <typename T>
Tensor<T> softmax(const Tensor<T>& x, int axis);

// Normalization over the last axis with per-channel affine.
template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma,
                     const Tensor<T>& beta, T eps);

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape new_shape);
template <typename T>
Tensor<T> permute(const Tensor<T>& x, const std::vector<int>& order);

template <typename T>
Tensor<T> reduce_mean_all(const Tensor<T>& x);
template <typename T>
Tensor<T> reduce_sum_all(const Tensor<T>& x);
// Mean over the given axes; reduced axes are dropped unless keepdims.
template <typename T>
Tensor<T> reduce_mean(const Tensor<T>& x, std::vector<int> axes, bool keepdims);

// Contiguous range [start, start+len) along one axis.
template <typename T>
Tensor<T> slice(const Tensor<T>& x, int axis, std::int64_t start, std::int64_t len);
template <typename T>
Tensor<T> pad_zero(const Tensor<T>& x, int axis, std::int64_t before, std::int64_t after);
template <typename T>
Tensor<T> concat(const Tensor<T>& a, const Tensor<T>& b, int axis);

// Toroidal roll: out[i] = in[(i - shift) mod n] along each rolled axis.
template <typename T>
Tensor<T> roll2(const Tensor<T>& x, std::int64_t shift0, std::int64_t shift1,
                int axis0, int axis1);

// out[i, :] = table[index[i], :]; gradient scatter-adds into the table.
template <typename T>
Tensor<T> gather_rows(const Tensor<T>& table, const std::vector<std::int64_t>& index);

// Convenience sugar used throughout the model code.
template <typename T>
Tensor<T> operator+(const Tensor<T>& a, const Tensor<T>& b) { return add(a, b); }
template <typename T>
Tensor<T> operator-(const Tensor<T>& a, const Tensor<T>& b) { return sub(a, b); }
template <typename T>
Tensor<T> operator*(const Tensor<T>& a, const Tensor<T>& b) { return mul(a, b); }

}  // namespace ursct
