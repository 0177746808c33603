#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "icar/numcore/autograd.hpp"

// Differentiable primitives. Every op validates shapes up front and throws
// ShapeError naming the offending shapes. Matrices are row-major [rows, cols].

namespace icar::nc {

/// A contiguous block of rows forming one attention sequence.
struct Segment {
  std::size_t offset;
  std::size_t length;
};

/// Source/row pair used by assemble_rows.
struct RowPick {
  std::size_t source;
  std::size_t row;
};

/// Names of the primitives this kernel differentiates, in catalog order.
std::vector<std::string> forward_backward_ops();

template <typename T> Var<T> matmul(const Var<T>& a, const Var<T>& b);
/// a [m,k] times b^T where b is [n,k].
template <typename T> Var<T> matmul_nt(const Var<T>& a, const Var<T>& b);
/// Elementwise sum; `b` may also be a [1,n] row broadcast over the rows of `a`.
template <typename T> Var<T> add(const Var<T>& a, const Var<T>& b);
template <typename T> Var<T> sub(const Var<T>& a, const Var<T>& b);
template <typename T> Var<T> mul(const Var<T>& a, const Var<T>& b);
template <typename T> Var<T> scale(const Var<T>& a, T factor);
template <typename T> Var<T> sum(const Var<T>& a);
template <typename T> Var<T> mean(const Var<T>& a);
/// Mean over consecutive groups of `group` rows: [g*n, c] -> [n, c].
template <typename T> Var<T> group_mean_rows(const Var<T>& a, std::size_t group);
template <typename T> Var<T> concat_cols(const std::vector<Var<T>>& parts);
template <typename T> Var<T> concat_rows(const std::vector<Var<T>>& parts);
/// Builds a matrix whose i-th row is row picks[i].row of sources[picks[i].source].
template <typename T>
Var<T> assemble_rows(const std::vector<Var<T>>& sources, const std::vector<RowPick>& picks);
template <typename T> Var<T> gather_rows(const Var<T>& a, std::span<const std::size_t> rows);
/// Same data, new shape with equal element count.
template <typename T> Var<T> reshape(const Var<T>& a, Shape shape);

template <typename T>
Var<T> layer_norm(const Var<T>& x, const Var<T>& gain, const Var<T>& bias, T eps = T(1e-5));
/// Row-wise softmax with max subtraction.
template <typename T> Var<T> softmax_rows(const Var<T>& x);
/// Mean cross-entropy of row-wise logits against integer labels; -> [1,1].
template <typename T>
Var<T> cross_entropy(const Var<T>& logits, std::span<const std::size_t> labels);

/// Multi-head scaled dot-product attention over block-diagonal segments.
/// q, k, v are [rows, d]; tokens only attend within their own segment.
template <typename T>
Var<T> attention(const Var<T>& q, const Var<T>& k, const Var<T>& v,
                 const std::vector<Segment>& segments, std::size_t heads);

template <typename T> Var<T> gelu(const Var<T>& x);
template <typename T> Var<T> relu(const Var<T>& x);
template <typename T> Var<T> softplus(const Var<T>& x);
template <typename T> Var<T> log(const Var<T>& x);
template <typename T> Var<T> pow(const Var<T>& x, T exponent);
template <typename T> Var<T> clamp_min(const Var<T>& x, T lo);
template <typename T> Var<T> l2_normalize_rows(const Var<T>& x);

/// Euclidean distance between corresponding rows: [m,d],[m,d] -> [m,1].
template <typename T> Var<T> row_distance(const Var<T>& a, const Var<T>& b);
/// For each row, distance to its nearest other row: [m,d] -> [m,1], m >= 2.
template <typename T> Var<T> nn_distance(const Var<T>& x);

// Non-differentiable helpers on plain tensors.
template <typename T> Tensor<T> softmax_values(std::span<const T> logits);

}  // namespace icar::nc
