#pragma once

#include "protoens/tensor.hpp"

#include <cstddef>
#include <span>
#include <vector>

namespace protoens {

// Matrix ops (rank 2 only).
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);

enum class ElementwiseOp { Add, Sub, Mul, Div, Abs, Log, Exp, Square, Negate, Sqrt, Tanh, Sigmoid, Relu };

/// Binary kinds need `b` and broadcast numpy-style over trailing dimensions.
Tensor elementwise(ElementwiseOp op, const Tensor& a, const Tensor& b = {});

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);
Tensor neg(const Tensor& a);
Tensor abs(const Tensor& a);
Tensor log(const Tensor& a);
Tensor exp(const Tensor& a);
Tensor square(const Tensor& a);
Tensor sqrt(const Tensor& a);
Tensor tanh(const Tensor& a);
Tensor sigmoid(const Tensor& a);
Tensor relu(const Tensor& a);
Tensor scale(const Tensor& a, double factor);
Tensor add_scalar(const Tensor& a, double offset);

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator/(const Tensor& a, const Tensor& b) { return div(a, b); }
inline Tensor operator-(const Tensor& a) { return neg(a); }

enum class ReduceOp { Sum, Mean, Max };

/// Removes `axis`. Max sends the gradient to the first maximal index.
Tensor reduce(ReduceOp op, const Tensor& a, std::size_t axis);
Tensor sum(const Tensor& a, std::size_t axis);
Tensor mean(const Tensor& a, std::size_t axis);
Tensor max(const Tensor& a, std::size_t axis);
/// Sum of every element, as a rank-0 tensor.
Tensor sum_all(const Tensor& a);

Tensor softmax(const Tensor& a, std::size_t axis);
Tensor log_softmax(const Tensor& a, std::size_t axis);
/// Row softmax of a rank-2 tensor over columns whose key_mask entry is
/// set. Masked columns come out as exactly 0.
Tensor masked_softmax(const Tensor& a, const std::vector<bool>& key_mask);

Tensor reshape(const Tensor& a, Shape shape);
Tensor concat(std::span<const Tensor> parts, std::size_t axis);
Tensor slice(const Tensor& a, std::size_t axis, std::size_t begin, std::size_t end);

/// Rows of `a` (first axis) selected by index; repeated indices allowed.
Tensor gather_rows(const Tensor& a, std::span<const std::size_t> rows);
/// out[i] = a[i, columns[i]] for rank-2 `a`.
Tensor pick(const Tensor& a, std::span<const std::size_t> columns);

/// Sliding-window unfold of packed sequences. `x` is total_rows x C with
/// sequence s occupying rows [offsets[s], offsets[s+1]). Row r of the
/// result is the concatenation of the `window` rows centred on r, with
/// zeros where the window leaves the sequence (same padding).
Tensor unfold_sequences(const Tensor& x, std::span<const std::size_t> offsets,
                        std::size_t window);
/// Column-wise max over each packed sequence: result is sequences x C.
Tensor segment_max(const Tensor& x, std::span<const std::size_t> offsets);

} // namespace protoens
