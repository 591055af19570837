#pragma once

// Differentiable operations. All matrix ops take rank-2 tensors in row-major
// layout; element-wise ops accept any shape. Shape violations throw
// DimensionError.

#include <cstddef>
#include <span>
#include <vector>

#include "peftlab/rng.hpp"
#include "peftlab/tensor.hpp"

namespace peftlab::ad {

Tensor matmul(const Tensor& a, const Tensor& b);     // [m,k] x [k,n]
Tensor matmul_nt(const Tensor& a, const Tensor& b);  // [m,k] x [n,k]^T

// x[m,in] * w[out,in]^T + bias[out]; bias may be undefined.
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& bias);

Tensor add(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double s);
// x[m,n] + v[n] broadcast over rows.
Tensor add_row(const Tensor& x, const Tensor& v);

Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);

// Softmax along `axis` (negative counts from the end).
Tensor softmax(const Tensor& x, int axis = -1);

// Row-wise layer normalization with affine gamma/beta of length n.
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                  double eps = 1e-5);

// GELU, tanh approximation: 0.5 x (1 + tanh(sqrt(2/pi) (x + 0.044715 x^3))).
Tensor gelu(const Tensor& x);
Tensor tanh(const Tensor& x);

// Rows of table[V,d] at `ids` -> [len(ids), d]. Gradient is scatter-added, so
// repeated ids accumulate.
Tensor embedding(const Tensor& table, std::span<const int> ids);
// Same as embedding() for an arbitrary matrix.
Tensor select_rows(const Tensor& x, std::span<const int> rows);
Tensor select_cols(const Tensor& x, std::span<const int> cols);

// Concatenate matrices along axis 0 (rows) or 1 (cols). Undefined tensors in
// the list are skipped.
Tensor concat(const std::vector<Tensor>& parts, int axis);
Tensor slice(const Tensor& x, int axis, std::size_t start, std::size_t length);
Tensor transpose(const Tensor& x);

// Mean cross-entropy of softmax(logits[m,C]) against class ids.
Tensor cross_entropy(const Tensor& logits, std::span<const int> targets);

// Inverted dropout. Identity when rate == 0.
Tensor dropout(const Tensor& x, double rate, Rng& rng);

}  // namespace peftlab::ad
