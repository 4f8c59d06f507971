#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "framegen/tensor.hpp"

namespace framegen {

// Additive pre-softmax bias standing in for -inf on blocked attention pairs.
inline constexpr double kMaskBig = 1e30;

// --- linear algebra -------------------------------------------------------

// [m x k] . [k x n] -> [m x n]
Tensor matmul(const Tensor& a, const Tensor& b);
// [m x k] . [n x k]^T -> [m x n]; the linear-layer and attention-score form.
Tensor matmul_nt(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);

// --- elementwise ----------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double s);
Tensor add_scalar(const Tensor& a, double c);
Tensor gelu(const Tensor& x);  // tanh approximation
Tensor silu(const Tensor& x);

// Trailing-axis broadcast: v has exactly x.shape().back() elements.
Tensor add_rowvec(const Tensor& x, const Tensor& v);
Tensor mul_rowvec(const Tensor& x, const Tensor& v);

// --- normalization --------------------------------------------------------

Tensor layer_norm(const Tensor& x, double eps = 1e-6);
Tensor softmax_lastdim(const Tensor& x);

// --- reductions -----------------------------------------------------------

double compensated_sum(std::span<const double> values);
Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
// Column means of a rank-2 tensor: [n x d] -> [d].
Tensor mean_rows(const Tensor& x);
Tensor mse(const Tensor& prediction, const Tensor& target);

// --- structure ------------------------------------------------------------

Tensor reshape(const Tensor& x, Shape shape);
// Rows are taken along axis 0; trailing axes are kept.
Tensor slice_rows(const Tensor& x, std::size_t begin, std::size_t end);
Tensor concat_rows(std::span<const Tensor> parts);
Tensor slice_cols(const Tensor& x, std::size_t begin, std::size_t end);
Tensor concat_cols(std::span<const Tensor> parts);
// out[i] = x[index[i]] over flat storage; backward scatters.
Tensor gather(const Tensor& x, std::vector<std::size_t> index, Shape out_shape);
Tensor gather_rows(const Tensor& table, std::span<const std::size_t> rows);

// Rotates consecutive channel pairs (2j, 2j+1) of each row of x by the angle
// whose cosine/sine are given per (row, pair); both tables are [rows x cols/2].
Tensor rotate_pairs(const Tensor& x, std::span<const double> cos_table,
                    std::span<const double> sin_table);

}  // namespace framegen
