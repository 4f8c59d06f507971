#include "framegen/ops.hpp"

#include <Eigen/Core>
#include <cmath>
#include <initializer_list>
#include <numeric>

#include "framegen/gradcheck.hpp"

namespace framegen {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMat>;
using MutMap = Eigen::Map<RowMat>;

double g_layer_norm_fault = 1.0;

Tensor make_op_n(Shape shape, std::vector<double> value, const char* op, std::span<const Tensor> inputs,
                 detail::BackwardFn fn) {
#ifndef NDEBUG
  for (double v : value) {
    if (!std::isfinite(v)) throw NumericError(std::string("non-finite value produced by ") + op);
  }
#endif
  auto node = std::make_shared<detail::Node>();
  node->shape = std::move(shape);
  node->value = std::move(value);
  node->op = op;
  bool any = false;
  if (grad_recording_enabled()) {
    for (const auto& t : inputs) any = any || t.requires_grad();
  }
  if (any) {
    node->requires_grad = true;
    for (const auto& t : inputs) node->parents.push_back(t.node());
    node->backward = std::move(fn);
  }
  return Tensor(std::move(node));
}

Tensor make_op(Shape shape, std::vector<double> value, const char* op, std::initializer_list<Tensor> inputs,
               detail::BackwardFn fn) {
  return make_op_n(std::move(shape), std::move(value), op, std::span<const Tensor>(inputs.begin(), inputs.size()),
                   std::move(fn));
}

// Gradient buffer of the i-th parent, or nullptr when it does not need one.
double* parent_grad(detail::Node& self, std::size_t i) {
  auto& p = *self.parents[i];
  return p.requires_grad ? p.grad_buffer().data() : nullptr;
}

const std::vector<double>& parent_value(const detail::Node& self, std::size_t i) {
  return self.parents[i]->value;
}

void require_rank2(const Tensor& t, const char* op) {
  if (t.rank() != 2) throw DimensionError(std::string(op) + " expects a rank-2 tensor, got " + shape_str(t.shape()));
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
}

std::size_t last_dim(const Tensor& x, const char* op) {
  if (x.rank() == 0 || x.shape().back() == 0) {
    throw DimensionError(std::string(op) + " needs a non-empty last axis, got " + shape_str(x.shape()));
  }
  return x.shape().back();
}

}  // namespace

void set_backward_fault_for_testing(bool enabled) { g_layer_norm_fault = enabled ? 1.05 : 1.0; }

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_rank2(a, "matmul");
  require_rank2(b, "matmul");
  const auto m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k) {
    throw DimensionError("matmul: inner dimensions differ, " + shape_str(a.shape()) + " . " + shape_str(b.shape()));
  }
  std::vector<double> out(m * n);
  MutMap(out.data(), m, n).noalias() = ConstMap(a.data().data(), m, k) * ConstMap(b.data().data(), k, n);
  return make_op({m, n}, std::move(out), "matmul", {a, b}, [m, k, n](detail::Node& self) {
    ConstMap g(self.grad.data(), m, n);
    if (double* ga = parent_grad(self, 0)) {
      MutMap(ga, m, k).noalias() += g * ConstMap(parent_value(self, 1).data(), k, n).transpose();
    }
    if (double* gb = parent_grad(self, 1)) {
      MutMap(gb, k, n).noalias() += ConstMap(parent_value(self, 0).data(), m, k).transpose() * g;
    }
  });
}

Tensor matmul_nt(const Tensor& a, const Tensor& b) {
  require_rank2(a, "matmul_nt");
  require_rank2(b, "matmul_nt");
  const auto m = a.dim(0), k = a.dim(1), n = b.dim(0);
  if (b.dim(1) != k) {
    throw DimensionError("matmul_nt: inner dimensions differ, " + shape_str(a.shape()) + " . " +
                         shape_str(b.shape()) + "^T");
  }
  std::vector<double> out(m * n);
  MutMap(out.data(), m, n).noalias() =
      ConstMap(a.data().data(), m, k) * ConstMap(b.data().data(), n, k).transpose();
  return make_op({m, n}, std::move(out), "matmul_nt", {a, b}, [m, k, n](detail::Node& self) {
    ConstMap g(self.grad.data(), m, n);
    if (double* ga = parent_grad(self, 0)) {
      MutMap(ga, m, k).noalias() += g * ConstMap(parent_value(self, 1).data(), n, k);
    }
    if (double* gb = parent_grad(self, 1)) {
      MutMap(gb, n, k).noalias() += g.transpose() * ConstMap(parent_value(self, 0).data(), m, k);
    }
  });
}

Tensor transpose(const Tensor& a) {
  require_rank2(a, "transpose");
  const auto m = a.dim(0), n = a.dim(1);
  std::vector<double> out(m * n);
  MutMap(out.data(), n, m) = ConstMap(a.data().data(), m, n).transpose();
  return make_op({n, m}, std::move(out), "transpose", {a}, [m, n](detail::Node& self) {
    if (double* ga = parent_grad(self, 0)) {
      MutMap(ga, m, n) += ConstMap(self.grad.data(), n, m).transpose();
    }
  });
}

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  std::vector<double> out(a.size());
  const auto x = a.data(), y = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] + y[i];
  return make_op(a.shape(), std::move(out), "add", {a, b}, [](detail::Node& self) {
    for (std::size_t p = 0; p < 2; ++p) {
      if (double* g = parent_grad(self, p)) {
        for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
      }
    }
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  std::vector<double> out(a.size());
  const auto x = a.data(), y = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] - y[i];
  return make_op(a.shape(), std::move(out), "sub", {a, b}, [](detail::Node& self) {
    if (double* g = parent_grad(self, 0)) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
    }
    if (double* g = parent_grad(self, 1)) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] -= self.grad[i];
    }
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  std::vector<double> out(a.size());
  const auto x = a.data(), y = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] * y[i];
  return make_op(a.shape(), std::move(out), "mul", {a, b}, [](detail::Node& self) {
    const auto& x = parent_value(self, 0);
    const auto& y = parent_value(self, 1);
    if (double* g = parent_grad(self, 0)) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i] * y[i];
    }
    if (double* g = parent_grad(self, 1)) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i] * x[i];
    }
  });
}

Tensor scale(const Tensor& a, double s) {
  std::vector<double> out(a.data().begin(), a.data().end());
  for (auto& v : out) v *= s;
  return make_op(a.shape(), std::move(out), "scale", {a}, [s](detail::Node& self) {
    if (double* g = parent_grad(self, 0)) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += s * self.grad[i];
    }
  });
}

Tensor add_scalar(const Tensor& a, double c) {
  std::vector<double> out(a.data().begin(), a.data().end());
  for (auto& v : out) v += c;
  return make_op(a.shape(), std::move(out), "add_scalar", {a}, [](detail::Node& self) {
    if (double* g = parent_grad(self, 0)) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
    }
  });
}

Tensor gelu(const Tensor& x) {
  constexpr double kC = 0.7978845608028654;  // sqrt(2/pi)
  constexpr double kA = 0.044715;
  std::vector<double> out(x.size());
  const auto v = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double u = v[i];
    out[i] = 0.5 * u * (1.0 + std::tanh(kC * (u + kA * u * u * u)));
  }
  return make_op(x.shape(), std::move(out), "gelu", {x}, [](detail::Node& self) {
    double* g = parent_grad(self, 0);
    if (!g) return;
    const auto& v = parent_value(self, 0);
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      const double u = v[i];
      const double th = std::tanh(kC * (u + kA * u * u * u));
      const double dinner = kC * (1.0 + 3.0 * kA * u * u);
      g[i] += self.grad[i] * (0.5 * (1.0 + th) + 0.5 * u * (1.0 - th * th) * dinner);
    }
  });
}

Tensor silu(const Tensor& x) {
  std::vector<double> out(x.size());
  const auto v = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = v[i] / (1.0 + std::exp(-v[i]));
  return make_op(x.shape(), std::move(out), "silu", {x}, [](detail::Node& self) {
    double* g = parent_grad(self, 0);
    if (!g) return;
    const auto& v = parent_value(self, 0);
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      const double s = 1.0 / (1.0 + std::exp(-v[i]));
      g[i] += self.grad[i] * s * (1.0 + v[i] * (1.0 - s));
    }
  });
}

Tensor add_rowvec(const Tensor& x, const Tensor& v) {
  const auto d = last_dim(x, "add_rowvec");
  if (v.size() != d) {
    throw DimensionError("add_rowvec: vector of " + std::to_string(v.size()) + " elements against " +
                         shape_str(x.shape()));
  }
  std::vector<double> out(x.data().begin(), x.data().end());
  const auto b = v.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += b[i % d];
  return make_op(x.shape(), std::move(out), "add_rowvec", {x, v}, [d](detail::Node& self) {
    if (double* g = parent_grad(self, 0)) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
    }
    if (double* g = parent_grad(self, 1)) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i % d] += self.grad[i];
    }
  });
}

Tensor mul_rowvec(const Tensor& x, const Tensor& v) {
  const auto d = last_dim(x, "mul_rowvec");
  if (v.size() != d) {
    throw DimensionError("mul_rowvec: vector of " + std::to_string(v.size()) + " elements against " +
                         shape_str(x.shape()));
  }
  std::vector<double> out(x.data().begin(), x.data().end());
  const auto s = v.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= s[i % d];
  return make_op(x.shape(), std::move(out), "mul_rowvec", {x, v}, [d](detail::Node& self) {
    const auto& xv = parent_value(self, 0);
    const auto& sv = parent_value(self, 1);
    if (double* g = parent_grad(self, 0)) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i] * sv[i % d];
    }
    if (double* g = parent_grad(self, 1)) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i % d] += self.grad[i] * xv[i];
    }
  });
}

Tensor layer_norm(const Tensor& x, double eps) {
  const auto d = last_dim(x, "layer_norm");
  const auto rows = x.size() / d;
  const auto v = x.data();
  std::vector<double> out(x.size());
  std::vector<double> inv_std(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* row = v.data() + r * d;
    double mu = 0.0;
    for (std::size_t j = 0; j < d; ++j) mu += row[j];
    mu /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t j = 0; j < d; ++j) var += (row[j] - mu) * (row[j] - mu);
    var /= static_cast<double>(d);
    const double is = 1.0 / std::sqrt(var + eps);
    inv_std[r] = is;
    for (std::size_t j = 0; j < d; ++j) out[r * d + j] = (row[j] - mu) * is;
  }
  return make_op(x.shape(), std::move(out), "layer_norm", {x},
                 [d, rows, inv_std = std::move(inv_std)](detail::Node& self) {
                   double* g = parent_grad(self, 0);
                   if (!g) return;
                   const double n = static_cast<double>(d);
                   for (std::size_t r = 0; r < rows; ++r) {
                     const double* gy = self.grad.data() + r * d;
                     const double* xh = self.value.data() + r * d;
                     double mg = 0.0, mgx = 0.0;
                     for (std::size_t j = 0; j < d; ++j) {
                       mg += gy[j];
                       mgx += gy[j] * xh[j];
                     }
                     mg /= n;
                     mgx /= n;
                     const double is = inv_std[r] * g_layer_norm_fault;
                     for (std::size_t j = 0; j < d; ++j) g[r * d + j] += is * (gy[j] - mg - xh[j] * mgx);
                   }
                 });
}

Tensor softmax_lastdim(const Tensor& x) {
  const auto n = last_dim(x, "softmax_lastdim");
  const auto rows = x.size() / n;
  const auto v = x.data();
  std::vector<double> out(x.size());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* row = v.data() + r * n;
    double mx = row[0];
    for (std::size_t j = 1; j < n; ++j) mx = std::max(mx, row[j]);
    if (mx <= -0.5 * kMaskBig) {
      throw ContractError("softmax_lastdim: fully masked row " + std::to_string(r));
    }
    double s = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      const double e = std::exp(row[j] - mx);
      out[r * n + j] = e;
      s += e;
    }
    const double inv = 1.0 / s;
    for (std::size_t j = 0; j < n; ++j) out[r * n + j] *= inv;
  }
  return make_op(x.shape(), std::move(out), "softmax", {x}, [n, rows](detail::Node& self) {
    double* g = parent_grad(self, 0);
    if (!g) return;
    for (std::size_t r = 0; r < rows; ++r) {
      const double* y = self.value.data() + r * n;
      const double* gy = self.grad.data() + r * n;
      double dot = 0.0;
      for (std::size_t j = 0; j < n; ++j) dot += gy[j] * y[j];
      for (std::size_t j = 0; j < n; ++j) g[r * n + j] += y[j] * (gy[j] - dot);
    }
  });
}

// Neumaier-compensated; scalar losses are differenced in gradient checks and
// plain accumulation would dominate their rounding error.
double compensated_sum(std::span<const double> v) {
  double s = 0.0, c = 0.0;
  for (double x : v) {
    const double t = s + x;
    c += std::abs(s) >= std::abs(x) ? (s - t) + x : (x - t) + s;
    s = t;
  }
  return s + c;
}

Tensor sum(const Tensor& x) {
  const double s = compensated_sum(x.data());
  return make_op({}, {s}, "sum", {x}, [](detail::Node& self) {
    if (double* g = parent_grad(self, 0)) {
      const auto n = self.parents[0]->value.size();
      for (std::size_t i = 0; i < n; ++i) g[i] += self.grad[0];
    }
  });
}

Tensor mean(const Tensor& x) {
  if (x.size() == 0) throw DimensionError("mean of an empty tensor");
  return scale(sum(x), 1.0 / static_cast<double>(x.size()));
}

Tensor mean_rows(const Tensor& x) {
  require_rank2(x, "mean_rows");
  const auto n = x.dim(0), d = x.dim(1);
  if (n == 0) throw DimensionError("mean_rows of a tensor with no rows");
  std::vector<double> out(d, 0.0);
  const auto v = x.data();
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t j = 0; j < d; ++j) out[j] += v[r * d + j];
  }
  const double inv = 1.0 / static_cast<double>(n);
  for (auto& o : out) o *= inv;
  return make_op({d}, std::move(out), "mean_rows", {x}, [n, d, inv](detail::Node& self) {
    if (double* g = parent_grad(self, 0)) {
      for (std::size_t r = 0; r < n; ++r) {
        for (std::size_t j = 0; j < d; ++j) g[r * d + j] += inv * self.grad[j];
      }
    }
  });
}

Tensor mse(const Tensor& prediction, const Tensor& target) {
  require_same_shape(prediction, target, "mse");
  const auto diff = sub(prediction, target);
  return mean(mul(diff, diff));
}

Tensor reshape(const Tensor& x, Shape shape) {
  if (numel(shape) != x.size()) {
    throw DimensionError("reshape " + shape_str(x.shape()) + " -> " + shape_str(shape));
  }
  std::vector<double> out(x.data().begin(), x.data().end());
  return make_op(std::move(shape), std::move(out), "reshape", {x}, [](detail::Node& self) {
    if (double* g = parent_grad(self, 0)) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
    }
  });
}

Tensor slice_rows(const Tensor& x, std::size_t begin, std::size_t end) {
  if (x.rank() == 0 || begin > end || end > x.dim(0)) {
    throw DimensionError("slice_rows [" + std::to_string(begin) + ", " + std::to_string(end) + ") of " +
                         shape_str(x.shape()));
  }
  const auto row = x.size() / std::max<std::size_t>(x.dim(0), 1);
  Shape shape = x.shape();
  shape[0] = end - begin;
  std::vector<double> out(x.data().begin() + static_cast<std::ptrdiff_t>(begin * row),
                          x.data().begin() + static_cast<std::ptrdiff_t>(end * row));
  const auto offset = begin * row;
  return make_op(std::move(shape), std::move(out), "slice_rows", {x}, [offset](detail::Node& self) {
    if (double* g = parent_grad(self, 0)) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[offset + i] += self.grad[i];
    }
  });
}

Tensor concat_rows(std::span<const Tensor> parts) {
  if (parts.empty()) throw DimensionError("concat_rows of zero tensors");
  Shape shape = parts[0].shape();
  if (shape.empty()) throw DimensionError("concat_rows of scalars");
  std::size_t rows = 0;
  std::vector<double> out;
  std::vector<std::size_t> offsets;
  for (const auto& p : parts) {
    if (p.rank() != shape.size() || !std::equal(p.shape().begin() + 1, p.shape().end(), shape.begin() + 1)) {
      throw DimensionError("concat_rows: " + shape_str(p.shape()) + " does not match " + shape_str(shape));
    }
    offsets.push_back(out.size());
    rows += p.dim(0);
    out.insert(out.end(), p.data().begin(), p.data().end());
  }
  shape[0] = rows;
  return make_op_n(std::move(shape), std::move(out), "concat_rows", parts,
                   [offsets = std::move(offsets)](detail::Node& self) {
                     for (std::size_t p = 0; p < self.parents.size(); ++p) {
                       double* g = parent_grad(self, p);
                       if (!g) continue;
                       const auto n = self.parents[p]->value.size();
                       for (std::size_t i = 0; i < n; ++i) g[i] += self.grad[offsets[p] + i];
                     }
                   });
}

Tensor slice_cols(const Tensor& x, std::size_t begin, std::size_t end) {
  require_rank2(x, "slice_cols");
  const auto rows = x.dim(0), cols = x.dim(1);
  if (begin > end || end > cols) {
    throw DimensionError("slice_cols [" + std::to_string(begin) + ", " + std::to_string(end) + ") of " +
                         shape_str(x.shape()));
  }
  const auto w = end - begin;
  std::vector<double> out(rows * w);
  const auto v = x.data();
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t j = 0; j < w; ++j) out[r * w + j] = v[r * cols + begin + j];
  }
  return make_op({rows, w}, std::move(out), "slice_cols", {x}, [rows, cols, begin, w](detail::Node& self) {
    if (double* g = parent_grad(self, 0)) {
      for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t j = 0; j < w; ++j) g[r * cols + begin + j] += self.grad[r * w + j];
      }
    }
  });
}

Tensor concat_cols(std::span<const Tensor> parts) {
  if (parts.empty()) throw DimensionError("concat_cols of zero tensors");
  const auto rows = parts[0].rank() == 2 ? parts[0].dim(0) : 0;
  std::size_t cols = 0;
  std::vector<std::size_t> starts;
  for (const auto& p : parts) {
    require_rank2(p, "concat_cols");
    if (p.dim(0) != rows) {
      throw DimensionError("concat_cols: row count " + std::to_string(p.dim(0)) + " vs " + std::to_string(rows));
    }
    starts.push_back(cols);
    cols += p.dim(1);
  }
  std::vector<double> out(rows * cols);
  for (std::size_t p = 0; p < parts.size(); ++p) {
    const auto w = parts[p].dim(1);
    const auto v = parts[p].data();
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t j = 0; j < w; ++j) out[r * cols + starts[p] + j] = v[r * w + j];
    }
  }
  return make_op_n({rows, cols}, std::move(out), "concat_cols", parts,
                   [rows, cols, starts = std::move(starts)](detail::Node& self) {
                     for (std::size_t p = 0; p < self.parents.size(); ++p) {
                       double* g = parent_grad(self, p);
                       if (!g) continue;
                       const auto w = self.parents[p]->shape[1];
                       for (std::size_t r = 0; r < rows; ++r) {
                         for (std::size_t j = 0; j < w; ++j) g[r * w + j] += self.grad[r * cols + starts[p] + j];
                       }
                     }
                   });
}

Tensor gather(const Tensor& x, std::vector<std::size_t> index, Shape out_shape) {
  if (numel(out_shape) != index.size()) {
    throw DimensionError("gather: " + std::to_string(index.size()) + " indices for output " + shape_str(out_shape));
  }
  std::vector<double> out(index.size());
  const auto v = x.data();
  for (std::size_t i = 0; i < index.size(); ++i) {
    if (index[i] >= v.size()) throw DimensionError("gather: index out of range for " + shape_str(x.shape()));
    out[i] = v[index[i]];
  }
  return make_op(std::move(out_shape), std::move(out), "gather", {x}, [index = std::move(index)](detail::Node& self) {
    if (double* g = parent_grad(self, 0)) {
      for (std::size_t i = 0; i < index.size(); ++i) g[index[i]] += self.grad[i];
    }
  });
}

Tensor gather_rows(const Tensor& table, std::span<const std::size_t> rows) {
  require_rank2(table, "gather_rows");
  const auto n = table.dim(0), d = table.dim(1);
  std::vector<std::size_t> index;
  index.reserve(rows.size() * d);
  for (auto r : rows) {
    if (r >= n) throw DimensionError("gather_rows: row " + std::to_string(r) + " of " + shape_str(table.shape()));
    for (std::size_t j = 0; j < d; ++j) index.push_back(r * d + j);
  }
  return gather(table, std::move(index), {rows.size(), d});
}

Tensor rotate_pairs(const Tensor& x, std::span<const double> cos_table, std::span<const double> sin_table) {
  require_rank2(x, "rotate_pairs");
  const auto rows = x.dim(0), cols = x.dim(1);
  if (cols % 2 != 0) throw DimensionError("rotate_pairs needs an even channel count, got " + shape_str(x.shape()));
  const auto half = cols / 2;
  if (cos_table.size() != rows * half || sin_table.size() != rows * half) {
    throw DimensionError("rotate_pairs: angle tables do not match " + shape_str(x.shape()));
  }
  std::vector<double> out(x.size());
  const auto v = x.data();
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t j = 0; j < half; ++j) {
      const double c = cos_table[r * half + j], s = sin_table[r * half + j];
      const double a = v[r * cols + 2 * j], b = v[r * cols + 2 * j + 1];
      out[r * cols + 2 * j] = a * c - b * s;
      out[r * cols + 2 * j + 1] = a * s + b * c;
    }
  }
  std::vector<double> cs(cos_table.begin(), cos_table.end());
  std::vector<double> sn(sin_table.begin(), sin_table.end());
  return make_op(x.shape(), std::move(out), "rotate_pairs", {x},
                 [rows, cols, half, cs = std::move(cs), sn = std::move(sn)](detail::Node& self) {
                   double* g = parent_grad(self, 0);
                   if (!g) return;
                   // Transpose of a rotation is the rotation by the negated angle.
                   for (std::size_t r = 0; r < rows; ++r) {
                     for (std::size_t j = 0; j < half; ++j) {
                       const double c = cs[r * half + j], s = sn[r * half + j];
                       const double ga = self.grad[r * cols + 2 * j], gb = self.grad[r * cols + 2 * j + 1];
                       g[r * cols + 2 * j] += ga * c + gb * s;
                       g[r * cols + 2 * j + 1] += -ga * s + gb * c;
                     }
                   }
                 });
}

}  // namespace framegen
