#include "framegen/model/attention.hpp"

#include <cmath>

#include "framegen/ops.hpp"

namespace framegen {

Tensor fcd_attention(const Tensor& x, std::size_t n_heads, const Linears& linears, const std::string& prefix,
                     const MaskMatrix& mask, const RopeTables& rope, AttentionProbe* probe) {
  if (x.rank() != 2) throw DimensionError("fcd_attention expects [L x d], got " + shape_str(x.shape()));
  const auto L = x.dim(0), d = x.dim(1);
  if (n_heads == 0 || d % n_heads != 0) {
    throw ConfigError("d_model " + std::to_string(d) + " not divisible by " + std::to_string(n_heads) + " heads");
  }
  if (mask.length != L || rope.rows != L) {
    throw DimensionError("fcd_attention: mask/rope length does not match " + std::to_string(L) + " tokens");
  }
  const auto hd = d / n_heads;
  const auto q = linears(x, prefix + ".q");
  const auto k = linears(x, prefix + ".k");
  const auto v = linears(x, prefix + ".v");
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(hd));
  if (probe) probe->heads = n_heads;

  std::vector<Tensor> heads;
  heads.reserve(n_heads);
  for (std::size_t h = 0; h < n_heads; ++h) {
    const auto qh = rope3d_rotate(slice_cols(q, h * hd, (h + 1) * hd), rope);
    const auto kh = rope3d_rotate(slice_cols(k, h * hd, (h + 1) * hd), rope);
    const auto vh = slice_cols(v, h * hd, (h + 1) * hd);
    const auto scores = add(scale(matmul_nt(qh, kh), inv_sqrt), mask.bias);
    const auto weights = softmax_lastdim(scores);
    if (probe) probe->weights.emplace_back(weights.data().begin(), weights.data().end());
    heads.push_back(matmul(weights, vh));
  }
  return linears(concat_cols(heads), prefix + ".o");
}

}  // namespace framegen
