#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "framegen/model/linear.hpp"
#include "framegen/model/mask.hpp"
#include "framegen/model/rope.hpp"

namespace framegen {

// Post-softmax attention weights recorded during a forward pass, one
// [L x L] matrix per (layer, head) in call order.
struct AttentionProbe {
  std::size_t heads = 0;
  std::vector<std::vector<double>> weights;
};

// Multi-head Softmax(Q K^T / sqrt(d_head) + M) V with 3D RoPE on q and k,
// heads concatenated and passed through the output projection. Projections
// are "<prefix>.q/.k/.v/.o".
Tensor fcd_attention(const Tensor& x, std::size_t n_heads, const Linears& linears, const std::string& prefix,
                     const MaskMatrix& mask, const RopeTables& rope, AttentionProbe* probe = nullptr);

}  // namespace framegen
