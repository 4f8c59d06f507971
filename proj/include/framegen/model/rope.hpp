#pragma once

#include <cstddef>
#include <span>
#include <utility>
#include <vector>

#include "framegen/model/tokens.hpp"
#include "framegen/tensor.hpp"

namespace framegen {

// Per-token rotation angles for one head width. Channels are split 2:3:3
// (in eighths) between the t, y and x axes; within an axis group of n
// channels, pair j rotates at frequency base^(-2j/n). Sentinel positions get
// the identity rotation.
struct RopeTables {
  std::size_t rows = 0;
  std::size_t half = 0;  // head_dim / 2
  std::vector<double> cos;
  std::vector<double> sin;
};

// Throws ConfigError when head_dim cannot be split into even axis groups.
RopeTables rope3d_tables(std::span<const Position> positions, std::size_t head_dim, double base = 10000.0);

Tensor rope3d_rotate(const Tensor& x, const RopeTables& tables);
std::pair<Tensor, Tensor> rope3d_apply(const Tensor& q, const Tensor& k, std::span<const Position> positions,
                                       double base = 10000.0);

}  // namespace framegen
