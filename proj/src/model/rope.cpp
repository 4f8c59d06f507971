#include "framegen/model/rope.hpp"

#include <array>
#include <cmath>

#include "framegen/ops.hpp"

namespace framegen {

RopeTables rope3d_tables(std::span<const Position> positions, std::size_t head_dim, double base) {
  if (head_dim == 0 || head_dim % 16 != 0) {
    throw ConfigError("3D RoPE needs head_dim divisible by 16 (2:3:3 split into even channel groups), got " +
                      std::to_string(head_dim));
  }
  const std::array<std::size_t, 3> group = {head_dim / 4, 3 * head_dim / 8, 3 * head_dim / 8};
  RopeTables tables;
  tables.rows = positions.size();
  tables.half = head_dim / 2;
  tables.cos.assign(tables.rows * tables.half, 1.0);
  tables.sin.assign(tables.rows * tables.half, 0.0);
  for (std::size_t r = 0; r < positions.size(); ++r) {
    const auto& pos = positions[r];
    if (pos.none) continue;
    const std::array<int, 3> coord = {pos.t, pos.y, pos.x};
    std::size_t pair = 0;
    for (std::size_t axis = 0; axis < 3; ++axis) {
      const auto n = group[axis];
      for (std::size_t j = 0; j < n / 2; ++j, ++pair) {
        const double freq = std::pow(base, -2.0 * static_cast<double>(j) / static_cast<double>(n));
        const double angle = coord[axis] * freq;
        tables.cos[r * tables.half + pair] = std::cos(angle);
        tables.sin[r * tables.half + pair] = std::sin(angle);
      }
    }
  }
  return tables;
}

Tensor rope3d_rotate(const Tensor& x, const RopeTables& tables) { return rotate_pairs(x, tables.cos, tables.sin); }

std::pair<Tensor, Tensor> rope3d_apply(const Tensor& q, const Tensor& k, std::span<const Position> positions,
                                       double base) {
  if (q.rank() != 2 || q.shape() != k.shape()) {
    throw DimensionError("rope3d_apply: q " + shape_str(q.shape()) + " and k " + shape_str(k.shape()));
  }
  const auto tables = rope3d_tables(positions, q.dim(1), base);
  return {rope3d_rotate(q, tables), rope3d_rotate(k, tables)};
}

}  // namespace framegen
