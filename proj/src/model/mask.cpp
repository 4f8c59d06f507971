#include "framegen/model/mask.hpp"

#include <algorithm>

#include "framegen/ops.hpp"

namespace framegen {

std::string_view mask_name(MaskStrategy s) {
  switch (s) {
    case MaskStrategy::A: return "a";
    case MaskStrategy::B: return "b";
    case MaskStrategy::C: return "c";
    case MaskStrategy::None: return "none";
  }
  return "?";
}

std::optional<MaskStrategy> parse_mask(std::string_view name) {
  if (name == "a" || name == "A") return MaskStrategy::A;
  if (name == "b" || name == "B") return MaskStrategy::B;
  if (name == "c" || name == "C") return MaskStrategy::C;
  if (name == "none" || name == "nomask") return MaskStrategy::None;
  return std::nullopt;
}

std::size_t MaskMatrix::blocked_count() const {
  return static_cast<std::size_t>(std::ranges::count(blocked_pairs, true));
}

MaskMatrix build_mask(MaskStrategy strategy, const Layout& layout, const MaskOptions& options) {
  const auto L = layout.total();
  MaskMatrix m;
  m.length = L;
  m.blocked_pairs.assign(L * L, false);
  auto block = [&](Segment q, Segment k, bool include_diagonal) {
    for (auto i = layout.begin(q); i < layout.end(q); ++i) {
      for (auto j = layout.begin(k); j < layout.end(k); ++j) {
        if (i == j && !include_diagonal) continue;
        m.blocked_pairs[i * L + j] = true;
      }
    }
  };
  if (strategy != MaskStrategy::None) {
    block(Segment::Text, Segment::Cond, true);
    block(Segment::Cond, Segment::Text, true);
  }
  if (strategy == MaskStrategy::B) block(Segment::Target, Segment::Cond, true);
  if (strategy == MaskStrategy::C) block(Segment::Cond, Segment::Cond, options.c_blocks_diagonal);

  std::vector<double> bias(L * L, 0.0);
  for (std::size_t i = 0; i < L; ++i) {
    bool any_open = false;
    for (std::size_t j = 0; j < L; ++j) {
      if (m.blocked_pairs[i * L + j]) {
        bias[i * L + j] = -kMaskBig;
      } else {
        any_open = true;
      }
    }
    if (!any_open) {
      throw ContractError("mask '" + std::string(mask_name(strategy)) + "' leaves query " + std::to_string(i) +
                          " (" + std::string(segment_name(layout.segment_of(i))) + ") fully masked");
    }
  }
  m.bias = Tensor::from({L, L}, std::move(bias));
  return m;
}

}  // namespace framegen
