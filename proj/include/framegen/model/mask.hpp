#pragma once

#include <cstddef>
#include <optional>
#include <string_view>
#include <vector>

#include "framegen/model/tokens.hpp"
#include "framegen/tensor.hpp"

namespace framegen {

// Attention mask strategies:
//   A    - text and condition tokens never attend to each other
//   B    - A, and target queries may not read condition keys
//   C    - A, and condition queries may not read condition keys (incl. diagonal)
//   None - full attention
enum class MaskStrategy { A, B, C, None };

std::string_view mask_name(MaskStrategy s);  // "a", "b", "c", "none"
std::optional<MaskStrategy> parse_mask(std::string_view name);

struct MaskOptions {
  // Mask C blocks the condition block's diagonal too. Flip to leave each
  // condition token able to attend to itself.
  bool c_blocks_diagonal = true;
};

struct MaskMatrix {
  std::size_t length = 0;
  std::vector<bool> blocked_pairs;  // row-major [query x key]
  Tensor bias;                      // [L x L], -kMaskBig where blocked, 0 elsewhere

  bool blocked(std::size_t query, std::size_t key) const { return blocked_pairs[query * length + key]; }
  std::size_t blocked_count() const;
};

// Throws ContractError if the strategy leaves some query row with no key.
MaskMatrix build_mask(MaskStrategy strategy, const Layout& layout, const MaskOptions& options = {});

}  // namespace framegen
