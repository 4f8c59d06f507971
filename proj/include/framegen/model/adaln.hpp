#pragma once

#include <array>
#include <cstddef>
#include <string>

#include "framegen/model/linear.hpp"
#include "framegen/model/tokens.hpp"

namespace framegen {

// Sinusoidal features [cos(t f_i) ..., sin(t f_i) ...] with f_i = 10000^(-i/half).
Tensor timestep_embedding(std::size_t t, std::size_t dim);

struct Modulation {
  Tensor gamma;  // [d]
  Tensor beta;   // [d]
  Tensor gate;   // [d]
};

// One (gamma, beta, gate) triplet per segment branch.
struct ModulationParams {
  std::array<Modulation, 3> branch;

  const Modulation& operator[](Segment s) const { return branch[static_cast<std::size_t>(s)]; }
  Modulation& operator[](Segment s) { return branch[static_cast<std::size_t>(s)]; }
};

// A block modulates twice: before attention and before the MLP.
struct BlockModulation {
  ModulationParams attn;
  ModulationParams mlp;
};

// Branch MLP parameter prefix, e.g. "blocks.0.adaln.cond".
std::string adaln_branch_prefix(std::size_t block, Segment s);

// Each branch k runs its own two-layer MLP f_k(emb(t)) = fc2(silu(fc1(emb))),
// producing 6d values split into (gamma, beta, gate) for attention and MLP.
// Gates are offset by 1 so a zero-initialized fc2 yields gate 1.
BlockModulation modulation(std::size_t t, std::size_t t_max, std::size_t block, std::size_t d,
                           const Linears& linears);

// Per-segment outputs of SC-AdaLN; `joined` concatenates them in layout order.
struct SegmentedTokens {
  std::array<Tensor, 3> parts;
  Layout layout;

  const Tensor& operator[](Segment s) const { return parts[static_cast<std::size_t>(s)]; }
  Tensor joined() const;
};

// LN(k) * (1 + gamma_k) + beta_k applied to each segment k with its own branch.
SegmentedTokens sc_adaln(const Tensor& tokens, const Layout& layout, const ModulationParams& mp,
                         double eps = 1e-6);

// Multiplies each segment's rows by that segment's gate.
Tensor apply_gates(const Tensor& tokens, const Layout& layout, const ModulationParams& mp);

}  // namespace framegen
