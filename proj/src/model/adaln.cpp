#include "framegen/model/adaln.hpp"

#include <cmath>

#include "framegen/ops.hpp"

namespace framegen {

Tensor Linears::operator()(const Tensor& x, std::string_view prefix) const {
  const std::string w_name = std::string(prefix) + ".W";
  const std::string b_name = std::string(prefix) + ".b";
  const LoraAdapter* adapter = adapters_ ? adapters_->find(w_name) : nullptr;
  Tensor y = adapted_matmul(x, params_->get(w_name), adapter);
  if (params_->contains(b_name)) y = add_rowvec(y, params_->get(b_name));
  return y;
}

Tensor timestep_embedding(std::size_t t, std::size_t dim) {
  if (dim < 2 || dim % 2 != 0) throw DimensionError("timestep embedding width must be even, got " + std::to_string(dim));
  const auto half = dim / 2;
  std::vector<double> out(dim);
  for (std::size_t i = 0; i < half; ++i) {
    const double freq = std::exp(-std::log(10000.0) * static_cast<double>(i) / static_cast<double>(half));
    out[i] = std::cos(static_cast<double>(t) * freq);
    out[half + i] = std::sin(static_cast<double>(t) * freq);
  }
  return Tensor::from({1, dim}, std::move(out));
}

std::string adaln_branch_prefix(std::size_t block, Segment s) {
  return "blocks." + std::to_string(block) + ".adaln." + std::string(segment_name(s));
}

BlockModulation modulation(std::size_t t, std::size_t t_max, std::size_t block, std::size_t d,
                           const Linears& linears) {
  if (t >= t_max) {
    throw ContractError("timestep " + std::to_string(t) + " outside [0, " + std::to_string(t_max) + ")");
  }
  const auto emb = timestep_embedding(t, d);
  BlockModulation out;
  for (auto s : kSegments) {
    const auto prefix = adaln_branch_prefix(block, s);
    const auto h = silu(linears(emb, prefix + ".fc1"));
    const auto raw = linears(h, prefix + ".fc2");  // [1 x 6d]
    if (raw.size() != 6 * d) {
      throw DimensionError("modulation branch '" + prefix + "' produced " + shape_str(raw.shape()));
    }
    auto chunk = [&](std::size_t i) { return reshape(slice_cols(raw, i * d, (i + 1) * d), {d}); };
    out.attn[s] = {chunk(0), chunk(1), add_scalar(chunk(2), 1.0)};
    out.mlp[s] = {chunk(3), chunk(4), add_scalar(chunk(5), 1.0)};
  }
  return out;
}

Tensor SegmentedTokens::joined() const { return concat_rows(parts); }

SegmentedTokens sc_adaln(const Tensor& tokens, const Layout& layout, const ModulationParams& mp, double eps) {
  if (tokens.rank() != 2 || tokens.dim(0) != layout.total()) {
    throw DimensionError("sc_adaln: tokens " + shape_str(tokens.shape()) + " vs layout of " +
                         std::to_string(layout.total()));
  }
  SegmentedTokens out;
  out.layout = layout;
  for (auto s : kSegments) {
    const auto& m = mp[s];
    const auto seg = slice_rows(tokens, layout.begin(s), layout.end(s));
    out.parts[static_cast<std::size_t>(s)] =
        add_rowvec(mul_rowvec(layer_norm(seg, eps), add_scalar(m.gamma, 1.0)), m.beta);
  }
  return out;
}

Tensor apply_gates(const Tensor& tokens, const Layout& layout, const ModulationParams& mp) {
  std::array<Tensor, 3> parts;
  for (auto s : kSegments) {
    parts[static_cast<std::size_t>(s)] = mul_rowvec(slice_rows(tokens, layout.begin(s), layout.end(s)), mp[s].gate);
  }
  return concat_rows(parts);
}

}  // namespace framegen
