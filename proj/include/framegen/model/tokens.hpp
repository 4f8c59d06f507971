#pragma once

#include <array>
#include <cstddef>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include "framegen/tensor.hpp"

namespace framegen {

enum class Segment : std::size_t { Text = 0, Cond = 1, Target = 2 };
inline constexpr std::array<Segment, 3> kSegments = {Segment::Text, Segment::Cond, Segment::Target};
std::string_view segment_name(Segment s);

// Sizes of the three contiguous segments [text; cond; target].
struct Layout {
  std::size_t text = 0;
  std::size_t cond = 0;
  std::size_t target = 0;

  std::size_t total() const { return text + cond + target; }
  std::size_t begin(Segment s) const;
  std::size_t end(Segment s) const;
  std::size_t length(Segment s) const { return end(s) - begin(s); }
  Segment segment_of(std::size_t index) const;

  bool operator==(const Layout&) const = default;
};

// (t, y, x) grid coordinate of a token; text tokens carry the `none` sentinel.
struct Position {
  int t = 0;
  int y = 0;
  int x = 0;
  bool none = false;

  static Position sentinel() { return {0, 0, 0, true}; }
  bool operator==(const Position&) const = default;
};

struct TwoFrameLatents {
  Tensor cond;    // [h x w x d_lat]
  Tensor target;  // same shape
};

struct TokenSequence {
  Tensor tokens;  // [L x d]
  Layout layout;
  std::vector<Position> positions;

  Tensor segment(Segment s) const;
};

struct PatchTokens {
  Tensor cond;    // [N x p^3 d_lat]
  Tensor target;  // [N x p^3 d_lat]
  std::vector<Position> cond_positions;
  std::vector<Position> target_positions;
};

// Splits a frame stack [T x h x w x c] into (pt x p x p) tubelets, row-major
// over (time group, grid y, grid x); each token is flattened (dt, dy, dx, c).
Tensor patchify_video(const Tensor& video, std::size_t pt, std::size_t p);

// Each frame is repeated p times along time before a factor-p temporal
// grouping, so every tubelet draws from a single source frame. Cond tokens
// sit at t=0, target tokens at t=1.
PatchTokens patchify_replicate(const TwoFrameLatents& latents, std::size_t p);

enum class ReplicaMode {
  Exact,    // replicated copies must agree bitwise (reconstructing inputs)
  Average,  // average the copies (inverting model output)
};

// Inverse of patchify_replicate for one frame's tokens.
Tensor unpatchify(const Tensor& tokens, std::size_t h, std::size_t w, std::size_t channels, std::size_t p,
                  ReplicaMode mode);

// Plain row lookup; every id must be < vocabulary size.
Tensor embed_text(std::span<const std::size_t> ids, const Tensor& table);

// Mean embedding of the distinct keyword-flagged ids in the prompt, or nullopt
// if the prompt names none.
std::optional<Tensor> extract_instance_embedding(std::span<const std::size_t> ids,
                                                 const std::vector<bool>& keyword_flags, const Tensor& table);

// cond + W . instance + bias_c, broadcast over every condition token.
Tensor uce_apply(const Tensor& cond, const std::optional<Tensor>& instance, const Tensor& proj_w,
                 const Tensor& bias_c);

TokenSequence build_sequence(const Tensor& text_emb, const Tensor& cond_tokens, const Tensor& target_tokens,
                             std::span<const Position> cond_positions, std::span<const Position> target_positions);

}  // namespace framegen
