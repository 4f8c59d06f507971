#include "framegen/model/tokens.hpp"

#include <algorithm>

#include "framegen/ops.hpp"

namespace framegen {

std::string_view segment_name(Segment s) {
  switch (s) {
    case Segment::Text: return "text";
    case Segment::Cond: return "cond";
    case Segment::Target: return "target";
  }
  return "?";
}

std::size_t Layout::begin(Segment s) const {
  switch (s) {
    case Segment::Text: return 0;
    case Segment::Cond: return text;
    case Segment::Target: return text + cond;
  }
  return 0;
}

std::size_t Layout::end(Segment s) const {
  switch (s) {
    case Segment::Text: return text;
    case Segment::Cond: return text + cond;
    case Segment::Target: return text + cond + target;
  }
  return 0;
}

Segment Layout::segment_of(std::size_t index) const {
  if (index < text) return Segment::Text;
  if (index < text + cond) return Segment::Cond;
  if (index < total()) return Segment::Target;
  throw DimensionError("token index " + std::to_string(index) + " outside layout of length " +
                       std::to_string(total()));
}

Tensor TokenSequence::segment(Segment s) const { return slice_rows(tokens, layout.begin(s), layout.end(s)); }

Tensor patchify_video(const Tensor& video, std::size_t pt, std::size_t p) {
  if (video.rank() != 4) throw DimensionError("patchify_video expects [T x h x w x c], got " + shape_str(video.shape()));
  const auto T = video.dim(0), h = video.dim(1), w = video.dim(2), c = video.dim(3);
  if (pt == 0 || p == 0 || T % pt != 0 || h % p != 0 || w % p != 0) {
    throw DimensionError("patchify_video: " + shape_str(video.shape()) + " not divisible by patch (" +
                         std::to_string(pt) + ", " + std::to_string(p) + ", " + std::to_string(p) + ")");
  }
  const auto gt = T / pt, gy = h / p, gx = w / p;
  const auto dim = pt * p * p * c;
  std::vector<std::size_t> index;
  index.reserve(video.size());
  for (std::size_t a = 0; a < gt; ++a) {
    for (std::size_t by = 0; by < gy; ++by) {
      for (std::size_t bx = 0; bx < gx; ++bx) {
        for (std::size_t dt = 0; dt < pt; ++dt) {
          for (std::size_t dy = 0; dy < p; ++dy) {
            for (std::size_t dx = 0; dx < p; ++dx) {
              const auto base = (((a * pt + dt) * h + by * p + dy) * w + bx * p + dx) * c;
              for (std::size_t ch = 0; ch < c; ++ch) index.push_back(base + ch);
            }
          }
        }
      }
    }
  }
  return gather(video, std::move(index), {gt * gy * gx, dim});
}

PatchTokens patchify_replicate(const TwoFrameLatents& latents, std::size_t p) {
  if (latents.cond.shape() != latents.target.shape()) {
    throw DimensionError("condition latent " + shape_str(latents.cond.shape()) + " and target latent " +
                         shape_str(latents.target.shape()) + " differ");
  }
  if (latents.cond.rank() != 3) {
    throw DimensionError("patchify_replicate expects [h x w x c] latents, got " + shape_str(latents.cond.shape()));
  }
  const auto h = latents.cond.dim(0), w = latents.cond.dim(1), c = latents.cond.dim(2);
  if (p == 0 || h % p != 0 || w % p != 0) {
    throw DimensionError("patchify_replicate: latent " + shape_str(latents.cond.shape()) +
                         " not divisible by patch " + std::to_string(p));
  }
  std::vector<Tensor> frames;
  const auto cond_frame = reshape(latents.cond, {1, h, w, c});
  const auto target_frame = reshape(latents.target, {1, h, w, c});
  for (std::size_t i = 0; i < p; ++i) frames.push_back(cond_frame);
  for (std::size_t i = 0; i < p; ++i) frames.push_back(target_frame);
  const auto video = concat_rows(frames);  // [2p x h x w x c]
  const auto tokens = patchify_video(video, p, p);
  const auto n = (h / p) * (w / p);

  PatchTokens out{slice_rows(tokens, 0, n), slice_rows(tokens, n, 2 * n), {}, {}};
  for (std::size_t by = 0; by < h / p; ++by) {
    for (std::size_t bx = 0; bx < w / p; ++bx) {
      out.cond_positions.push_back({0, static_cast<int>(by), static_cast<int>(bx), false});
      out.target_positions.push_back({1, static_cast<int>(by), static_cast<int>(bx), false});
    }
  }
  return out;
}

Tensor unpatchify(const Tensor& tokens, std::size_t h, std::size_t w, std::size_t channels, std::size_t p,
                  ReplicaMode mode) {
  if (p == 0 || h % p != 0 || w % p != 0) {
    throw DimensionError("unpatchify: " + std::to_string(h) + "x" + std::to_string(w) + " not divisible by patch " +
                         std::to_string(p));
  }
  const auto gy = h / p, gx = w / p;
  const auto dim = p * p * p * channels;
  if (tokens.rank() != 2 || tokens.dim(0) != gy * gx || tokens.dim(1) != dim) {
    throw DimensionError("unpatchify: tokens " + shape_str(tokens.shape()) + " do not match layout [" +
                         std::to_string(gy * gx) + "x" + std::to_string(dim) + "]");
  }
  std::vector<Tensor> copies;
  for (std::size_t dt = 0; dt < p; ++dt) {
    std::vector<std::size_t> index(h * w * channels);
    for (std::size_t y = 0; y < h; ++y) {
      for (std::size_t x = 0; x < w; ++x) {
        const auto token = (y / p) * gx + x / p;
        const auto inner = ((dt * p + y % p) * p + x % p) * channels;
        for (std::size_t ch = 0; ch < channels; ++ch) index[(y * w + x) * channels + ch] = token * dim + inner + ch;
      }
    }
    copies.push_back(gather(tokens, std::move(index), {h, w, channels}));
  }
  if (mode == ReplicaMode::Exact) {
    for (std::size_t dt = 1; dt < p; ++dt) {
      if (!std::ranges::equal(copies[dt].data(), copies[0].data())) {
        throw ContractError("unpatchify: replicated temporal copies disagree");
      }
    }
    return copies[0];
  }
  Tensor acc = copies[0];
  for (std::size_t dt = 1; dt < p; ++dt) acc = add(acc, copies[dt]);
  return p == 1 ? acc : scale(acc, 1.0 / static_cast<double>(p));
}

Tensor embed_text(std::span<const std::size_t> ids, const Tensor& table) {
  if (table.rank() != 2) throw DimensionError("text table must be [vocab x d], got " + shape_str(table.shape()));
  for (auto id : ids) {
    if (id >= table.dim(0)) {
      throw VocabularyError("token id " + std::to_string(id) + " outside vocabulary of " +
                            std::to_string(table.dim(0)));
    }
  }
  return gather_rows(table, ids);
}

std::optional<Tensor> extract_instance_embedding(std::span<const std::size_t> ids,
                                                 const std::vector<bool>& keyword_flags, const Tensor& table) {
  std::vector<std::size_t> found;
  for (auto id : ids) {
    if (id < keyword_flags.size() && keyword_flags[id] && std::ranges::find(found, id) == found.end()) {
      found.push_back(id);
    }
  }
  if (found.empty()) return std::nullopt;
  return mean_rows(embed_text(found, table));
}

Tensor uce_apply(const Tensor& cond, const std::optional<Tensor>& instance, const Tensor& proj_w,
                 const Tensor& bias_c) {
  if (cond.rank() != 2) throw DimensionError("uce_apply: cond must be [n x d], got " + shape_str(cond.shape()));
  const auto d = cond.dim(1);
  if (bias_c.size() != d) {
    throw DimensionError("uce_apply: bias_c " + shape_str(bias_c.shape()) + " vs width " + std::to_string(d));
  }
  Tensor out = cond;
  if (instance) {
    if (instance->size() != d || proj_w.shape() != Shape{d, d}) {
      throw DimensionError("uce_apply: instance " + shape_str(instance->shape()) + " / projection " +
                           shape_str(proj_w.shape()) + " vs width " + std::to_string(d));
    }
    out = add_rowvec(out, matmul_nt(reshape(*instance, {1, d}), proj_w));
  }
  return add_rowvec(out, bias_c);
}

TokenSequence build_sequence(const Tensor& text_emb, const Tensor& cond_tokens, const Tensor& target_tokens,
                             std::span<const Position> cond_positions, std::span<const Position> target_positions) {
  for (const auto* t : {&text_emb, &cond_tokens, &target_tokens}) {
    if (t->rank() != 2) throw DimensionError("build_sequence expects rank-2 inputs, got " + shape_str(t->shape()));
  }
  const auto d = text_emb.dim(1);
  if (cond_tokens.dim(1) != d || target_tokens.dim(1) != d) {
    throw DimensionError("build_sequence: widths " + shape_str(text_emb.shape()) + ", " +
                         shape_str(cond_tokens.shape()) + ", " + shape_str(target_tokens.shape()));
  }
  if (cond_tokens.dim(0) != target_tokens.dim(0)) {
    throw DimensionError("build_sequence: cond and target token counts differ");
  }
  if (cond_positions.size() != cond_tokens.dim(0) || target_positions.size() != target_tokens.dim(0)) {
    throw DimensionError("build_sequence: position count does not match token count");
  }
  TokenSequence seq;
  const std::array<Tensor, 3> parts{text_emb, cond_tokens, target_tokens};
  seq.tokens = concat_rows(parts);
  seq.layout = {text_emb.dim(0), cond_tokens.dim(0), target_tokens.dim(0)};
  seq.positions.assign(text_emb.dim(0), Position::sentinel());
  seq.positions.insert(seq.positions.end(), cond_positions.begin(), cond_positions.end());
  seq.positions.insert(seq.positions.end(), target_positions.begin(), target_positions.end());
  return seq;
}

}  // namespace framegen
