#include "framegen/model/codec.hpp"

#include <algorithm>

#include "framegen/ops.hpp"

namespace framegen {

namespace {

void require_rank3(const Tensor& t, const char* what) {
  if (t.rank() != 3) throw DimensionError(std::string(what) + " expects [H x W x c], got " + shape_str(t.shape()));
}

}  // namespace

Tensor encode_latent(const Tensor& image, std::size_t s) {
  require_rank3(image, "encode_latent");
  const auto h = image.dim(0), w = image.dim(1), c = image.dim(2);
  if (s == 0 || h % s != 0 || w % s != 0) {
    throw DimensionError("encode_latent: " + shape_str(image.shape()) + " not divisible by stride " +
                         std::to_string(s));
  }
  const auto lh = h / s, lw = w / s, lc = c * s * s;
  std::vector<std::size_t> index;
  index.reserve(image.size());
  for (std::size_t y = 0; y < lh; ++y) {
    for (std::size_t x = 0; x < lw; ++x) {
      for (std::size_t dy = 0; dy < s; ++dy) {
        for (std::size_t dx = 0; dx < s; ++dx) {
          for (std::size_t ch = 0; ch < c; ++ch) index.push_back(((y * s + dy) * w + (x * s + dx)) * c + ch);
        }
      }
    }
  }
  return gather(image, std::move(index), {lh, lw, lc});
}

Tensor decode_latent(const Tensor& latent, std::size_t s) {
  require_rank3(latent, "decode_latent");
  const auto lh = latent.dim(0), lw = latent.dim(1), lc = latent.dim(2);
  if (s == 0 || lc % (s * s) != 0) {
    throw DimensionError("decode_latent: channel count of " + shape_str(latent.shape()) +
                         " not divisible by stride^2 = " + std::to_string(s * s));
  }
  const auto h = lh * s, w = lw * s, c = lc / (s * s);
  std::vector<std::size_t> index(latent.size());
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      for (std::size_t ch = 0; ch < c; ++ch) {
        const auto src = ((y / s) * lw + (x / s)) * lc + ((y % s) * s + (x % s)) * c + ch;
        index[(y * w + x) * c + ch] = src;
      }
    }
  }
  return gather(latent, std::move(index), {h, w, c});
}

Tensor image_to_latent(const Tensor& image, std::size_t s) {
  return encode_latent(add_scalar(scale(image, 2.0), -1.0), s);
}

Tensor latent_to_image(const Tensor& latent, std::size_t s) {
  const auto img = decode_latent(latent, s);
  std::vector<double> px(img.data().begin(), img.data().end());
  for (auto& v : px) v = std::clamp(0.5 * (v + 1.0), 0.0, 1.0);
  return Tensor::from(img.shape(), std::move(px));
}

}  // namespace framegen
