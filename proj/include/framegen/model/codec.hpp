#pragma once

#include <cstddef>

#include "framegen/tensor.hpp"

namespace framegen {

// Lossless space-to-depth: [H x W x c] -> [H/s x W/s x c*s*s]. Output vector
// (y, x) is the s x s block at (s*y, s*x) flattened as (dy, dx, channel).
Tensor encode_latent(const Tensor& image, std::size_t s);
// Exact inverse of encode_latent.
Tensor decode_latent(const Tensor& latent, std::size_t s);

// Pixel values in [0, 1] are mapped to [-1, 1] before encoding and back after
// decoding (decoding clamps to [0, 1]).
Tensor image_to_latent(const Tensor& image, std::size_t s);
Tensor latent_to_image(const Tensor& latent, std::size_t s);

}  // namespace framegen
