#pragma once

#include <filesystem>
#include <string>

#include "framegen/tensor.hpp"

namespace framegen {

// Images are [H x W x c] tensors with values in [0, 1]; c is 1 or 3.
// Writing quantizes to 8 bits (round to nearest); P6 for c=3, P5 for c=1.
std::string encode_pnm(const Tensor& image);
Tensor decode_pnm(std::string_view bytes);  // accepts P5 and P6, maxval 255

void write_pnm(const std::filesystem::path& path, const Tensor& image);
Tensor read_pnm(const std::filesystem::path& path);

// Values snapped to the 8-bit grid the file formats store.
Tensor quantize8(const Tensor& image);
// Replicates a single-channel image to 3 channels.
Tensor gray_to_rgb(const Tensor& image);

}  // namespace framegen
