#include "framegen/image_io.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

namespace framegen {

namespace {

unsigned char to_byte(double v) {
  return static_cast<unsigned char>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
}

void require_image(const Tensor& image) {
  if (image.rank() != 3 || (image.dim(2) != 1 && image.dim(2) != 3)) {
    throw DimensionError("expected an [H x W x 1|3] image, got " + shape_str(image.shape()));
  }
}

}  // namespace

std::string encode_pnm(const Tensor& image) {
  require_image(image);
  const auto h = image.dim(0), w = image.dim(1), c = image.dim(2);
  std::string out = (c == 3 ? "P6\n" : "P5\n") + std::to_string(w) + " " + std::to_string(h) + "\n255\n";
  out.reserve(out.size() + image.size());
  for (double v : image.data()) out.push_back(static_cast<char>(to_byte(v)));
  return out;
}

Tensor decode_pnm(std::string_view bytes) {
  std::size_t pos = 0;
  auto next_token = [&]() {
    while (pos < bytes.size()) {
      if (bytes[pos] == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      } else if (std::isspace(static_cast<unsigned char>(bytes[pos]))) {
        ++pos;
      } else {
        break;
      }
    }
    const auto start = pos;
    while (pos < bytes.size() && !std::isspace(static_cast<unsigned char>(bytes[pos]))) ++pos;
    return std::string(bytes.substr(start, pos - start));
  };
  const auto magic = next_token();
  if (magic != "P5" && magic != "P6") throw IoError("unsupported image format '" + magic + "' (need P5 or P6)");
  std::size_t w = 0, h = 0, maxval = 0;
  try {
    w = std::stoul(next_token());
    h = std::stoul(next_token());
    maxval = std::stoul(next_token());
  } catch (const std::exception&) {
    throw IoError("malformed PNM header");
  }
  if (maxval != 255) throw IoError("only maxval 255 is supported");
  ++pos;  // single whitespace after maxval
  const std::size_t c = magic == "P6" ? 3 : 1;
  const auto n = w * h * c;
  if (pos > bytes.size() || bytes.size() - pos != n) throw IoError("PNM payload size does not match header");
  std::vector<double> px(n);
  for (std::size_t i = 0; i < n; ++i) px[i] = static_cast<unsigned char>(bytes[pos + i]) / 255.0;
  return Tensor::from({h, w, c}, std::move(px));
}

void write_pnm(const std::filesystem::path& path, const Tensor& image) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot write " + path.string());
  const auto bytes = encode_pnm(image);
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw IoError("short write to " + path.string());
}

Tensor read_pnm(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open image " + path.string());
  std::ostringstream ss;
  ss << f.rdbuf();
  return decode_pnm(ss.str());
}

Tensor quantize8(const Tensor& image) {
  std::vector<double> px(image.data().begin(), image.data().end());
  for (auto& v : px) v = to_byte(v) / 255.0;
  return Tensor::from(image.shape(), std::move(px));
}

Tensor gray_to_rgb(const Tensor& image) {
  if (image.rank() != 3 || image.dim(2) != 1) throw DimensionError("gray_to_rgb expects [H x W x 1]");
  std::vector<double> px;
  px.reserve(image.size() * 3);
  for (double v : image.data()) px.insert(px.end(), {v, v, v});
  return Tensor::from({image.dim(0), image.dim(1), 3}, std::move(px));
}

}  // namespace framegen
