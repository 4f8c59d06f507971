#include <filesystem>
#include <fstream>
#include <map>

#include "doctest.h"
#include "framegen/errors.hpp"
#include "framegen/image_io.hpp"
#include "framegen/toy_data.hpp"
#include "support.hpp"

using namespace framegen;
using namespace fgtest;

namespace {

std::size_t count(const std::vector<bool>& mask) { return static_cast<std::size_t>(std::count(mask.begin(), mask.end(), true)); }

// Sobel magnitude by explicit 3x3 convolution over a clamp-padded luma plane.
std::vector<double> sobel_oracle(const Tensor& rgb) {
  const auto h = static_cast<int>(rgb.dim(0)), w = static_cast<int>(rgb.dim(1));
  const int kx[3][3] = {{-1, 0, 1}, {-2, 0, 2}, {-1, 0, 1}};
  const int ky[3][3] = {{-1, -2, -1}, {0, 0, 0}, {1, 2, 1}};
  auto luma = [&](int y, int x) {
    y = std::clamp(y, 0, h - 1);
    x = std::clamp(x, 0, w - 1);
    const auto k = static_cast<std::size_t>(y * w + x) * 3;
    return 0.299 * rgb.at(k) + 0.587 * rgb.at(k + 1) + 0.114 * rgb.at(k + 2);
  };
  std::vector<double> out(static_cast<std::size_t>(h * w));
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      double gx = 0, gy = 0;
      for (int j = 0; j < 3; ++j) {
        for (int i = 0; i < 3; ++i) {
          gx += kx[j][i] * luma(y + j - 1, x + i - 1);
          gy += ky[j][i] * luma(y + j - 1, x + i - 1);
        }
      }
      out[static_cast<std::size_t>(y * w + x)] = std::sqrt(gx * gx + gy * gy);
    }
  }
  return out;
}

std::filesystem::path scratch_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("framegen_test_" + name);
  std::filesystem::remove_all(dir);
  return dir;
}

}  // namespace

TEST_SUITE("toy_data") {
  TEST_CASE("rendering is exact and replayable") {
    SceneSpec bare;
    const auto flat = render_scene(bare, 8, 8);
    for (std::size_t k = 0; k < flat.size(); ++k) CHECK(flat.at(k) == flat.at(k % 3));

    SceneSpec sq{ShapeKind::Square, 0, 10, 10, 12, 7};
    CHECK(count(shape_mask(sq, 32, 32)) == 144);
    CHECK(bitwise_equal(render_scene(sq, 32, 32), render_scene(sq, 32, 32)));

    SceneSpec circle{ShapeKind::Circle, 1, 0, 0, 16, 6};
    const auto m = shape_mask(circle, 32, 32);
    CHECK(count(m) < 256);
    CHECK(count(m) > 150);
    CHECK(m[8 * 32 + 8]);
    CHECK_FALSE(m[0]);

    SceneSpec out{ShapeKind::Square, 0, 25, 0, 8, 7};
    CHECK_THROWS_AS(render_scene(out, 32, 32), ContractError);
  }

  TEST_CASE("every random scene stays on the canvas") {
    Rng rng(3);
    for (int i = 0; i < 200; ++i) {
      const auto s = random_scene(32, 32, rng);
      CHECK_NOTHROW(s.validate(32, 32));
      CHECK(s.size >= 8);
      CHECK(s.color < kForegroundColors);
      CHECK(s.background >= kForegroundColors);
    }
  }

  TEST_CASE("edge map matches a direct Sobel convolution") {
    const auto flat = edge_map(Tensor::full({8, 8, 3}, 0.4));
    for (double v : flat.data()) CHECK(v == 0.0);

    // vertical step between columns 3 and 4
    std::vector<double> px(8 * 8 * 3);
    for (std::size_t y = 0; y < 8; ++y) {
      for (std::size_t x = 4; x < 8; ++x) {
        for (std::size_t c = 0; c < 3; ++c) px[(y * 8 + x) * 3 + c] = 1.0;
      }
    }
    const auto step = Tensor::from({8, 8, 3}, px);
    const auto e = edge_map(step);
    for (std::size_t y = 0; y < 8; ++y) {
      for (std::size_t x = 0; x < 8; ++x) CHECK(e.at(y * 8 + x) == ((x == 3 || x == 4) ? 1.0 : 0.0));
    }

    Rng rng(5);
    for (int trial = 0; trial < 10; ++trial) {
      const auto img = render_scene(random_scene(32, 32, rng), 32, 32);
      const auto mag = sobel_oracle(img);
      const auto got = edge_map(img);
      for (std::size_t k = 0; k < mag.size(); ++k) CHECK(got.at(k) == (mag[k] > kEdgeThreshold ? 1.0 : 0.0));
    }
  }

  TEST_CASE("depth map aligns with the shape mask") {
    SceneSpec bare;
    const auto far = depth_map(bare, 8, 8);
    for (double v : far.data()) CHECK(v == 1.0);
    Rng rng(6);
    for (int trial = 0; trial < 10; ++trial) {
      const auto s = random_scene(32, 32, rng);
      const auto mask = shape_mask(s, 32, 32);
      const auto d = depth_map(s, 32, 32);
      for (std::size_t k = 0; k < mask.size(); ++k) CHECK((d.at(k) == kNearDepth) == mask[k]);
    }
  }

  TEST_CASE("subject pairs keep the subject and name it once") {
    const auto& vocab = Vocabulary::builtin();
    Rng rng(7);
    for (int trial = 0; trial < 20; ++trial) {
      const auto spec = random_scene(32, 32, rng);
      auto r1 = rng.fork(100 + trial), r2 = rng.fork(100 + trial);
      const auto pair = subject_pair(spec, 32, 32, r1);
      const auto again = subject_pair(spec, 32, 32, r2);
      CHECK(bitwise_equal(pair.target, again.target));
      CHECK(pair.caption == again.caption);

      // foreground colour histograms
      auto histogram = [](const Tensor& img, const std::vector<bool>& mask) {
        std::map<std::array<double, 3>, std::size_t> h;
        for (std::size_t k = 0; k < mask.size(); ++k) {
          if (mask[k]) ++h[{img.at(3 * k), img.at(3 * k + 1), img.at(3 * k + 2)}];
        }
        std::map<std::array<double, 3>, double> norm;
        std::size_t total = 0;
        for (const auto& [c, n] : h) total += n;
        for (const auto& [c, n] : h) norm[c] = static_cast<double>(n) / static_cast<double>(total);
        return norm;
      };
      CHECK(histogram(pair.cond, shape_mask(pair.cond_scene, 32, 32)) ==
            histogram(pair.target, shape_mask(pair.target_scene, 32, 32)));
      CHECK(pair.target_scene.kind == spec.kind);
      CHECK(pair.target_scene.color == spec.color);

      std::size_t nouns = 0;
      for (auto id : pair.caption) nouns += vocab.is_noun(id) ? 1 : 0;
      CHECK(nouns == 1);
      CHECK(vocab.tokenize(vocab.decode(pair.caption)) == pair.caption);
    }
  }

  TEST_CASE("datasets are deterministic and aligned tasks regenerate their condition") {
    const auto& vocab = Vocabulary::builtin();
    CHECK_FALSE(parse_task("segmentation").has_value());
    CHECK(parse_task("canny") == Task::Canny);

    const auto empty = make_dataset(Task::Canny, 0, 1);
    CHECK(empty.samples.empty());
    CHECK(empty.manifest.n == 0);

    const auto a = make_dataset(Task::Canny, 12, 42), b = make_dataset(Task::Canny, 12, 42);
    CHECK(a.manifest.checksum == b.manifest.checksum);
    CHECK(a.manifest.checksum != make_dataset(Task::Canny, 12, 43).manifest.checksum);
    for (const auto& s : a.samples) {
      CHECK(bitwise_equal(s.cond_image, gray_to_rgb(edge_map(s.target_image))));
      for (double v : s.target_image.data()) CHECK((v >= 0.0 && v <= 1.0));
      CHECK(vocab.tokenize(vocab.decode(s.caption)) == s.caption);
    }
    for (const auto& s : make_dataset(Task::Depth, 8, 2).samples) {
      CHECK(bitwise_equal(s.cond_image, gray_to_rgb(depth_map(s.target_scene, 32, 32))));
    }
  }

  TEST_CASE("datasets survive a trip through disk") {
    const auto dir = scratch_dir("dataset");
    const auto data = make_dataset(Task::Subject, 5, 9);
    write_dataset(dir, data);
    CHECK(std::filesystem::exists(dir / "sample_000004.cond.ppm"));
    CHECK(std::filesystem::exists(dir / "sample_000004.txt"));
    const auto back = read_dataset(dir);
    CHECK(back.manifest.checksum == data.manifest.checksum);
    REQUIRE(back.samples.size() == 5);
    for (std::size_t i = 0; i < 5; ++i) {
      CHECK(bitwise_equal(back.samples[i].target_image, quantize8(data.samples[i].target_image)));
      CHECK(back.samples[i].caption == data.samples[i].caption);
    }

    const auto empty_dir = scratch_dir("empty");
    write_dataset(empty_dir, make_dataset(Task::Canny, 0, 1));
    std::size_t files = 0;
    for ([[maybe_unused]] const auto& e : std::filesystem::directory_iterator(empty_dir)) ++files;
    CHECK(files == 1);
    CHECK(read_dataset(empty_dir).samples.empty());

    // a flipped payload byte is caught by the checksum
    const auto target = dir / "sample_000002.target.ppm";
    auto bytes = encode_pnm(read_pnm(target));
    bytes.back() = static_cast<char>(bytes.back() ^ 0x10);
    {
      std::ofstream f(target, std::ios::binary | std::ios::trunc);
      f << bytes;
    }
    CHECK_THROWS_AS(read_dataset(dir), IoError);
    std::filesystem::remove_all(dir);
    std::filesystem::remove_all(empty_dir);
  }
}

TEST_SUITE("image_io") {
  TEST_CASE("pnm round trips on the 8-bit grid") {
    const auto img = quantize8(random_tensor({5, 7, 3}, 1, 0.2));
    CHECK_THROWS(encode_pnm(Tensor::zeros({5, 7, 2})));
    std::vector<double> clamped(img.data().begin(), img.data().end());
    for (auto& v : clamped) v = std::clamp(v, 0.0, 1.0);
    const auto in = Tensor::from({5, 7, 3}, clamped);
    const auto bytes = encode_pnm(in);
    CHECK(bytes.starts_with("P6"));
    CHECK(bitwise_equal(decode_pnm(bytes), quantize8(in)));

    const auto gray = quantize8(Tensor::full({4, 4, 1}, 0.3));
    CHECK(encode_pnm(gray).starts_with("P5"));
    CHECK(bitwise_equal(decode_pnm(encode_pnm(gray)), gray));
    CHECK(gray.at(0) == 77.0 / 255.0);
    CHECK_THROWS_AS(decode_pnm("P6\n2 2\n255\nab"), IoError);
    CHECK_THROWS_AS(decode_pnm("P3\n1 1\n255\n0 0 0"), IoError);
  }
}
