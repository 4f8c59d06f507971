#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "framegen/model/vocab.hpp"
#include "framegen/rng.hpp"
#include "framegen/tensor.hpp"

namespace framegen {

enum class Task { Canny, Depth, Subject };
std::string_view task_name(Task t);
std::optional<Task> parse_task(std::string_view name);

enum class ShapeKind { Square, Circle, Triangle };
std::string_view shape_word(ShapeKind k);

// Palette names match vocabulary words. Indices below kForegroundColors are
// shape colors; the rest are backgrounds.
inline constexpr std::array<std::string_view, 9> kColorNames = {"red",     "green", "blue", "yellow", "cyan",
                                                                "magenta", "white", "gray", "black"};
inline constexpr std::size_t kForegroundColors = 6;
std::array<double, 3> palette_rgb(std::size_t color);

struct SceneSpec {
  ShapeKind kind = ShapeKind::Square;
  std::size_t color = 0;       // palette index
  std::size_t x = 0;           // bounding box top-left
  std::size_t y = 0;
  std::size_t size = 0;        // bounding box side; 0 = no shape
  std::size_t background = 7;  // palette index

  // Throws ContractError when the shape leaves an H x W canvas.
  void validate(std::size_t h, std::size_t w) const;
};

SceneSpec random_scene(std::size_t h, std::size_t w, Rng& rng);
// Word for where the shape sits: left/right/top/bottom/center.
std::string_view position_word(const SceneSpec& spec, std::size_t h, std::size_t w);

// Exact pixel set of the shape (no antialiasing), row-major [h x w].
std::vector<bool> shape_mask(const SceneSpec& spec, std::size_t h, std::size_t w);
Tensor render_scene(const SceneSpec& spec, std::size_t h, std::size_t w);

inline constexpr double kEdgeThreshold = 0.25;
// Luma, 3x3 Sobel magnitude with clamp-to-edge borders, thresholded: [H x W x 1] in {0, 1}.
Tensor edge_map(const Tensor& image, double threshold = kEdgeThreshold);

inline constexpr double kNearDepth = 0.25;
// 0.25 on the shape, 1.0 elsewhere: [H x W x 1].
Tensor depth_map(const SceneSpec& spec, std::size_t h, std::size_t w);

struct TwoFrameSample {
  Tensor cond_image;    // [H x W x 3]; single-channel maps are replicated
  Tensor target_image;  // [H x W x 3]
  std::vector<std::size_t> caption;  // unpadded ids
  Task task = Task::Canny;
  SceneSpec cond_scene;
  SceneSpec target_scene;
};

struct SubjectPair {
  Tensor cond;
  Tensor target;
  std::vector<std::size_t> caption;
  SceneSpec cond_scene;
  SceneSpec target_scene;
};

// Same shape and color, fresh position/size/background for the target.
// Caption: "<small|large> <noun> <position> on <background>".
SubjectPair subject_pair(const SceneSpec& spec, std::size_t h, std::size_t w, Rng& rng,
                         const Vocabulary& vocab = Vocabulary::builtin());

TwoFrameSample make_sample(Task task, std::size_t image_size, Rng& rng,
                           const Vocabulary& vocab = Vocabulary::builtin());

struct Manifest {
  std::uint64_t seed = 0;
  Task task = Task::Canny;
  std::size_t n = 0;
  std::size_t image_size = 32;
  std::string checksum;  // FNV-1a over the 8-bit payloads and captions

  std::string to_text() const;
  static Manifest parse(std::string_view text);
};

struct Dataset {
  std::vector<TwoFrameSample> samples;
  Manifest manifest;
};

// Sample i draws from Rng(seed).fork(i), so samples are independent.
Dataset make_dataset(Task task, std::size_t n, std::uint64_t seed, std::size_t image_size = 32,
                     const Vocabulary& vocab = Vocabulary::builtin());

// sample_%06d.{cond.ppm,target.ppm,txt} plus manifest.txt.
void write_dataset(const std::filesystem::path& dir, const Dataset& data,
                   const Vocabulary& vocab = Vocabulary::builtin());
// Images come back on the 8-bit grid; scene specs are not stored.
Dataset read_dataset(const std::filesystem::path& dir, const Vocabulary& vocab = Vocabulary::builtin());

std::string dataset_checksum(const std::vector<TwoFrameSample>& samples, const Vocabulary& vocab);

}  // namespace framegen
