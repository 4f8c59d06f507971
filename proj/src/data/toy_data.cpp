#include "framegen/toy_data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>

#include "framegen/errors.hpp"
#include "framegen/image_io.hpp"
#include "framegen/util.hpp"

namespace framegen {

std::string_view task_name(Task t) {
  switch (t) {
    case Task::Canny: return "canny";
    case Task::Depth: return "depth";
    case Task::Subject: return "subject";
  }
  return "?";
}

std::optional<Task> parse_task(std::string_view name) {
  if (name == "canny") return Task::Canny;
  if (name == "depth") return Task::Depth;
  if (name == "subject") return Task::Subject;
  return std::nullopt;
}

std::string_view shape_word(ShapeKind k) {
  switch (k) {
    case ShapeKind::Square: return "square";
    case ShapeKind::Circle: return "circle";
    case ShapeKind::Triangle: return "triangle";
  }
  return "?";
}

// Luma of every foreground color differs from every background by at least
// 0.08, so shape outlines always clear the edge threshold.
std::array<double, 3> palette_rgb(std::size_t color) {
  static constexpr std::array<std::array<double, 3>, 9> kPalette = {{
      {0.85, 0.15, 0.15},
      {0.10, 0.55, 0.10},
      {0.15, 0.25, 0.85},
      {0.90, 0.85, 0.15},
      {0.15, 0.80, 0.85},
      {0.75, 0.10, 0.75},
      {0.90, 0.90, 0.90},
      {0.50, 0.50, 0.50},
      {0.10, 0.10, 0.10},
  }};
  if (color >= kPalette.size()) throw ContractError("palette index " + std::to_string(color) + " out of range");
  return kPalette[color];
}

void SceneSpec::validate(std::size_t h, std::size_t w) const {
  if (color >= kColorNames.size() || background >= kColorNames.size()) {
    throw ContractError("scene color index out of range");
  }
  if (size > 0 && (x + size > w || y + size > h)) {
    throw ContractError("shape at (" + std::to_string(x) + "," + std::to_string(y) + ") size " + std::to_string(size) +
                        " leaves the " + std::to_string(h) + "x" + std::to_string(w) + " canvas");
  }
}

SceneSpec random_scene(std::size_t h, std::size_t w, Rng& rng) {
  const auto side = std::min(h, w);
  const auto lo = std::max<std::size_t>(side / 4, 2), hi = std::max(side / 2, lo);
  SceneSpec s;
  s.kind = static_cast<ShapeKind>(rng.below(3));
  s.color = rng.below(kForegroundColors);
  s.background = kForegroundColors + rng.below(kColorNames.size() - kForegroundColors);
  s.size = lo + rng.below(hi - lo + 1);
  s.x = rng.below(w - s.size + 1);
  s.y = rng.below(h - s.size + 1);
  return s;
}

std::string_view position_word(const SceneSpec& spec, std::size_t h, std::size_t w) {
  const double dx = static_cast<double>(spec.x) + spec.size / 2.0 - w / 2.0;
  const double dy = static_cast<double>(spec.y) + spec.size / 2.0 - h / 2.0;
  if (std::max(std::abs(dx), std::abs(dy)) < std::min(h, w) / 8.0) return "center";
  if (std::abs(dx) >= std::abs(dy)) return dx < 0 ? "left" : "right";
  return dy < 0 ? "top" : "bottom";
}

std::vector<bool> shape_mask(const SceneSpec& spec, std::size_t h, std::size_t w) {
  spec.validate(h, w);
  std::vector<bool> mask(h * w, false);
  const double s = static_cast<double>(spec.size);
  const double r = s / 2.0;
  for (std::size_t j = 0; j < spec.size; ++j) {
    for (std::size_t i = 0; i < spec.size; ++i) {
      // pixel centre relative to the bounding box
      const double px = i + 0.5, py = j + 0.5;
      bool in = false;
      switch (spec.kind) {
        case ShapeKind::Square: in = true; break;
        case ShapeKind::Circle: in = (px - r) * (px - r) + (py - r) * (py - r) <= r * r; break;
        case ShapeKind::Triangle: in = std::abs(px - r) <= py / 2.0; break;
      }
      if (in) mask[(spec.y + j) * w + spec.x + i] = true;
    }
  }
  return mask;
}

Tensor render_scene(const SceneSpec& spec, std::size_t h, std::size_t w) {
  const auto mask = shape_mask(spec, h, w);
  const auto fg = palette_rgb(spec.color), bg = palette_rgb(spec.background);
  std::vector<double> px(h * w * 3);
  for (std::size_t k = 0; k < h * w; ++k) {
    const auto& c = mask[k] ? fg : bg;
    std::copy(c.begin(), c.end(), px.begin() + static_cast<std::ptrdiff_t>(3 * k));
  }
  return Tensor::from({h, w, 3}, std::move(px));
}

Tensor edge_map(const Tensor& image, double threshold) {
  if (image.rank() != 3 || (image.dim(2) != 1 && image.dim(2) != 3)) {
    throw DimensionError("edge_map expects [H x W x 1|3], got " + shape_str(image.shape()));
  }
  const auto h = image.dim(0), w = image.dim(1), c = image.dim(2);
  const auto src = image.data();
  std::vector<double> gray(h * w);
  for (std::size_t k = 0; k < h * w; ++k) {
    gray[k] = c == 1 ? src[k] : 0.299 * src[3 * k] + 0.587 * src[3 * k + 1] + 0.114 * src[3 * k + 2];
  }
  auto at = [&](std::ptrdiff_t y, std::ptrdiff_t x) {
    y = std::clamp<std::ptrdiff_t>(y, 0, static_cast<std::ptrdiff_t>(h) - 1);
    x = std::clamp<std::ptrdiff_t>(x, 0, static_cast<std::ptrdiff_t>(w) - 1);
    return gray[static_cast<std::size_t>(y) * w + static_cast<std::size_t>(x)];
  };
  std::vector<double> out(h * w);
  for (std::ptrdiff_t y = 0; y < static_cast<std::ptrdiff_t>(h); ++y) {
    for (std::ptrdiff_t x = 0; x < static_cast<std::ptrdiff_t>(w); ++x) {
      const double gx = (at(y - 1, x + 1) + 2 * at(y, x + 1) + at(y + 1, x + 1)) -
                        (at(y - 1, x - 1) + 2 * at(y, x - 1) + at(y + 1, x - 1));
      const double gy = (at(y + 1, x - 1) + 2 * at(y + 1, x) + at(y + 1, x + 1)) -
                        (at(y - 1, x - 1) + 2 * at(y - 1, x) + at(y - 1, x + 1));
      out[static_cast<std::size_t>(y) * w + static_cast<std::size_t>(x)] =
          std::sqrt(gx * gx + gy * gy) > threshold ? 1.0 : 0.0;
    }
  }
  return Tensor::from({h, w, 1}, std::move(out));
}

Tensor depth_map(const SceneSpec& spec, std::size_t h, std::size_t w) {
  const auto mask = shape_mask(spec, h, w);
  std::vector<double> out(h * w);
  for (std::size_t k = 0; k < h * w; ++k) out[k] = mask[k] ? kNearDepth : 1.0;
  return Tensor::from({h, w, 1}, std::move(out));
}

namespace {

std::vector<std::size_t> caption_ids(const Vocabulary& vocab, std::initializer_list<std::string_view> words) {
  std::vector<std::size_t> ids;
  for (auto word : words) ids.push_back(vocab.id(word));
  return ids;
}

}  // namespace

SubjectPair subject_pair(const SceneSpec& spec, std::size_t h, std::size_t w, Rng& rng, const Vocabulary& vocab) {
  spec.validate(h, w);
  auto target = random_scene(h, w, rng);
  target.kind = spec.kind;
  target.color = spec.color;
  const auto side = std::min(h, w);
  const auto mid = (side / 4 + side / 2) / 2;
  SubjectPair out;
  out.cond_scene = spec;
  out.target_scene = target;
  out.cond = render_scene(spec, h, w);
  out.target = render_scene(target, h, w);
  out.caption = caption_ids(vocab, {target.size <= mid ? "small" : "large", shape_word(target.kind),
                                    position_word(target, h, w), "on", kColorNames[target.background]});
  return out;
}

TwoFrameSample make_sample(Task task, std::size_t image_size, Rng& rng, const Vocabulary& vocab) {
  const auto n = image_size;
  TwoFrameSample s;
  s.task = task;
  const auto scene = random_scene(n, n, rng);
  if (task == Task::Subject) {
    auto pair = subject_pair(scene, n, n, rng, vocab);
    s.cond_image = std::move(pair.cond);
    s.target_image = std::move(pair.target);
    s.caption = std::move(pair.caption);
    s.cond_scene = pair.cond_scene;
    s.target_scene = pair.target_scene;
    return s;
  }
  s.cond_scene = s.target_scene = scene;
  s.target_image = render_scene(scene, n, n);
  s.cond_image = gray_to_rgb(task == Task::Canny ? edge_map(s.target_image) : depth_map(scene, n, n));
  s.caption = caption_ids(vocab, {kColorNames[scene.color], shape_word(scene.kind), position_word(scene, n, n), "on",
                                  kColorNames[scene.background]});
  return s;
}

std::string dataset_checksum(const std::vector<TwoFrameSample>& samples, const Vocabulary& vocab) {
  std::uint64_t h = kFnvOffset;
  for (const auto& s : samples) {
    h = fnv1a64(encode_pnm(s.cond_image), h);
    h = fnv1a64(encode_pnm(s.target_image), h);
    h = fnv1a64(vocab.decode(s.caption) + "\n", h);
  }
  return hex64(h);
}

std::string Manifest::to_text() const {
  std::ostringstream os;
  os << "version=" << kToolVersion << "\n"
     << "task=" << task_name(task) << "\n"
     << "n=" << n << "\n"
     << "seed=" << seed << "\n"
     << "image_size=" << image_size << "\n"
     << "checksum=" << checksum << "\n";
  return os.str();
}

Manifest Manifest::parse(std::string_view text) {
  std::map<std::string, std::string, std::less<>> kv;
  for (const auto& line : split(text, '\n')) {
    const auto t = trim(line);
    if (t.empty() || t.front() == '#') continue;
    const auto eq = t.find('=');
    if (eq == std::string_view::npos) throw IoError("manifest line without '=': " + std::string(t));
    kv[std::string(trim(t.substr(0, eq)))] = std::string(trim(t.substr(eq + 1)));
  }
  auto need = [&](const char* key) -> const std::string& {
    const auto it = kv.find(key);
    if (it == kv.end()) throw IoError(std::string("manifest is missing '") + key + "'");
    return it->second;
  };
  Manifest m;
  const auto task = parse_task(need("task"));
  if (!task) throw ConfigError("unknown task '" + need("task") + "' in manifest");
  m.task = *task;
  try {
    m.n = std::stoull(need("n"));
    m.seed = std::stoull(need("seed"));
    m.image_size = std::stoull(need("image_size"));
  } catch (const std::logic_error&) {
    throw IoError("malformed number in manifest");
  }
  m.checksum = need("checksum");
  return m;
}

Dataset make_dataset(Task task, std::size_t n, std::uint64_t seed, std::size_t image_size, const Vocabulary& vocab) {
  if (image_size < 8) throw ConfigError("image_size must be at least 8");
  Dataset d;
  d.samples.resize(n);
  const Rng root(seed);
  for (std::size_t i = 0; i < n; ++i) {
    auto rng = root.fork(i);
    d.samples[i] = make_sample(task, image_size, rng, vocab);
  }
  d.manifest = {seed, task, n, image_size, dataset_checksum(d.samples, vocab)};
  return d;
}

namespace {

std::string sample_stem(std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "sample_%06zu", i);
  return buf;
}

bool is_gray(const Tensor& rgb) {
  const auto d = rgb.data();
  for (std::size_t k = 0; k + 2 < d.size(); k += 3) {
    if (d[k] != d[k + 1] || d[k] != d[k + 2]) return false;
  }
  return true;
}

Tensor first_channel(const Tensor& rgb) {
  std::vector<double> px(rgb.size() / 3);
  for (std::size_t k = 0; k < px.size(); ++k) px[k] = rgb.data()[3 * k];
  return Tensor::from({rgb.dim(0), rgb.dim(1), 1}, std::move(px));
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw IoError("cannot write " + path.string());
  f << text;
}

std::string read_text(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot open " + path.string());
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

}  // namespace

void write_dataset(const std::filesystem::path& dir, const Dataset& data, const Vocabulary& vocab) {
  std::filesystem::create_directories(dir);
  for (std::size_t i = 0; i < data.samples.size(); ++i) {
    const auto& s = data.samples[i];
    const auto stem = dir / sample_stem(i);
    // Condition maps go out as single-channel PGM.
    write_pnm(stem.string() + ".cond.ppm", is_gray(s.cond_image) ? first_channel(s.cond_image) : s.cond_image);
    write_pnm(stem.string() + ".target.ppm", s.target_image);
    write_text(stem.string() + ".txt", vocab.decode(s.caption) + "\n");
  }
  write_text(dir / "manifest.txt", data.manifest.to_text());
}

Dataset read_dataset(const std::filesystem::path& dir, const Vocabulary& vocab) {
  Dataset d;
  d.manifest = Manifest::parse(read_text(dir / "manifest.txt"));
  for (std::size_t i = 0; i < d.manifest.n; ++i) {
    const auto stem = (dir / sample_stem(i)).string();
    TwoFrameSample s;
    s.task = d.manifest.task;
    s.cond_image = read_pnm(stem + ".cond.ppm");
    if (s.cond_image.dim(2) == 1) s.cond_image = gray_to_rgb(s.cond_image);
    s.target_image = read_pnm(stem + ".target.ppm");
    if (s.cond_image.shape() != s.target_image.shape()) throw IoError(stem + ": cond and target shapes differ");
    s.caption = vocab.tokenize(trim(read_text(stem + ".txt")));
    d.samples.push_back(std::move(s));
  }
  if (dataset_checksum(d.samples, vocab) != d.manifest.checksum) {
    throw IoError("dataset checksum mismatch in " + dir.string());
  }
  return d;
}

}  // namespace framegen
