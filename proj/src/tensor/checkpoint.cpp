#include "framegen/checkpoint.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

namespace framegen {

namespace {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

void put_u64(std::string& out, std::uint64_t v) {
  char buf[8];
  std::memcpy(buf, &v, 8);
  out.append(buf, 8);
}

class Reader {
 public:
  explicit Reader(std::string_view bytes) : bytes_(bytes) {}

  std::uint64_t u64() {
    need(8);
    std::uint64_t v;
    std::memcpy(&v, bytes_.data() + pos_, 8);
    pos_ += 8;
    return v;
  }

  std::string_view take(std::size_t n) {
    need(n);
    auto s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  std::size_t remaining() const { return bytes_.size() - pos_; }

 private:
  void need(std::size_t n) const {
    if (bytes_.size() - pos_ < n) throw IoError("checkpoint truncated");
  }

  std::string_view bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

std::string serialize_checkpoint(const ParameterStore& store) {
  std::string out(kCheckpointMagic, sizeof(kCheckpointMagic));
  put_u64(out, store.size());
  for (const auto& [name, t] : store) {
    put_u64(out, name.size());
    out += name;
    put_u64(out, t.rank());
    for (auto e : t.shape()) put_u64(out, e);
    const auto data = t.data();
    out.append(reinterpret_cast<const char*>(data.data()), data.size() * sizeof(double));
  }
  return out;
}

ParameterStore deserialize_checkpoint(std::string_view bytes) {
  Reader in(bytes);
  if (in.take(sizeof(kCheckpointMagic)) != std::string_view(kCheckpointMagic, sizeof(kCheckpointMagic))) {
    throw IoError("not a checkpoint (bad magic)");
  }
  const auto count = in.u64();
  ParameterStore store;
  for (std::uint64_t i = 0; i < count; ++i) {
    const auto name_len = in.u64();
    std::string name(in.take(name_len));
    const auto rank = in.u64();
    if (rank > 8) throw IoError("checkpoint entry '" + name + "' has implausible rank");
    Shape shape(rank);
    for (auto& e : shape) e = in.u64();
    const auto n = numel(shape);
    if (n > in.remaining() / sizeof(double)) throw IoError("checkpoint truncated in entry '" + name + "'");
    std::vector<double> values(n);
    const auto raw = in.take(n * sizeof(double));
    std::memcpy(values.data(), raw.data(), raw.size());
    store.add(std::move(name), Tensor::from(std::move(shape), std::move(values)));
  }
  if (in.remaining() != 0) throw IoError("checkpoint has " + std::to_string(in.remaining()) + " trailing bytes");
  return store;
}

void save_checkpoint(const std::filesystem::path& path, const ParameterStore& store) {
  const auto bytes = serialize_checkpoint(store);
  // Write-then-rename so a crash never leaves a half-written checkpoint.
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot write " + tmp.string());
    f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!f) throw IoError("short write to " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

ParameterStore load_checkpoint(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open checkpoint " + path.string());
  std::ostringstream ss;
  ss << f.rdbuf();
  return deserialize_checkpoint(ss.str());
}

void assign_values(ParameterStore& into, const ParameterStore& from) {
  for (auto& [name, t] : into) {
    if (!from.contains(name)) throw IoError("checkpoint lacks parameter '" + name + "'");
    const auto& src = from.get(name);
    if (src.shape() != t.shape()) {
      throw DimensionError("parameter '" + name + "': checkpoint shape " + shape_str(src.shape()) + " vs model " +
                           shape_str(t.shape()));
    }
    std::ranges::copy(src.data(), t.mutable_data().begin());
  }
}

}  // namespace framegen
