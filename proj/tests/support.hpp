#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "framegen/model/model.hpp"
#include "framegen/model/vocab.hpp"
#include "framegen/ops.hpp"
#include "framegen/rng.hpp"

namespace fgtest {

using namespace framegen;

inline Tensor random_tensor(Shape shape, std::uint64_t seed, double stddev = 1.0, bool requires_grad = false) {
  std::vector<double> v(numel(shape));
  Rng(seed).fill_normal(v, stddev);
  return Tensor::from(std::move(shape), std::move(v), requires_grad);
}

inline std::vector<double> values(const Tensor& t) { return {t.data().begin(), t.data().end()}; }

inline double max_abs_diff(const Tensor& a, const Tensor& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a.at(i) - b.at(i)));
  return m;
}

inline bool bitwise_equal(const Tensor& a, const Tensor& b) { return a.shape() == b.shape() && values(a) == values(b); }

// 16x16 images, d=32, 2 heads (head_dim 16), 2 blocks, 4 caption slots.
inline ModelConfig tiny_config() {
  ModelConfig c;
  c.image_size = 16;
  c.d_model = 32;
  c.n_heads = 2;
  c.n_blocks = 2;
  c.text_len = 4;
  c.vocab_size = Vocabulary::builtin().size();
  return c;
}

// Every parameter redrawn, so zero-initialized paths carry signal too.
inline void randomize(ParameterStore& params, std::uint64_t seed) {
  const Rng root(seed);
  std::uint64_t k = 0;
  for (auto& [name, t] : params) {
    auto rng = root.fork(k++);
    rng.fill_normal(t.mutable_data(), t.rank() == 2 ? 1.0 / std::sqrt(static_cast<double>(t.dim(1))) : 0.1);
  }
}

inline Tensor random_latent(const ModelConfig& c, std::uint64_t seed) {
  const auto l = c.latent_size();
  return random_tensor({l, l, c.latent_channels()}, seed);
}

inline ModelInput random_input(const ModelConfig& c, std::uint64_t seed, const std::string& caption = "red square left",
                               std::size_t t = 300) {
  return {random_latent(c, seed), random_latent(c, seed + 1), Vocabulary::builtin().encode(caption, c.text_len), t};
}

}  // namespace fgtest
