#pragma once

#include <cstddef>

namespace framegen {

struct ModelConfig {
  std::size_t image_size = 32;    // pixels, square
  std::size_t channels = 3;
  std::size_t latent_factor = 2;  // space-to-depth stride s
  std::size_t d_model = 64;
  std::size_t n_heads = 4;
  std::size_t n_blocks = 2;
  std::size_t patch = 2;          // spatial and temporal patch factor p
  std::size_t vocab_size = 0;     // taken from the vocabulary when 0
  std::size_t text_len = 8;
  std::size_t t_max = 1000;
  std::size_t mlp_ratio = 4;

  // Throws ConfigError naming the first violated constraint.
  void validate() const;

  std::size_t latent_size() const { return image_size / latent_factor; }
  std::size_t latent_channels() const { return channels * latent_factor * latent_factor; }
  std::size_t grid_size() const { return latent_size() / patch; }
  std::size_t tokens_per_frame() const { return grid_size() * grid_size(); }
  // A token holds a p (time) x p x p patch of latent vectors.
  std::size_t token_dim() const { return patch * patch * patch * latent_channels(); }
  std::size_t head_dim() const { return d_model / n_heads; }
  std::size_t seq_len() const { return text_len + 2 * tokens_per_frame(); }
};

}  // namespace framegen
