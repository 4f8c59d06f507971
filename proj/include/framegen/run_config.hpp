#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "framegen/diffusion.hpp"
#include "framegen/model/config.hpp"
#include "framegen/model/mask.hpp"
#include "framegen/toy_data.hpp"

namespace framegen {

/// Everything a command needs, read from an INI-style file:
///
///   [section]
///   key = value   # comment
///
/// Unknown sections or keys are a ConfigError.
struct RunConfig {
  ModelConfig model;

  double beta_start = 1e-4;
  double beta_end = 2e-2;

  AdamWConfig optim;
  double grad_clip = 1.0;  // global norm; 0 disables

  std::size_t steps = 5000;
  std::size_t batch_size = 8;
  double cfg_drop = 0.1;
  std::size_t checkpoint_every = 500;
  std::uint64_t seed = 0;  // parameter init and batch draws

  std::optional<double> omega;  // unset: 6 for subject, 2 otherwise
  std::size_t sample_steps = 50;
  bool clip_x0 = true;
  std::uint64_t sample_seed = 0;

  MaskStrategy mask = MaskStrategy::A;
  bool c_blocks_diagonal = true;

  bool lora = false;
  std::size_t lora_rank = 4;
  double lora_alpha = 4.0;
  std::vector<std::string> lora_targets;  // empty: the default targets
  std::string base_checkpoint;            // frozen base for LoRA runs

  Task task = Task::Canny;
  std::string data_dir;  // empty: generate in memory
  std::size_t data_n = 256;
  std::uint64_t data_seed = 1;
  std::size_t heldout_n = 16;
  std::uint64_t heldout_seed = 1000003;

  std::string vocab_path;  // empty: built-in vocabulary

  double effective_omega() const;
  std::vector<std::string> effective_lora_targets() const;
  DiffusionSchedule schedule() const;

  // Throws ConfigError naming the offending key.
  void validate() const;

  static RunConfig parse(std::string_view text);
  static RunConfig load(const std::filesystem::path& path);
  // Fully resolved (every key, derived defaults filled in); parse(to_ini()) round-trips.
  std::string to_ini() const;
  // FNV-1a of to_ini().
  std::string hash() const;
};

// Writes "config.ini" (resolved) and "VERSION" into `dir`.
void write_run_metadata(const std::filesystem::path& dir, const RunConfig& config);

}  // namespace framegen
