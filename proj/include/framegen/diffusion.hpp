#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "framegen/model/model.hpp"
#include "framegen/params.hpp"
#include "framegen/rng.hpp"

namespace framegen {

struct DiffusionSchedule {
  std::size_t t_max = 0;
  std::vector<double> betas;
  std::vector<double> alphas;
  std::vector<double> alpha_bars;

  // Linear betas from beta_start to beta_end over t_max steps.
  static DiffusionSchedule linear(std::size_t t_max, double beta_start = 1e-4, double beta_end = 2e-2);
  void check_timestep(std::size_t t) const;
};

// sqrt(alpha_bar_t) x + sqrt(1 - alpha_bar_t) eps, applied to the target only.
Tensor q_sample(const Tensor& x_target, std::size_t t, const Tensor& eps, const DiffusionSchedule& schedule);

// Mean squared error over the target latent elements.
Tensor diffusion_loss(const Tensor& eps_hat, const Tensor& eps);

struct TrainingExample {
  Tensor cond_latent;
  Tensor target_latent;
  std::vector<std::size_t> text_ids;  // padded
};

struct NoisedSample {
  Tensor clean;
  Tensor eps;
  Tensor z_t;
  Tensor cond;
  std::vector<std::size_t> text_ids;  // null prompt when cfg_drop
  std::size_t t = 0;
  bool cfg_drop = false;
};

using NoisedBatch = std::vector<NoisedSample>;

// Draws indices, timesteps, noise and CFG drops for one batch from `rng`.
NoisedBatch make_noised_batch(std::span<const TrainingExample> data, std::size_t batch_size,
                              const DiffusionSchedule& schedule, double cfg_drop_prob,
                              const std::vector<std::size_t>& null_prompt, Rng& rng);

struct AdamWConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.95;
  double eps = 1e-8;
  double weight_decay = 0.01;
};

/// Decoupled weight decay Adam over the requires_grad tensors of a store.
class AdamW {
 public:
  explicit AdamW(AdamWConfig config = {}) : config_(config) {}

  void step(ParameterStore& params);
  std::size_t steps_taken() const { return steps_; }
  const AdamWConfig& config() const { return config_; }
  void set_lr(double lr) { config_.lr = lr; }

  // Moments as "optim.m.<name>", "optim.v.<name>" plus "optim.step".
  void export_state(ParameterStore& out) const;
  void import_state(const ParameterStore& in);

 private:
  struct Moments {
    std::vector<double> m;
    std::vector<double> v;
  };
  AdamWConfig config_;
  std::size_t steps_ = 0;
  std::vector<std::string> order_;
  std::unordered_map<std::string, Moments> moments_;
};

struct StepResult {
  double loss = 0.0;
  double grad_norm = 0.0;  // before clipping
};

// One optimizer update on the batch-mean loss. Throws NumericError on a
// non-finite loss without touching the parameters.
StepResult train_step(const Model& model, ParameterStore& params, AdamW& optimizer, const NoisedBatch& batch,
                      MaskStrategy mask, double grad_clip = 0.0);

// eps_u + omega (eps_c - eps_u)
Tensor cfg_combine(const Tensor& eps_cond, const Tensor& eps_uncond, double omega);

struct CfgInputs {
  Tensor z_t;
  Tensor cond_latent;
  std::vector<std::size_t> text_ids;
  std::vector<std::size_t> null_ids;
  std::size_t t = 0;
};

// Two passes, real text and null text; the condition frame is present in both.
Tensor cfg_predict(const Model& model, const CfgInputs& in, double omega, MaskStrategy mask);

// Uniformly spaced sub-schedule, ascending: 0, k, 2k, ... with k = t_max / steps.
std::vector<std::size_t> ddim_timesteps(std::size_t t_max, std::size_t steps);

struct SampleOptions {
  std::size_t steps = 50;
  double omega = 2.0;
  std::uint64_t seed = 0;
  MaskStrategy mask = MaskStrategy::A;
  bool clip_x0 = true;  // clamp predicted clean latents to [-1, 1]
};

struct SampleResult {
  Tensor latent;
  Tensor image;  // [H x W x c] in [0, 1]
  std::size_t cond_evaluations = 0;
  std::size_t uncond_evaluations = 0;
};

// Deterministic DDIM (eta = 0). With omega == 1 the unconditional branch is
// skipped, which is exactly the conditional-only sampler.
SampleResult sample(const Model& model, const DiffusionSchedule& schedule, const Tensor& cond_image,
                    const std::vector<std::size_t>& text_ids, const std::vector<std::size_t>& null_ids,
                    const SampleOptions& options);

}  // namespace framegen
