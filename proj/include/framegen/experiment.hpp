#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "framegen/diffusion.hpp"
#include "framegen/gradcheck.hpp"
#include "framegen/lora.hpp"
#include "framegen/metrics.hpp"
#include "framegen/model/model.hpp"
#include "framegen/model/vocab.hpp"
#include "framegen/run_config.hpp"
#include "framegen/toy_data.hpp"

namespace framegen {

Vocabulary load_vocabulary(const RunConfig& config);
// ModelConfig with vocab_size taken from the vocabulary.
ModelConfig resolve_model_config(const RunConfig& config, const Vocabulary& vocab);

// Training set for a config: read from data_dir when set, else generated.
Dataset training_data(const RunConfig& config, const Vocabulary& vocab);
Dataset heldout_data(const RunConfig& config, const Vocabulary& vocab);

std::vector<TrainingExample> to_examples(const std::vector<TwoFrameSample>& samples, const ModelConfig& config,
                                         const Vocabulary& vocab);

/// Parameters, adapters, optimizer and model for one run. Step k draws its
/// batch from a stream keyed by (seed, k) alone, so a run restored from a
/// checkpoint continues exactly as the uninterrupted run would.
class Trainer {
 public:
  Trainer(RunConfig config, const Vocabulary& vocab, std::vector<TrainingExample> data);
  Trainer(const Trainer&) = delete;
  Trainer& operator=(const Trainer&) = delete;

  StepResult step();
  std::size_t steps_done() const { return optimizer_.steps_taken(); }

  // Parameters plus optimizer moments.
  ParameterStore state() const;
  void restore(const ParameterStore& state);

  const Model& model() const { return *model_; }
  ParameterStore& params() { return params_; }
  const ParameterStore& params() const { return params_; }
  const AdapterSet& adapters() const { return adapters_; }
  const RunConfig& config() const { return config_; }
  const ModelConfig& model_config() const { return model_config_; }
  const DiffusionSchedule& schedule() const { return schedule_; }

 private:
  RunConfig config_;
  ModelConfig model_config_;
  DiffusionSchedule schedule_;
  std::vector<TrainingExample> data_;
  std::vector<std::size_t> null_prompt_;
  ParameterStore params_;
  AdapterSet adapters_;
  AdamW optimizer_;
  std::unique_ptr<Model> model_;
};

struct TrainOptions {
  std::filesystem::path out_dir;               // empty: keep everything in memory
  std::optional<std::filesystem::path> resume;  // checkpoint to continue from
  std::function<void(std::size_t step, const StepResult&)> on_step;
};

struct TrainSummary {
  std::size_t steps = 0;
  double first_loss = 0.0;
  double last_loss = 0.0;
  std::vector<double> losses;  // this invocation only
};

// Runs until config.steps optimizer steps have been taken. With an output
// directory: "train_log.csv", "config.ini", "VERSION", "ckpt_%06d.bin" at step 0
// (fresh runs) and every checkpoint_every steps, and "last.bin" after each save. A non-finite loss
// throws NumericError and leaves the previous checkpoints in place.
TrainSummary train(Trainer& trainer, const TrainOptions& options = {});

/// A trained model loaded for inference. The model points into `params` and
/// `adapters`, so instances stay where they were built.
struct InferenceModel {
  InferenceModel() = default;
  InferenceModel(const InferenceModel&) = delete;
  InferenceModel& operator=(const InferenceModel&) = delete;

  RunConfig config;
  Vocabulary vocab;
  ModelConfig model_config;
  ParameterStore params;
  AdapterSet adapters;
  std::unique_ptr<Model> model;
  DiffusionSchedule schedule;
};

// Builds the model over `params` (LoRA adapters are reattached when present).
std::unique_ptr<InferenceModel> make_inference_model(const RunConfig& config, ParameterStore params);
// Reads "config.ini" from the checkpoint's directory unless `config` is given.
std::unique_ptr<InferenceModel> load_inference_model(const std::filesystem::path& checkpoint,
                                                    const std::optional<RunConfig>& config = std::nullopt);

// Samples each held-out condition with its caption and scores it against the
// held-out target. Sample i uses seed sample_seed + i.
EvalReport evaluate(const Model& model, const DiffusionSchedule& schedule, const std::vector<TwoFrameSample>& heldout,
                    const Vocabulary& vocab, const RunConfig& config, const std::string& config_hash = "");

struct AblationCell {
  MaskStrategy strategy = MaskStrategy::A;
  std::uint64_t seed = 0;
  double initial_loss = 0.0;
  double final_loss = 0.0;
  double ssim = 0.0;
  double mse = 0.0;
  bool diverged = false;
  std::string note;
};

struct AblationTable {
  std::vector<AblationCell> cells;  // a, b, c, none (those requested) x ascending seeds
  std::vector<MaskStrategy> strategies;

  double median_ssim(MaskStrategy s) const;  // over non-diverged cells
  double median_mse(MaskStrategy s) const;
  bool c_strictly_worst() const;  // needs A, B, C and None present
  bool a_at_least_none() const;
  std::string to_csv() const;
  std::string summary() const;
};

// d=32, 2 blocks, 2 heads, 16x16 images (8x8 latents), 4-token captions.
RunConfig miniature_config();

struct ModelGradCheckOptions {
  double h = 1e-5;
  std::size_t coords_per_param = 6;  // 0: every coordinate
  std::uint64_t seed = 0;
};

struct ModelGradCheckResult {
  GradCheckReport end_to_end;         // diffusion loss vs every parameter
  std::vector<GradCheckReport> blocks;  // one block's output vs its own parameters
  double max_rel_error = 0.0;
  std::string worst_param;  // "<scope>:<name>[index]"
  double loss = 0.0;                 // end-to-end loss at the checked point
};

// All parameters, including the zero-initialized ones, are redrawn at random
// first so every path carries gradient.
ModelGradCheckResult model_gradcheck(const RunConfig& config, const ModelGradCheckOptions& options = {});

// Number of concurrent workers: FRAMEGEN_THREADS if set, else the hardware count.
std::size_t worker_count();

// Trains one model per (strategy, seed) with everything else from `config`
// (seed replaces [train] seed) and evaluates it on the held-out set.
AblationTable ablate_masks(const RunConfig& config, const std::vector<MaskStrategy>& strategies,
                           std::vector<std::uint64_t> seeds, std::size_t workers = 0);

}  // namespace framegen
