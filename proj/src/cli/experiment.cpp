#include "framegen/experiment.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <mutex>
#include <sstream>
#include <thread>

#include "framegen/checkpoint.hpp"
#include "framegen/errors.hpp"
#include "framegen/model/codec.hpp"
#include "framegen/ops.hpp"
#include "framegen/util.hpp"

namespace framegen {

namespace {

// Keeps batch streams apart from the parameter-init stream of the same seed.
constexpr std::uint64_t kBatchStreamSalt = 0xB47C5EEDULL;

}  // namespace

Vocabulary load_vocabulary(const RunConfig& config) {
  return config.vocab_path.empty() ? Vocabulary::builtin() : Vocabulary::load(config.vocab_path);
}

ModelConfig resolve_model_config(const RunConfig& config, const Vocabulary& vocab) {
  auto m = config.model;
  m.vocab_size = vocab.size();
  m.validate();
  return m;
}

Dataset training_data(const RunConfig& config, const Vocabulary& vocab) {
  if (!config.data_dir.empty()) {
    auto d = read_dataset(config.data_dir, vocab);
    if (d.manifest.image_size != config.model.image_size) {
      throw ConfigError("dataset image_size " + std::to_string(d.manifest.image_size) + " vs [model] image_size " +
                        std::to_string(config.model.image_size));
    }
    return d;
  }
  return make_dataset(config.task, config.data_n, config.data_seed, config.model.image_size, vocab);
}

Dataset heldout_data(const RunConfig& config, const Vocabulary& vocab) {
  return make_dataset(config.task, config.heldout_n, config.heldout_seed, config.model.image_size, vocab);
}

std::vector<TrainingExample> to_examples(const std::vector<TwoFrameSample>& samples, const ModelConfig& config,
                                         const Vocabulary& vocab) {
  std::vector<TrainingExample> out;
  out.reserve(samples.size());
  for (const auto& s : samples) {
    if (s.target_image.dim(0) != config.image_size || s.target_image.dim(2) != config.channels) {
      throw ConfigError("sample image " + shape_str(s.target_image.shape()) + " does not fit the model config");
    }
    out.push_back({image_to_latent(s.cond_image, config.latent_factor),
                   image_to_latent(s.target_image, config.latent_factor), vocab.pad(s.caption, config.text_len)});
  }
  return out;
}

Trainer::Trainer(RunConfig config, const Vocabulary& vocab, std::vector<TrainingExample> data)
    : config_(std::move(config)),
      model_config_(resolve_model_config(config_, vocab)),
      schedule_(config_.schedule()),
      data_(std::move(data)),
      null_prompt_(vocab.null_prompt(model_config_.text_len)),
      params_(Model::init_params(model_config_, config_.seed)),
      optimizer_(config_.optim) {
  config_.validate();
  if (data_.empty()) throw ConfigError("training needs at least one sample");
  if (config_.lora) {
    if (!config_.base_checkpoint.empty()) assign_values(params_, load_checkpoint(config_.base_checkpoint));
    adapters_ = inject(params_, {config_.lora_rank, config_.lora_alpha, config_.effective_lora_targets(),
                                 Model::directly_trainable(), config_.seed});
  }
  model_ = std::make_unique<Model>(model_config_, params_, vocab.noun_flags(), config_.lora ? &adapters_ : nullptr,
                                   MaskOptions{config_.c_blocks_diagonal});
}

StepResult Trainer::step() {
  auto rng = Rng(config_.seed ^ kBatchStreamSalt).fork(optimizer_.steps_taken());
  const auto batch = make_noised_batch(data_, config_.batch_size, schedule_, config_.cfg_drop, null_prompt_, rng);
  return train_step(*model_, params_, optimizer_, batch, config_.mask, config_.grad_clip);
}

ParameterStore Trainer::state() const {
  auto out = params_.clone();
  optimizer_.export_state(out);
  return out;
}

void Trainer::restore(const ParameterStore& state) {
  assign_values(params_, state);
  optimizer_.import_state(state);
}

namespace {

std::string checkpoint_name(std::size_t step) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "ckpt_%06zu.bin", step);
  return buf;
}

}  // namespace

TrainSummary train(Trainer& trainer, const TrainOptions& options) {
  if (options.resume) trainer.restore(load_checkpoint(*options.resume));
  const auto& cfg = trainer.config();
  const bool files = !options.out_dir.empty();
  std::ofstream log;
  if (files) {
    write_run_metadata(options.out_dir, cfg);
    const auto log_path = options.out_dir / "train_log.csv";
    // A resumed run keeps the rows written before its checkpoint.
    std::vector<std::string> kept;
    if (options.resume && std::filesystem::exists(log_path)) {
      std::ifstream in(log_path);
      std::string line;
      std::getline(in, line);
      while (std::getline(in, line)) {
        if (std::stoull(line.substr(0, line.find(','))) <= trainer.steps_done()) kept.push_back(line);
      }
    }
    log.open(log_path, std::ios::trunc);
    log << "step,loss,lr,grad_norm\n";
    for (const auto& l : kept) log << l << "\n";
    log << std::setprecision(17);
  }
  auto save = [&]() {
    const auto state = trainer.state();
    save_checkpoint(options.out_dir / checkpoint_name(trainer.steps_done()), state);
    save_checkpoint(options.out_dir / "last.bin", state);
  };

  if (files && trainer.steps_done() == 0) save();

  TrainSummary summary;
  while (trainer.steps_done() < cfg.steps) {
    const auto r = trainer.step();
    const auto step = trainer.steps_done();
    summary.losses.push_back(r.loss);
    if (files) {
      log << step << "," << r.loss << "," << cfg.optim.lr << "," << r.grad_norm << "\n";
      if (cfg.checkpoint_every > 0 && step % cfg.checkpoint_every == 0) {
        log.flush();
        save();
      }
    }
    if (options.on_step) options.on_step(step, r);
  }
  if (files) {
    log.flush();
    if (cfg.checkpoint_every == 0 || trainer.steps_done() % cfg.checkpoint_every != 0) save();
  }
  summary.steps = trainer.steps_done();
  if (!summary.losses.empty()) {
    summary.first_loss = summary.losses.front();
    summary.last_loss = summary.losses.back();
  }
  return summary;
}

std::unique_ptr<InferenceModel> make_inference_model(const RunConfig& config, ParameterStore params) {
  auto m = std::make_unique<InferenceModel>();
  m->config = config;
  m->vocab = load_vocabulary(config);
  m->model_config = resolve_model_config(config, m->vocab);
  m->schedule = config.schedule();
  m->params = std::move(params);
  bool has_lora = false;
  for (const auto& [name, _] : m->params) has_lora = has_lora || name.starts_with("lora.");
  if (has_lora) m->adapters = AdapterSet::attach(m->params, config.lora_alpha);
  m->model = std::make_unique<Model>(m->model_config, m->params, m->vocab.noun_flags(),
                                     has_lora ? &m->adapters : nullptr, MaskOptions{config.c_blocks_diagonal});
  return m;
}

std::unique_ptr<InferenceModel> load_inference_model(const std::filesystem::path& checkpoint,
                                                     const std::optional<RunConfig>& config) {
  const auto cfg = config ? *config : RunConfig::load(checkpoint.parent_path() / "config.ini");
  const auto state = load_checkpoint(checkpoint);
  ParameterStore params;
  for (const auto& [name, t] : state) {
    if (!name.starts_with("optim.")) params.add(name, t);
  }
  // init_params is the oracle for which names a model needs.
  for (const auto& name : Model::init_params(resolve_model_config(cfg, load_vocabulary(cfg)), 0).names()) {
    if (!params.contains(name)) throw IoError("checkpoint lacks parameter '" + name + "'");
  }
  return make_inference_model(cfg, std::move(params));
}

EvalReport evaluate(const Model& model, const DiffusionSchedule& schedule, const std::vector<TwoFrameSample>& heldout,
                    const Vocabulary& vocab, const RunConfig& config, const std::string& config_hash) {
  EvalReport report;
  report.sample_seed = config.sample_seed;
  report.config_hash = config_hash.empty() ? config.hash() : config_hash;
  const auto len = model.config().text_len;
  for (std::size_t i = 0; i < heldout.size(); ++i) {
    const auto& s = heldout[i];
    SampleOptions opt;
    opt.steps = config.sample_steps;
    opt.omega = config.effective_omega();
    opt.seed = config.sample_seed + i;
    opt.mask = config.mask;
    opt.clip_x0 = config.clip_x0;
    const auto out = sample(model, schedule, s.cond_image, vocab.pad(s.caption, len), vocab.null_prompt(len), opt);
    report.rows.push_back({i, ssim(out.image, s.target_image), image_mse(out.image, s.target_image)});
  }
  report.finalize();
  return report;
}

namespace {

std::vector<double> cell_values(const AblationTable& t, MaskStrategy s, double AblationCell::*field) {
  std::vector<double> v;
  for (const auto& c : t.cells) {
    if (c.strategy == s && !c.diverged) v.push_back(c.*field);
  }
  return v;
}

bool has(const AblationTable& t, MaskStrategy s) {
  return std::find(t.strategies.begin(), t.strategies.end(), s) != t.strategies.end();
}

}  // namespace

double AblationTable::median_ssim(MaskStrategy s) const { return median(cell_values(*this, s, &AblationCell::ssim)); }
double AblationTable::median_mse(MaskStrategy s) const { return median(cell_values(*this, s, &AblationCell::mse)); }

bool AblationTable::c_strictly_worst() const {
  if (!has(*this, MaskStrategy::C)) return false;
  const double c = median_ssim(MaskStrategy::C);
  if (std::isnan(c)) return false;
  for (auto s : strategies) {
    if (s == MaskStrategy::C) continue;
    const double v = median_ssim(s);
    if (std::isnan(v) || !(c < v)) return false;
  }
  return strategies.size() > 1;
}

bool AblationTable::a_at_least_none() const {
  if (!has(*this, MaskStrategy::A) || !has(*this, MaskStrategy::None)) return false;
  return median_ssim(MaskStrategy::A) >= median_ssim(MaskStrategy::None);
}

std::string AblationTable::to_csv() const {
  std::ostringstream os;
  os << std::setprecision(17);
  os << "strategy,seed,initial_loss,final_loss,ssim,mse,diverged\n";
  for (const auto& c : cells) {
    os << mask_name(c.strategy) << "," << c.seed << "," << c.initial_loss << "," << c.final_loss << "," << c.ssim
       << "," << c.mse << "," << (c.diverged ? 1 : 0) << "\n";
  }
  for (auto s : strategies) {
    os << mask_name(s) << ",median,,," << median_ssim(s) << "," << median_mse(s) << ","
       << std::count_if(cells.begin(), cells.end(), [&](const auto& c) { return c.strategy == s && c.diverged; })
       << "\n";
  }
  return os.str();
}

std::string AblationTable::summary() const {
  std::ostringstream os;
  os << std::fixed << std::setprecision(4);
  os << "strategy  median_ssim  median_mse  diverged\n";
  for (auto s : strategies) {
    const auto div =
        std::count_if(cells.begin(), cells.end(), [&](const auto& c) { return c.strategy == s && c.diverged; });
    os << std::left << std::setw(10) << mask_name(s) << std::right << std::setw(11) << median_ssim(s)
       << std::setw(12) << median_mse(s) << std::setw(10) << div << "\n";
  }
  for (const auto& c : cells) {
    if (c.diverged) os << "DIVERGED: " << mask_name(c.strategy) << " seed " << c.seed << ": " << c.note << "\n";
  }
  if (has(*this, MaskStrategy::C)) os << "mask c strictly worst: " << (c_strictly_worst() ? "yes" : "no") << "\n";
  if (has(*this, MaskStrategy::A) && has(*this, MaskStrategy::None)) {
    os << "mask a >= no mask: " << (a_at_least_none() ? "yes" : "no (flagged)") << "\n";
  }
  return os.str();
}

RunConfig miniature_config() {
  RunConfig c;
  c.model.image_size = 16;
  c.model.d_model = 32;
  c.model.n_blocks = 2;
  c.model.n_heads = 2;
  c.model.text_len = 4;
  return c;
}

ModelGradCheckResult model_gradcheck(const RunConfig& config, const ModelGradCheckOptions& options) {
  const auto vocab = load_vocabulary(config);
  const auto mc = resolve_model_config(config, vocab);
  auto params = Model::init_params(mc, config.seed);
  Rng rng = Rng(options.seed).fork(0x67726164);
  for (auto& [name, t] : params) {
    const double sd = t.rank() == 2 ? 1.0 / std::sqrt(static_cast<double>(t.dim(1))) : 0.1;
    rng.fill_normal(t.mutable_data(), sd);
  }
  const Model model(mc, params, vocab.noun_flags(), nullptr, MaskOptions{config.c_blocks_diagonal});

  const auto lat = mc.latent_size();
  auto random_latent = [&]() {
    std::vector<double> v(lat * lat * mc.latent_channels());
    rng.fill_normal(v);
    return Tensor::from({lat, lat, mc.latent_channels()}, std::move(v));
  };
  const auto schedule = config.schedule();
  const auto cond = random_latent(), x0 = random_latent(), eps = random_latent();
  const std::size_t t = schedule.t_max / 3;
  const auto zt = q_sample(x0, t, eps, schedule);
  // A caption naming a subject so the instance-embedding path is live.
  auto ids = vocab.pad(vocab.tokenize("red square left"), mc.text_len);
  const ModelInput input{cond, zt, ids, t};

  const GradCheckOptions gopt{options.h, options.coords_per_param, options.seed};
  ModelGradCheckResult result;
  {
    NoGradGuard no_grad;
    result.loss = diffusion_loss(model.predict_noise(input, config.mask), eps).item();
  }
  result.end_to_end = grad_check_params(
      [&]() { return diffusion_loss(model.predict_noise(input, config.mask), eps); }, params, gopt);
  result.max_rel_error = result.end_to_end.max_rel_error;
  result.worst_param = "end_to_end:" + result.end_to_end.worst_param + "[" +
                       std::to_string(result.end_to_end.worst_index) + "]";

  TokenSequence seq;
  {
    NoGradGuard no_grad;
    seq = model.embed(input);
  }
  const auto tokens = seq.tokens.detach();
  std::vector<double> probe(tokens.size());
  rng.fill_normal(probe);
  const auto weights = Tensor::from(tokens.shape(), std::move(probe));
  for (std::size_t b = 0; b < mc.n_blocks; ++b) {
    ParameterStore scope;
    const auto prefix = "blocks." + std::to_string(b) + ".";
    for (auto& [name, tensor] : params) {
      if (name.starts_with(prefix)) scope.add(name, tensor);
    }
    auto report = grad_check_params(
        [&]() {
          const auto out = model.dit_block(tokens, seq.layout, b, t, model.mask(config.mask));
          return scale(sum(mul(out, weights)), 1.0 / static_cast<double>(tokens.dim(0)));
        },
        scope, gopt);
    if (report.max_rel_error > result.max_rel_error) {
      result.max_rel_error = report.max_rel_error;
      result.worst_param = "block" + std::to_string(b) + ":" + report.worst_param + "[" +
                           std::to_string(report.worst_index) + "]";
    }
    result.blocks.push_back(std::move(report));
  }
  return result;
}

std::size_t worker_count() {
  if (const char* env = std::getenv("FRAMEGEN_THREADS")) {
    try {
      const auto n = std::stoul(env);
      if (n > 0) return n;
    } catch (const std::exception&) {
    }
    throw ConfigError(std::string("FRAMEGEN_THREADS must be a positive integer, got '") + env + "'");
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

AblationTable ablate_masks(const RunConfig& config, const std::vector<MaskStrategy>& strategies,
                           std::vector<std::uint64_t> seeds, std::size_t workers) {
  if (strategies.empty() || seeds.empty()) throw ConfigError("ablation needs at least one strategy and one seed");
  AblationTable table;
  for (auto s : {MaskStrategy::A, MaskStrategy::B, MaskStrategy::C, MaskStrategy::None}) {
    if (std::find(strategies.begin(), strategies.end(), s) != strategies.end()) table.strategies.push_back(s);
  }
  std::sort(seeds.begin(), seeds.end());
  seeds.erase(std::unique(seeds.begin(), seeds.end()), seeds.end());
  for (auto s : table.strategies) {
    for (auto seed : seeds) {
      AblationCell cell;
      cell.strategy = s;
      cell.seed = seed;
      table.cells.push_back(cell);
    }
  }

  const auto vocab = load_vocabulary(config);
  const auto model_config = resolve_model_config(config, vocab);
  const auto data = to_examples(training_data(config, vocab).samples, model_config, vocab);
  const auto heldout = heldout_data(config, vocab).samples;

  auto run_cell = [&](AblationCell& cell) {
    auto cfg = config;
    cfg.mask = cell.strategy;
    cfg.seed = cell.seed;
    try {
      Trainer trainer(cfg, vocab, data);
      const auto summary = train(trainer);
      cell.initial_loss = summary.first_loss;
      cell.final_loss = summary.last_loss;
      const auto report = evaluate(trainer.model(), trainer.schedule(), heldout, vocab, cfg);
      cell.ssim = report.mean_ssim;
      cell.mse = report.mean_mse;
      if (!std::isfinite(cell.ssim)) throw NumericError("non-finite SSIM");
    } catch (const NumericError& e) {
      cell.diverged = true;
      cell.ssim = cell.mse = std::nan("");
      cell.note = e.what();
    }
  };

  const auto n_workers = std::min(workers ? workers : worker_count(), table.cells.size());
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  auto worker = [&]() {
    for (std::size_t i = next++; i < table.cells.size(); i = next++) {
      try {
        run_cell(table.cells[i]);
      } catch (...) {
        std::lock_guard lock(failure_mutex);
        if (!failure) failure = std::current_exception();
      }
    }
  };
  std::vector<std::thread> pool;
  for (std::size_t i = 1; i < n_workers; ++i) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();
  if (failure) std::rethrow_exception(failure);
  return table;
}

}  // namespace framegen
