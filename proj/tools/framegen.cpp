#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "framegen/checkpoint.hpp"
#include "framegen/errors.hpp"
#include "framegen/experiment.hpp"
#include "framegen/image_io.hpp"
#include "framegen/model/codec.hpp"
#include "framegen/util.hpp"

namespace fs = std::filesystem;
using namespace framegen;

namespace {

enum Exit { kOk = 0, kUsage = 1, kConfig = 2, kNumeric = 3 };

RunConfig config_or_default(const std::string& path) { return path.empty() ? RunConfig{} : RunConfig::load(path); }

void write_file(const fs::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::trunc);
  f << text;
  if (!f) throw IoError("cannot write " + path.string());
}

int cmd_make_data(const std::string& task_tag, std::size_t n, std::uint64_t seed, std::size_t image_size,
                  const fs::path& out) {
  const auto task = parse_task(task_tag);
  if (!task) throw ConfigError("unknown task '" + task_tag + "' (expected canny, depth or subject)");
  const auto data = make_dataset(*task, n, seed, image_size);
  write_dataset(out, data);
  write_file(out / "VERSION", std::string(kToolVersion) + "\n");
  std::cout << "wrote " << n << " samples to " << out.string() << "\nchecksum=" << data.manifest.checksum << "\n";
  return kOk;
}

int cmd_train(const std::string& config_path, const fs::path& out, const std::string& resume) {
  const auto config = config_or_default(config_path);
  const auto vocab = load_vocabulary(config);
  const auto model_config = resolve_model_config(config, vocab);
  const auto data = training_data(config, vocab);
  Trainer trainer(config, vocab, to_examples(data.samples, model_config, vocab));
  TrainOptions opt;
  opt.out_dir = out;
  if (!resume.empty()) opt.resume = resume;
  const auto every = config.checkpoint_every ? config.checkpoint_every : 100;
  opt.on_step = [&](std::size_t step, const StepResult& r) {
    if (step % every == 0 || step == config.steps) {
      std::printf("step %zu loss %.6f grad_norm %.4f\n", step, r.loss, r.grad_norm);
      std::fflush(stdout);
    }
  };
  const auto summary = train(trainer, opt);
  std::printf("done: %zu steps, final loss %.6f; checkpoint %s\n", summary.steps, summary.last_loss,
              (out / "last.bin").c_str());
  return kOk;
}

int cmd_sample(const std::string& checkpoint, const std::string& config_path, const std::string& cond_path,
               const std::string& prompt, std::optional<double> omega, std::optional<std::size_t> steps,
               std::uint64_t seed, const fs::path& out) {
  std::optional<RunConfig> override_cfg;
  if (!config_path.empty()) override_cfg = RunConfig::load(config_path);
  auto m = load_inference_model(checkpoint, override_cfg);
  auto cfg = m->config;
  if (omega) cfg.omega = *omega;
  if (steps) cfg.sample_steps = *steps;
  cfg.sample_seed = seed;
  cfg.validate();

  auto cond = read_pnm(cond_path);
  if (cond.dim(2) == 1) cond = gray_to_rgb(cond);
  const auto len = m->model_config.text_len;
  const auto ids = m->vocab.encode(prompt, len);

  SampleOptions opt;
  opt.steps = cfg.sample_steps;
  opt.omega = cfg.effective_omega();
  opt.seed = seed;
  opt.mask = cfg.mask;
  opt.clip_x0 = cfg.clip_x0;
  const auto result = sample(*m->model, m->schedule, cond, ids, m->vocab.null_prompt(len), opt);

  if (out.has_parent_path()) fs::create_directories(out.parent_path());
  write_pnm(out, result.image);
  std::ostringstream meta;
  meta << std::setprecision(17) << "version=" << kToolVersion << "\n"
       << "omega=" << opt.omega << "\n"
       << "steps=" << opt.steps << "\n"
       << "seed=" << seed << "\n"
       << "config_hash=" << cfg.hash() << "\n"
       << "checkpoint=" << checkpoint << "\n"
       << "prompt=" << prompt << "\n"
       << "cond_evaluations=" << result.cond_evaluations << "\n"
       << "uncond_evaluations=" << result.uncond_evaluations << "\n"
       << "\n# resolved configuration\n"
       << cfg.to_ini();
  write_file(out.string() + ".meta", meta.str());
  std::cout << "wrote " << out.string() << "\n";
  return kOk;
}

int cmd_eval(const std::string& checkpoint, const std::string& config_path, const fs::path& out) {
  std::optional<RunConfig> override_cfg;
  if (!config_path.empty()) override_cfg = RunConfig::load(config_path);
  auto m = load_inference_model(checkpoint, override_cfg);
  const auto heldout = heldout_data(m->config, m->vocab);
  auto report = evaluate(*m->model, m->schedule, heldout.samples, m->vocab, m->config);
  if (!heldout.samples.empty()) {
    const auto& s = heldout.samples.front();
    const auto& mc = m->model_config;
    AttentionProbe probe;
    const auto target = image_to_latent(s.target_image, mc.latent_factor);
    std::vector<double> eps(target.size());
    Rng(m->config.sample_seed).fill_normal(eps);
    const auto t = mc.t_max / 2;
    const auto zt = q_sample(target, t, Tensor::from(target.shape(), std::move(eps)), m->schedule);
    const ModelInput input{image_to_latent(s.cond_image, mc.latent_factor), zt,
                           m->vocab.pad(s.caption, mc.text_len), t};
    NoGradGuard no_grad;
    m->model->predict_noise(input, m->config.mask, &probe);
    report.attention_mass = segment_attention_mass(probe, {mc.text_len, mc.tokens_per_frame(), mc.tokens_per_frame()});
  }
  write_run_metadata(out, m->config);
  write_file(out / "report.csv", report.to_csv());
  write_file(out / "report.txt", report.summary());
  std::cout << report.summary();
  return kOk;
}

int cmd_gradcheck(const std::string& config_path, double tolerance, double h, std::size_t coords, std::uint64_t seed,
                  bool fault) {
  const auto config = config_path.empty() ? miniature_config() : RunConfig::load(config_path);
  set_backward_fault_for_testing(fault);
  ModelGradCheckOptions opt;
  opt.h = h;
  opt.coords_per_param = coords;
  opt.seed = seed;
  const auto r = model_gradcheck(config, opt);
  set_backward_fault_for_testing(false);
  auto print = [](const std::string& scope, const GradCheckReport& rep) {
    for (const auto& p : rep.params) {
      std::printf("%-10s %-32s coords %4zu  max_rel_err %.3e  (analytic % .6e, numeric % .6e)\n", scope.c_str(),
                  p.name.c_str(), p.coords_checked, p.max_rel_error, p.worst_analytic, p.worst_numeric);
    }
  };
  print("end_to_end", r.end_to_end);
  for (std::size_t b = 0; b < r.blocks.size(); ++b) print("block" + std::to_string(b), r.blocks[b]);
  std::printf("loss at the checked point: %.6f\n", r.loss);
  std::printf("worst relative error %.3e at %s (tolerance %.1e)\n", r.max_rel_error, r.worst_param.c_str(), tolerance);
  if (!(r.max_rel_error <= tolerance)) {
    std::fprintf(stderr, "gradcheck FAILED: %s exceeds tolerance\n", r.worst_param.c_str());
    return kNumeric;
  }
  std::printf("gradcheck passed\n");
  return kOk;
}

std::vector<MaskStrategy> parse_strategies(const std::string& list) {
  std::vector<MaskStrategy> out;
  for (const auto& tok : split(list, ',')) {
    const auto s = parse_mask(trim(tok));
    if (!s) throw ConfigError("unknown mask strategy '" + tok + "' (expected a, b, c, none)");
    out.push_back(*s);
  }
  return out;
}

std::vector<std::uint64_t> parse_seeds(const std::string& list) {
  std::vector<std::uint64_t> out;
  for (const auto& tok : split(list, ',')) {
    try {
      out.push_back(std::stoull(std::string(trim(tok))));
    } catch (const std::exception&) {
      throw ConfigError("bad seed '" + tok + "'");
    }
  }
  return out;
}

int cmd_ablate(const std::string& config_path, const std::string& strategies, const std::string& seeds,
               const fs::path& out) {
  const auto config = config_or_default(config_path);
  const auto table = ablate_masks(config, parse_strategies(strategies), parse_seeds(seeds));
  write_run_metadata(out, config);
  write_file(out / "ablation.csv", table.to_csv());
  write_file(out / "ablation.txt", table.summary());
  std::cout << table.summary();
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Two-frame diffusion transformer toolkit"};
  app.set_version_flag("--version", std::string(kToolVersion));
  app.require_subcommand(1);

  std::string task = "canny", out, config, resume, checkpoint, cond, prompt, strategies = "a,b,c,none", seeds = "1,2,3";
  std::size_t n = 0, image_size = 32, coords = 6;
  std::uint64_t seed = 0;
  std::optional<double> omega;
  std::optional<std::size_t> steps;
  double tolerance = 1e-4, fd_step = 1e-5;
  bool fault = false;

  auto* make_data = app.add_subcommand("make-data", "Generate a toy two-frame dataset");
  make_data->add_option("--task", task, "canny, depth or subject")->required();
  make_data->add_option("--n", n, "Number of samples")->required();
  make_data->add_option("--seed", seed, "Generation seed");
  make_data->add_option("--image-size", image_size, "Square image side in pixels");
  make_data->add_option("--out", out, "Output directory")->required();

  auto* train_cmd = app.add_subcommand("train", "Train a model");
  train_cmd->add_option("--config", config, "Run configuration (INI)");
  train_cmd->add_option("--out", out, "Run directory")->required();
  train_cmd->add_option("--resume", resume, "Checkpoint to continue from");

  auto* sample_cmd = app.add_subcommand("sample", "Generate a target image from a condition image");
  sample_cmd->add_option("--checkpoint", checkpoint, "Model checkpoint")->required();
  sample_cmd->add_option("--config", config, "Configuration (default: config.ini beside the checkpoint)");
  sample_cmd->add_option("--cond", cond, "Condition image (PPM/PGM)")->required();
  sample_cmd->add_option("--prompt", prompt, "Caption")->required();
  sample_cmd->add_option("--omega", omega, "Guidance scale (default: 6 subject, 2 otherwise)");
  sample_cmd->add_option("--steps", steps, "Denoising steps (default 50)");
  sample_cmd->add_option("--seed", seed, "Noise seed");
  sample_cmd->add_option("--out", out, "Output image (PPM)")->required();

  auto* eval_cmd = app.add_subcommand("eval", "Score a checkpoint on the held-out set");
  eval_cmd->add_option("--checkpoint", checkpoint, "Model checkpoint")->required();
  eval_cmd->add_option("--config", config, "Configuration (default: config.ini beside the checkpoint)");
  eval_cmd->add_option("--out", out, "Report directory")->required();

  auto* grad_cmd = app.add_subcommand("gradcheck", "Compare autodiff gradients with finite differences");
  grad_cmd->add_option("--config", config, "Configuration (default: the miniature model)");
  grad_cmd->add_option("--tolerance", tolerance, "Maximum relative error");
  grad_cmd->add_option("--fd-step", fd_step, "Central-difference step");
  grad_cmd->add_option("--coords", coords, "Coordinates sampled per tensor (0 = all)");
  grad_cmd->add_option("--seed", seed, "Parameter and coordinate seed");
  grad_cmd->add_flag("--inject-fault", fault, "Corrupt one backward rule (negative control)");

  auto* ablate_cmd = app.add_subcommand("ablate", "Train and score one model per mask strategy and seed");
  ablate_cmd->add_option("--config", config, "Run configuration (INI)");
  ablate_cmd->add_option("--strategies", strategies, "Comma-separated subset of a,b,c,none");
  ablate_cmd->add_option("--seeds", seeds, "Comma-separated training seeds");
  ablate_cmd->add_option("--out", out, "Output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUsage;
  }

  try {
    if (*make_data) return cmd_make_data(task, n, seed, image_size, out);
    if (*train_cmd) return cmd_train(config, out, resume);
    if (*sample_cmd) return cmd_sample(checkpoint, config, cond, prompt, omega, steps, seed, out);
    if (*eval_cmd) return cmd_eval(checkpoint, config, out);
    if (*grad_cmd) return cmd_gradcheck(config, tolerance, fd_step, coords, seed, fault);
    if (*ablate_cmd) return cmd_ablate(config, strategies, seeds, out);
  } catch (const NumericError& e) {
    std::cerr << "numeric failure: " << e.what() << "\n";
    return kNumeric;
  } catch (const ConfigError& e) {
    std::cerr << "configuration error: " << e.what() << "\n";
    return kConfig;
  } catch (const VocabularyError& e) {
    std::cerr << "vocabulary error: " << e.what() << "\n";
    return kConfig;
  } catch (const IoError& e) {
    std::cerr << "i/o error: " << e.what() << "\n";
    return kConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kUsage;
  }
  return kUsage;
}
