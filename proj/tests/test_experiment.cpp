#include <cstdlib>
#include <filesystem>

#include "doctest.h"
#include "framegen/checkpoint.hpp"
#include "framegen/errors.hpp"
#include "framegen/experiment.hpp"
#include "support.hpp"

using namespace framegen;
using namespace fgtest;

namespace {

RunConfig quick_config() {
  auto c = miniature_config();
  c.steps = 6;
  c.batch_size = 2;
  c.data_n = 8;
  c.heldout_n = 2;
  c.sample_steps = 3;
  c.checkpoint_every = 3;
  c.optim.lr = 1e-3;
  c.model.text_len = 6;  // toy captions run to five words
  return c;
}

std::vector<TrainingExample> examples_for(const RunConfig& c) {
  const auto& vocab = Vocabulary::builtin();
  return to_examples(training_data(c, vocab).samples, resolve_model_config(c, vocab), vocab);
}

bool same_params(const ParameterStore& a, const ParameterStore& b) {
  if (a.names() != b.names()) return false;
  for (const auto& [name, t] : a) {
    if (!bitwise_equal(t, b.get(name))) return false;
  }
  return true;
}

std::filesystem::path scratch_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("framegen_test_" + name);
  std::filesystem::remove_all(dir);
  return dir;
}

}  // namespace

TEST_SUITE("run_config") {
  TEST_CASE("parse, resolve and round trip") {
    const auto c = RunConfig::parse(
        "# comment\n[model]\nd_model = 64\nn_heads = 4\n\n[train]\nsteps = 12  # trailing\n[data]\ntask = subject\n");
    CHECK(c.model.d_model == 64);
    CHECK(c.steps == 12);
    CHECK(c.task == Task::Subject);
    CHECK(c.effective_omega() == 6.0);
    CHECK(RunConfig{}.effective_omega() == 2.0);

    const auto text = c.to_ini();
    const auto back = RunConfig::parse(text);
    CHECK(back.to_ini() == text);
    CHECK(back.hash() == c.hash());
    CHECK(RunConfig{}.hash() != c.hash());
    CHECK(back.omega.has_value());
  }

  TEST_CASE("unknown keys and bad values are config errors") {
    CHECK_THROWS_AS(RunConfig::parse("[model]\nwidth = 3\n"), ConfigError);
    CHECK_THROWS_AS(RunConfig::parse("[nowhere]\nsteps = 3\n"), ConfigError);
    CHECK_THROWS_AS(RunConfig::parse("[train]\nsteps = many\n"), ConfigError);
    CHECK_THROWS_AS(RunConfig::parse("[train]\nsteps 3\n"), ConfigError);
    CHECK_THROWS_AS(RunConfig::parse("[mask]\nstrategy = z\n"), ConfigError);
    try {
      RunConfig::parse("[optim]\nlearning_rate = 1\n");
    } catch (const ConfigError& e) {
      CHECK(std::string(e.what()).find("learning_rate") != std::string::npos);
    }

    auto c = RunConfig{};
    c.batch_size = 0;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = RunConfig{};
    c.optim.lr = -1.0;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = RunConfig{};
    c.sample_steps = 0;
    CHECK_THROWS_AS(c.validate(), ConfigError);
  }

  TEST_CASE("run defaults") {
    const RunConfig c;
    CHECK(c.optim.lr == 1e-4);
    CHECK(c.sample_steps == 50);
    CHECK(c.mask == MaskStrategy::A);
    CHECK(c.effective_lora_targets() == Model::default_lora_targets());
  }
}

TEST_SUITE("experiment") {
  TEST_CASE("same seed trains to bitwise identical parameters") {
    const auto c = quick_config();
    const auto& vocab = Vocabulary::builtin();
    Trainer a(c, vocab, examples_for(c)), b(c, vocab, examples_for(c));
    for (int i = 0; i < 4; ++i) {
      const auto ra = a.step(), rb = b.step();
      CHECK(ra.loss == rb.loss);
    }
    CHECK(same_params(a.params(), b.params()));

    auto other = c;
    other.seed = 1;
    Trainer d(other, vocab, examples_for(other));
    d.step();
    CHECK_FALSE(same_params(a.params(), d.params()));
  }

  TEST_CASE("restoring a checkpoint resumes bitwise") {
    const auto c = quick_config();
    const auto& vocab = Vocabulary::builtin();
    Trainer full(c, vocab, examples_for(c));
    for (int i = 0; i < 6; ++i) full.step();

    Trainer first(c, vocab, examples_for(c));
    for (int i = 0; i < 3; ++i) first.step();
    const auto saved = deserialize_checkpoint(serialize_checkpoint(first.state()));
    Trainer second(c, vocab, examples_for(c));
    second.restore(saved);
    CHECK(second.steps_done() == 3);
    for (int i = 0; i < 3; ++i) second.step();
    CHECK(same_params(full.state(), second.state()));
  }

  TEST_CASE("train writes logs and checkpoints and resumes from disk") {
    const auto c = quick_config();
    const auto& vocab = Vocabulary::builtin();
    const auto dir = scratch_dir("train");
    Trainer t(c, vocab, examples_for(c));
    const auto summary = train(t, {dir, std::nullopt, nullptr});
    CHECK(summary.steps == 6);
    CHECK(summary.losses.size() == 6);
    CHECK(std::filesystem::exists(dir / "ckpt_000003.bin"));
    CHECK(std::filesystem::exists(dir / "ckpt_000006.bin"));
    CHECK(std::filesystem::exists(dir / "last.bin"));
    CHECK(std::filesystem::exists(dir / "config.ini"));

    Trainer resumed(c, vocab, examples_for(c));
    const auto rest = train(resumed, {scratch_dir("train_resume"), dir / "ckpt_000003.bin", nullptr});
    CHECK(rest.steps == 6);
    CHECK(rest.losses.size() == 3);
    CHECK(same_params(resumed.state(), load_checkpoint(dir / "last.bin")));
    std::filesystem::remove_all(dir);
    std::filesystem::remove_all(scratch_dir("train_resume"));
  }

  TEST_CASE("zero learning rate leaves every parameter unchanged") {
    auto c = quick_config();
    c.optim.lr = 0.0;
    const auto& vocab = Vocabulary::builtin();
    Trainer t(c, vocab, examples_for(c));
    const auto before = t.params().clone();
    for (int i = 0; i < 3; ++i) t.step();
    CHECK(same_params(before, t.params()));
  }

  TEST_CASE("LoRA runs keep the base frozen for 100 steps") {
    auto c = quick_config();
    c.lora = true;
    c.optim.lr = 1e-3;
    c.batch_size = 1;
    const auto& vocab = Vocabulary::builtin();
    Trainer t(c, vocab, examples_for(c));
    const auto before = t.params().clone();
    for (int i = 0; i < 100; ++i) t.step();
    std::size_t moved_adapters = 0;
    for (const auto& [name, p] : t.params()) {
      const bool moved = !bitwise_equal(p, before.get(name));
      if (!p.requires_grad()) CHECK_MESSAGE(!moved, name);
      if (name.starts_with("lora.") && moved) ++moved_adapters;
    }
    CHECK(moved_adapters > 0);
  }

  TEST_CASE("inference loads what training saved") {
    const auto c = quick_config();
    const auto& vocab = Vocabulary::builtin();
    const auto dir = scratch_dir("infer");
    Trainer t(c, vocab, examples_for(c));
    train(t, {dir, std::nullopt, nullptr});
    const auto inf = load_inference_model(dir / "last.bin");
    CHECK(inf->config.hash() == c.hash());
    const auto held = heldout_data(c, vocab);
    const auto r1 = evaluate(*inf->model, inf->schedule, held.samples, vocab, inf->config);
    const auto r2 = evaluate(*inf->model, inf->schedule, held.samples, vocab, inf->config);
    CHECK(r1.rows.size() == 2);
    CHECK(r1.to_csv() == r2.to_csv());
    std::filesystem::remove_all(dir);
  }

  TEST_CASE("ablation cells are deterministic and ordered") {
    auto c = quick_config();
    c.steps = 2;
    const std::vector<MaskStrategy> all = {MaskStrategy::A, MaskStrategy::B, MaskStrategy::C, MaskStrategy::None};
    const auto t1 = ablate_masks(c, all, {1, 0}, 2);
    const auto t2 = ablate_masks(c, all, {0, 1}, 1);
    CHECK(t1.to_csv() == t2.to_csv());
    REQUIRE(t1.cells.size() == 8);
    CHECK(t1.cells[0].strategy == MaskStrategy::A);
    CHECK(t1.cells[0].seed == 0);
    CHECK(t1.cells[1].seed == 1);
    CHECK(t1.cells[7].strategy == MaskStrategy::None);
    for (const auto& cell : t1.cells) CHECK_FALSE(cell.diverged);
  }

  TEST_CASE("worker count honours FRAMEGEN_THREADS") {
    ::setenv("FRAMEGEN_THREADS", "3", 1);
    CHECK(worker_count() == 3);
    ::setenv("FRAMEGEN_THREADS", "zero", 1);
    CHECK_THROWS_AS(worker_count(), ConfigError);
    ::unsetenv("FRAMEGEN_THREADS");
    CHECK(worker_count() >= 1);
  }

  TEST_CASE("model gradcheck on the miniature config") {
    ModelGradCheckOptions o;
    o.coords_per_param = 2;
    const auto r = model_gradcheck(miniature_config(), o);
    CHECK(r.max_rel_error <= 1e-4);
    CHECK(r.blocks.size() == 2);
  }
}
