// Acceptance run: one PASS/FAIL line per criterion, exit 0 iff all pass.
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <set>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "framegen/checkpoint.hpp"
#include "framegen/experiment.hpp"
#include "framegen/model/adaln.hpp"
#include "framegen/model/codec.hpp"
#include "framegen/ops.hpp"
#include "framegen/util.hpp"

using namespace framegen;

namespace {

constexpr int kMaskTrials = 100;
constexpr double kBlockedMass = 1e-30;
constexpr double kRowSum = 1e-9;
constexpr double kGradTolerance = 1e-4;
constexpr double kDecoupling = 1e-9;
constexpr std::size_t kLoraSteps = 100;
constexpr double kCfgTolerance = 1e-12;
constexpr double kLossRatio = 0.5;
constexpr double kCannySsim = 0.5;
constexpr std::size_t kLossWindow = 100;
constexpr std::size_t kCannyMaxSteps = 5000;
constexpr std::size_t kDeterminismSteps = 8;

struct Outcome {
  Outcome() = default;
  Outcome(bool p, std::string d, std::string f = {}) : pass(p), detail(std::move(d)), flag(std::move(f)) {}

  bool pass = false;
  std::string detail;
  std::string flag;
};

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

void randomize(ParameterStore& params, std::uint64_t seed) {
  const Rng root(seed);
  std::uint64_t k = 0;
  for (auto& [name, t] : params) {
    auto rng = root.fork(k++);
    rng.fill_normal(t.mutable_data(), t.rank() == 2 ? 1.0 / std::sqrt(static_cast<double>(t.dim(1))) : 0.1);
  }
}

Tensor random_tensor(Shape shape, Rng& rng, double sd = 1.0, bool requires_grad = false) {
  std::vector<double> v(numel(shape));
  rng.fill_normal(v, sd);
  return Tensor::from(std::move(shape), std::move(v), requires_grad);
}

// Miniature model with captions wide enough for the toy tasks.
RunConfig small_config() {
  auto c = miniature_config();
  c.model.text_len = 6;
  c.data_n = 16;
  c.batch_size = 2;
  c.optim.lr = 1e-3;
  return c;
}

ModelInput random_input(const ModelConfig& mc, const Vocabulary& vocab, Rng& rng, std::size_t t) {
  const auto l = mc.latent_size();
  return {random_tensor({l, l, mc.latent_channels()}, rng), random_tensor({l, l, mc.latent_channels()}, rng),
          vocab.encode("red square left on gray", mc.text_len), t};
}

bool same_store(const ParameterStore& a, const ParameterStore& b) {
  return serialize_checkpoint(a) == serialize_checkpoint(b);
}

double window_mean(const std::vector<double>& v, bool head) {
  const auto n = std::min(kLossWindow, v.size());
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) s += head ? v[i] : v[v.size() - 1 - i];
  return n ? s / static_cast<double>(n) : 0.0;
}

Outcome mask_exactness() {
  const auto& vocab = Vocabulary::builtin();
  const auto rc = small_config();
  const auto mc = resolve_model_config(rc, vocab);
  auto params = Model::init_params(mc, 0);
  const Model model(mc, params, vocab.noun_flags());
  double worst_blocked = 0.0, worst_row = 0.0;
  for (int trial = 0; trial < kMaskTrials; ++trial) {
    randomize(params, 1000 + static_cast<std::uint64_t>(trial));
    Rng rng(5000 + static_cast<std::uint64_t>(trial));
    const auto in = random_input(mc, vocab, rng, rng.below(mc.t_max));
    for (auto s : {MaskStrategy::A, MaskStrategy::B, MaskStrategy::C, MaskStrategy::None}) {
      AttentionProbe probe;
      NoGradGuard no_grad;
      model.predict_noise(in, s, &probe);
      const auto& m = model.mask(s);
      const auto L = m.length;
      for (const auto& w : probe.weights) {
        for (std::size_t i = 0; i < L; ++i) {
          double row = 0.0;
          for (std::size_t j = 0; j < L; ++j) {
            row += w[i * L + j];
            if (m.blocked(i, j)) worst_blocked = std::max(worst_blocked, w[i * L + j]);
          }
          worst_row = std::max(worst_row, std::abs(row - 1.0));
        }
      }
    }
  }
  return {worst_blocked <= kBlockedMass && worst_row <= kRowSum,
          std::to_string(kMaskTrials) + " trials x 4 strategies: max blocked mass " + fmt("%.1e", worst_blocked) +
              " (<= 1e-30), max |row sum - 1| " + fmt("%.1e", worst_row) + " (<= 1e-9)"};
}

Outcome gradient_soundness() {
  const auto r = model_gradcheck(miniature_config());
  return {r.max_rel_error <= kGradTolerance,
          "miniature config, h=1e-5: max relative error " + fmt("%.3e", r.max_rel_error) + " at " + r.worst_param +
              " (<= 1e-4)"};
}

Outcome decoupling() {
  const auto& vocab = Vocabulary::builtin();
  const auto rc = small_config();
  const auto mc = resolve_model_config(rc, vocab);
  auto params = Model::init_params(mc, 1);
  randomize(params, 2);
  const Model model(mc, params, vocab.noun_flags());
  Rng rng(3);
  const auto seq = model.embed(random_input(mc, vocab, rng, 400));

  // (a) reachability from the cond branch's modulation
  bool a = true;
  for (std::size_t b = 0; b < mc.n_blocks; ++b) {
    const auto m = modulation(400, mc.t_max, b, mc.d_model, model.linears());
    for (const auto* mp : {&m.attn, &m.mlp}) {
      const auto out = sc_adaln(seq.tokens, seq.layout, *mp);
      for (const auto& leaf : {(*mp)[Segment::Cond].gamma, (*mp)[Segment::Cond].beta}) {
        a = a && !out[Segment::Text].depends_on(leaf) && !out[Segment::Target].depends_on(leaf) &&
            out[Segment::Cond].depends_on(leaf);
      }
    }
  }

  // (b) cond tokens against target pixels
  const auto n = mc.image_size;
  const auto cond_img = random_tensor({n, n, 3}, rng, 0.3, true);
  const auto target_img = random_tensor({n, n, 3}, rng, 0.3, true);
  const auto pt = patchify_replicate({encode_latent(cond_img, mc.latent_factor), encode_latent(target_img, mc.latent_factor)},
                                     mc.patch);
  backward(sum(mul(pt.cond, random_tensor(pt.cond.shape(), rng))));
  double max_grad = 0.0;
  if (target_img.has_grad()) {
    for (double g : target_img.grad()) max_grad = std::max(max_grad, std::abs(g));
  }
  const bool b = max_grad == 0.0;

  // (c) text perturbation against cond attention outputs under mask A
  auto perturbed = std::vector<double>(seq.tokens.data().begin(), seq.tokens.data().end());
  for (std::size_t i = 0; i < seq.layout.text * mc.d_model; ++i) perturbed[i] += 3.0 * std::sin(1.0 + static_cast<double>(i));
  const auto tokens2 = Tensor::from(seq.tokens.shape(), perturbed);
  double worst_c = 0.0;
  for (std::size_t blk = 0; blk < mc.n_blocks; ++blk) {
    const auto prefix = "blocks." + std::to_string(blk) + ".attn";
    const auto& mask = model.mask(MaskStrategy::A);
    const auto o1 = fcd_attention(seq.tokens, mc.n_heads, model.linears(), prefix, mask, model.rope());
    const auto o2 = fcd_attention(tokens2, mc.n_heads, model.linears(), prefix, mask, model.rope());
    const auto lo = seq.layout.begin(Segment::Cond), hi = seq.layout.end(Segment::Cond);
    const auto d1 = slice_rows(o1, lo, hi), d2 = slice_rows(o2, lo, hi);
    for (std::size_t i = 0; i < d1.size(); ++i) worst_c = std::max(worst_c, std::abs(d1.at(i) - d2.at(i)));
  }
  const bool c = worst_c <= kDecoupling;
  return {a && b && c, std::string("(a) cond-branch gamma/beta unreachable from text/target: ") + (a ? "yes" : "no") +
                           "; (b) max |d cond / d target pixel| = " + fmt("%.1e", max_grad) +
                           "; (c) cond output change under mask A = " + fmt("%.1e", worst_c) + " (<= 1e-9)"};
}

Outcome lora_discipline() {
  const auto& vocab = Vocabulary::builtin();
  auto rc = small_config();
  const auto mc = resolve_model_config(rc, vocab);

  // identity at creation
  auto params = Model::init_params(mc, 4);
  randomize(params, 5);
  Rng rng(6);
  const auto in = random_input(mc, vocab, rng, 300);
  Tensor before;
  {
    const Model base(mc, params, vocab.noun_flags());
    NoGradGuard no_grad;
    before = base.predict_noise(in, MaskStrategy::A);
  }
  const auto set = inject(params, {rc.lora_rank, rc.lora_alpha, Model::default_lora_targets(),
                                   Model::directly_trainable(), 7});
  Tensor after;
  {
    const Model adapted(mc, params, vocab.noun_flags(), &set);
    NoGradGuard no_grad;
    after = adapted.predict_noise(in, MaskStrategy::A);
  }
  const bool identity = std::vector<double>(before.data().begin(), before.data().end()) ==
                        std::vector<double>(after.data().begin(), after.data().end());

  // the adapted-name set, enumerated independently from the block layout
  std::set<std::string> expected;
  for (std::size_t b = 0; b < mc.n_blocks; ++b) {
    const auto blk = "blocks." + std::to_string(b);
    for (const char* seg : {"text", "cond", "target"}) {
      for (const char* layer : {"fc1", "fc2"}) expected.insert(blk + ".adaln." + seg + "." + layer + ".W");
    }
    for (const char* proj : {"q", "k", "v", "o"}) expected.insert(blk + ".attn." + proj + ".W");
  }

  // frozen weights after training
  rc.lora = true;
  Trainer trainer(rc, vocab, to_examples(training_data(rc, vocab).samples, mc, vocab));
  const auto names = trainer.adapters().base_names();
  const bool name_set = std::set<std::string>(names.begin(), names.end()) == expected && names.size() == expected.size();
  const auto snapshot = trainer.params().clone();
  for (std::size_t i = 0; i < kLoraSteps; ++i) trainer.step();
  std::size_t frozen = 0, frozen_moved = 0, adapters_moved = 0;
  for (const auto& [name, t] : trainer.params()) {
    const auto& old = snapshot.get(name);
    const bool moved = std::vector<double>(t.data().begin(), t.data().end()) !=
                       std::vector<double>(old.data().begin(), old.data().end());
    if (!t.requires_grad()) {
      ++frozen;
      frozen_moved += moved ? 1 : 0;
    } else if (name.starts_with("lora.") && moved) {
      ++adapters_moved;
    }
  }
  return {identity && name_set && frozen_moved == 0 && adapters_moved > 0,
          std::string("fresh adapters bitwise identity: ") + (identity ? "yes" : "no") + "; adapted set (" +
              std::to_string(names.size()) + ") matches enumeration: " + (name_set ? "yes" : "no") + "; after " +
              std::to_string(kLoraSteps) + " steps " + std::to_string(frozen_moved) + "/" + std::to_string(frozen) +
              " frozen tensors moved, " + std::to_string(adapters_moved) + " adapter tensors moved"};
}

Outcome cfg_algebra() {
  const auto& vocab = Vocabulary::builtin();
  const auto rc = small_config();
  const auto mc = resolve_model_config(rc, vocab);
  auto params = Model::init_params(mc, 8);
  randomize(params, 9);
  const Model model(mc, params, vocab.noun_flags());
  Rng rng(10);
  double worst1 = 0.0, worst0 = 0.0;
  NoGradGuard no_grad;
  for (int trial = 0; trial < 5; ++trial) {
    const auto in = random_input(mc, vocab, rng, 100 + 150 * static_cast<std::size_t>(trial));
    const CfgInputs ci{in.target_latent, in.cond_latent, in.text_ids, vocab.null_prompt(mc.text_len), in.t};
    const auto ec = model.predict_noise(in, MaskStrategy::A);
    const auto eu = model.predict_noise({in.cond_latent, in.target_latent, ci.null_ids, in.t}, MaskStrategy::A);
    const auto g1 = cfg_predict(model, ci, 1.0, MaskStrategy::A), g0 = cfg_predict(model, ci, 0.0, MaskStrategy::A);
    for (std::size_t i = 0; i < ec.size(); ++i) {
      worst1 = std::max(worst1, std::abs(g1.at(i) - ec.at(i)));
      worst0 = std::max(worst0, std::abs(g0.at(i) - eu.at(i)));
    }
  }
  return {worst1 <= kCfgTolerance && worst0 <= kCfgTolerance,
          "max |cfg(1) - cond| " + fmt("%.1e", worst1) + ", max |cfg(0) - uncond| " + fmt("%.1e", worst0) +
              " (<= 1e-12)"};
}

RunConfig canny_config() {
  RunConfig c;
  c.task = Task::Canny;
  return c;
}

Outcome canny_training() {
  const auto& vocab = Vocabulary::builtin();
  const auto rc = canny_config();
  const auto mc = resolve_model_config(rc, vocab);
  const auto start = std::chrono::steady_clock::now();
  Trainer trainer(rc, vocab, to_examples(training_data(rc, vocab).samples, mc, vocab));
  const auto summary = train(trainer);
  const auto minutes = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count() / 60.0;
  const double first = window_mean(summary.losses, true), last = window_mean(summary.losses, false);
  const auto held = heldout_data(rc, vocab);
  const auto report = evaluate(trainer.model(), trainer.schedule(), held.samples, vocab, rc);
  double flat = 0.0;
  for (const auto& s : held.samples) flat += ssim(Tensor::full(s.target_image.shape(), 0.5), s.target_image);
  flat /= static_cast<double>(held.samples.size());
  const bool loss_ok = last <= kLossRatio * first;
  const bool ssim_ok = report.mean_ssim >= kCannySsim;
  return {loss_ok && ssim_ok && rc.steps <= kCannyMaxSteps,
          std::to_string(rc.steps) + " steps in " + fmt("%.1f", minutes) + " min; loss " + fmt("%.4f", first) +
              " -> " + fmt("%.4f", last) + " (ratio " + fmt("%.3f", last / first) + ", <= 0.5): " +
              (loss_ok ? "ok" : "no") + "; held-out SSIM " + fmt("%.4f", report.mean_ssim) + " over " +
              std::to_string(report.rows.size()) + " samples (>= 0.5): " + (ssim_ok ? "ok" : "no") +
              "; flat-gray reference SSIM " + fmt("%.4f", flat)};
}

RunConfig ablation_config() {
  RunConfig c;
  c.task = Task::Subject;
  c.steps = 2000;
  c.checkpoint_every = 2000;
  return c;
}

Outcome mask_ablation(std::size_t n_seeds) {
  std::vector<std::uint64_t> seeds;
  for (std::size_t i = 0; i < n_seeds; ++i) seeds.push_back(i);
  const auto table = ablate_masks(ablation_config(),
                                  {MaskStrategy::A, MaskStrategy::B, MaskStrategy::C, MaskStrategy::None}, seeds);
  std::printf("%s", table.summary().c_str());
  Outcome o;
  o.pass = table.c_strictly_worst();
  o.detail = "median SSIM a " + fmt("%.4f", table.median_ssim(MaskStrategy::A)) + ", b " +
             fmt("%.4f", table.median_ssim(MaskStrategy::B)) + ", c " + fmt("%.4f", table.median_ssim(MaskStrategy::C)) +
             ", none " + fmt("%.4f", table.median_ssim(MaskStrategy::None)) + " over " + std::to_string(n_seeds) +
             " seeds; c strictly worst: " + (o.pass ? "yes" : "no");
  if (!table.a_at_least_none()) o.flag = "mask A below no mask";
  return o;
}

Outcome determinism() {
  const auto& vocab = Vocabulary::builtin();
  const auto rc = small_config();
  const auto mc = resolve_model_config(rc, vocab);
  const auto data = to_examples(training_data(rc, vocab).samples, mc, vocab);

  Trainer a(rc, vocab, data), b(rc, vocab, data);
  for (std::size_t i = 0; i < kDeterminismSteps; ++i) a.step(), b.step();
  const bool same_seed = same_store(a.state(), b.state());

  const auto bytes = serialize_checkpoint(a.state());
  const bool ckpt = serialize_checkpoint(deserialize_checkpoint(bytes)) == bytes;

  Trainer first(rc, vocab, data);
  for (std::size_t i = 0; i < kDeterminismSteps / 2; ++i) first.step();
  Trainer resumed(rc, vocab, data);
  resumed.restore(deserialize_checkpoint(serialize_checkpoint(first.state())));
  for (std::size_t i = kDeterminismSteps / 2; i < kDeterminismSteps; ++i) resumed.step();
  const bool resume = same_store(a.state(), resumed.state());

  Rng rng(11);
  bool codec = true, patch = true;
  for (int trial = 0; trial < 10; ++trial) {
    const auto img = random_tensor({mc.image_size, mc.image_size, 3}, rng);
    const auto back = decode_latent(encode_latent(img, mc.latent_factor), mc.latent_factor);
    codec = codec && std::vector<double>(back.data().begin(), back.data().end()) ==
                         std::vector<double>(img.data().begin(), img.data().end());
    const auto l = mc.latent_size();
    const auto c = random_tensor({l, l, mc.latent_channels()}, rng), t = random_tensor({l, l, mc.latent_channels()}, rng);
    const auto pt = patchify_replicate({c, t}, mc.patch);
    for (const auto& [tokens, orig] : {std::pair{pt.cond, c}, std::pair{pt.target, t}}) {
      const auto r = unpatchify(tokens, l, l, mc.latent_channels(), mc.patch, ReplicaMode::Exact);
      patch = patch && std::vector<double>(r.data().begin(), r.data().end()) ==
                           std::vector<double>(orig.data().begin(), orig.data().end());
    }
  }
  auto yes = [](bool v) { return v ? "yes" : "no"; };
  return {same_seed && ckpt && resume && codec && patch,
          std::string("same-seed checkpoints bitwise equal: ") + yes(same_seed) + "; checkpoint round trip: " +
              yes(ckpt) + "; codec round trip: " + yes(codec) + "; patchify round trip: " + yes(patch) +
              "; resume matches uninterrupted: " + yes(resume)};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance criteria 1-8"};
  std::vector<int> only;
  std::size_t seeds = 3;
  app.add_option("--only", only, "Run only these criteria")->delimiter(',');
  app.add_option("--seeds", seeds, "Seeds for the mask ablation (>= 3)")->check(CLI::Range(3, 100));
  CLI11_PARSE(app, argc, argv);

  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
      {"mask exactness", mask_exactness},
      {"gradient soundness", gradient_soundness},
      {"decoupling", decoupling},
      {"identity at init and LoRA discipline", lora_discipline},
      {"CFG algebra", cfg_algebra},
      {"canny toy training", canny_training},
      {"mask ablation trend", [&] { return mask_ablation(seeds); }},
      {"determinism and round trips", determinism},
  };
  bool all = true;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int id = static_cast<int>(i) + 1;
    if (!only.empty() && std::find(only.begin(), only.end(), id) == only.end()) continue;
    const auto start = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("error: ") + e.what(), ""};
    }
    const auto secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    all = all && o.pass;
    std::printf("criterion %d %s  %s: %s [%.1fs]%s\n", id, o.pass ? "PASS" : "FAIL", criteria[i].first.c_str(),
                o.detail.c_str(), secs, o.flag.empty() ? "" : ("  FLAG: " + o.flag).c_str());
    std::fflush(stdout);
  }
  return all ? 0 : 1;
}
