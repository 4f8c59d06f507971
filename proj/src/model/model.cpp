#include "framegen/model/model.hpp"

#include <cmath>

#include "framegen/ops.hpp"
#include "framegen/rng.hpp"
#include "framegen/util.hpp"

namespace framegen {

void ModelConfig::validate() const {
  auto fail = [](const std::string& msg) { throw ConfigError("model config: " + msg); };
  if (image_size == 0 || channels == 0 || latent_factor == 0 || patch == 0) fail("sizes must be positive");
  if (image_size % (latent_factor * patch) != 0) {
    fail("image_size " + std::to_string(image_size) + " not divisible by latent_factor*patch = " +
         std::to_string(latent_factor * patch));
  }
  if (n_heads == 0 || d_model % n_heads != 0) fail("d_model must be divisible by n_heads");
  if (head_dim() % 16 != 0) fail("head_dim must be divisible by 16 so each 3D RoPE axis group has whole pairs");
  if (n_blocks == 0) fail("n_blocks must be positive");
  if (vocab_size < 2) fail("vocab_size must cover at least <pad> and <null>");
  if (t_max < 2) fail("t_max must be at least 2");
  if (mlp_ratio == 0) fail("mlp_ratio must be positive");
}

namespace {

// Cond and target AdaLN branches share one init stream.
std::string init_stream_name(std::string name) {
  for (const std::string branch : {".adaln.cond.", ".adaln.target."}) {
    if (auto pos = name.find(branch); pos != std::string::npos) name.replace(pos, branch.size(), ".adaln.video.");
  }
  return name;
}

}  // namespace

Model::Model(ModelConfig config, const ParameterStore& params, std::vector<bool> keyword_flags,
             const AdapterSet* adapters, MaskOptions mask_options)
    : config_(config), params_(&params), keyword_flags_(std::move(keyword_flags)), linears_(params, adapters) {
  config_.validate();
  layout_ = {config_.text_len, config_.tokens_per_frame(), config_.tokens_per_frame()};
  for (auto s : {MaskStrategy::A, MaskStrategy::B, MaskStrategy::C, MaskStrategy::None}) {
    masks_[static_cast<std::size_t>(s)] = build_mask(s, layout_, mask_options);
  }
  std::vector<Position> positions(config_.text_len, Position::sentinel());
  const auto g = static_cast<int>(config_.grid_size());
  for (int t = 0; t < 2; ++t) {
    for (int y = 0; y < g; ++y) {
      for (int x = 0; x < g; ++x) positions.push_back({t, y, x, false});
    }
  }
  rope_ = rope3d_tables(positions, config_.head_dim());
}

ParameterStore Model::init_params(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  const Rng root(seed);
  ParameterStore store;
  const auto d = config.d_model;
  auto gaussian = [&](const std::string& name, Shape shape, double stddev) {
    std::vector<double> v(numel(shape));
    Rng rng = root.fork(fnv1a64(init_stream_name(name)));
    rng.fill_normal(v, stddev);
    store.add(name, Tensor::from(std::move(shape), std::move(v), true));
  };
  auto zeros = [&](const std::string& name, Shape shape) { store.add(name, Tensor::zeros(std::move(shape), true)); };
  auto fan_in = [](std::size_t n) { return 1.0 / std::sqrt(static_cast<double>(n)); };

  gaussian("text.table", {config.vocab_size, d}, fan_in(d));
  gaussian("latent_proj.W", {d, config.token_dim()}, fan_in(config.token_dim()));
  zeros("latent_proj.b", {d});
  gaussian("uce.W", {d, d}, fan_in(d));
  zeros("uce.bias_c", {d});
  for (std::size_t b = 0; b < config.n_blocks; ++b) {
    for (auto s : kSegments) {
      const auto prefix = adaln_branch_prefix(b, s);
      gaussian(prefix + ".fc1.W", {d, d}, fan_in(d));
      zeros(prefix + ".fc1.b", {d});
      zeros(prefix + ".fc2.W", {6 * d, d});
      zeros(prefix + ".fc2.b", {6 * d});
    }
    const auto blk = "blocks." + std::to_string(b);
    for (const char* proj : {".attn.q.W", ".attn.k.W", ".attn.v.W"}) gaussian(blk + proj, {d, d}, fan_in(d));
    zeros(blk + ".attn.o.W", {d, d});
    zeros(blk + ".attn.o.b", {d});
    const auto hidden = config.mlp_ratio * d;
    gaussian(blk + ".mlp.fc1.W", {hidden, d}, fan_in(d));
    zeros(blk + ".mlp.fc1.b", {hidden});
    zeros(blk + ".mlp.fc2.W", {d, hidden});
    zeros(blk + ".mlp.fc2.b", {d});
  }
  zeros("head.W", {config.token_dim(), d});
  zeros("head.b", {config.token_dim()});
  return store;
}

std::vector<std::string> Model::default_lora_targets() {
  return {"blocks.*.adaln.*.fc1.W", "blocks.*.adaln.*.fc2.W", "blocks.*.attn.q.W",
          "blocks.*.attn.k.W",      "blocks.*.attn.v.W",      "blocks.*.attn.o.W"};
}

std::vector<std::string> Model::directly_trainable() { return {"text.table", "latent_proj.*", "uce.*", "head.*"}; }

TokenSequence Model::embed(const ModelInput& input) const {
  if (input.text_ids.size() != config_.text_len) {
    throw DimensionError("expected " + std::to_string(config_.text_len) + " text ids, got " +
                         std::to_string(input.text_ids.size()));
  }
  const auto patches = patchify_replicate({input.cond_latent, input.target_latent}, config_.patch);
  const auto& table = params_->get("text.table");
  auto cond = linears_(patches.cond, "latent_proj");
  const auto target = linears_(patches.target, "latent_proj");
  const auto instance = extract_instance_embedding(input.text_ids, keyword_flags_, table);
  cond = uce_apply(cond, instance, params_->get("uce.W"), params_->get("uce.bias_c"));
  return build_sequence(embed_text(input.text_ids, table), cond, target, patches.cond_positions,
                        patches.target_positions);
}

Tensor Model::dit_block(const Tensor& tokens, const Layout& layout, std::size_t block, std::size_t t,
                        const MaskMatrix& mask, AttentionProbe* probe) const {
  const auto mod = modulation(t, config_.t_max, block, config_.d_model, linears_);
  const auto prefix = "blocks." + std::to_string(block);

  const auto attn_in = sc_adaln(tokens, layout, mod.attn).joined();
  const auto attn = fcd_attention(attn_in, config_.n_heads, linears_, prefix + ".attn", mask, rope_, probe);
  auto h = add(tokens, apply_gates(attn, layout, mod.attn));

  const auto mlp_in = sc_adaln(h, layout, mod.mlp).joined();
  const auto mlp = linears_(gelu(linears_(mlp_in, prefix + ".mlp.fc1")), prefix + ".mlp.fc2");
  return add(h, apply_gates(mlp, layout, mod.mlp));
}

Tensor Model::predict_noise(const ModelInput& input, MaskStrategy strategy, AttentionProbe* probe) const {
  const auto seq = embed(input);
  if (seq.layout != layout_) throw DimensionError("input latents do not match the configured token layout");
  const auto& m = mask(strategy);
  Tensor h = seq.tokens;
  for (std::size_t b = 0; b < config_.n_blocks; ++b) h = dit_block(h, layout_, b, input.t, m, probe);
  const auto target = slice_rows(h, layout_.begin(Segment::Target), layout_.end(Segment::Target));
  const auto out = linears_(layer_norm(target), "head");
  const auto ls = config_.latent_size();
  return unpatchify(out, ls, ls, config_.latent_channels(), config_.patch, ReplicaMode::Average);
}

}  // namespace framegen
