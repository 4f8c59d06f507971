#include <algorithm>
#include <cmath>
#include <filesystem>

#include "doctest.h"
#include "framegen/checkpoint.hpp"
#include "framegen/gradcheck.hpp"
#include "framegen/model/codec.hpp"
#include "support.hpp"

using namespace framegen;
using namespace fgtest;

namespace {

Linears plain(const ParameterStore& p) { return Linears(p); }

// Attention weights for one head computed with explicit loops.
std::vector<double> naive_attention(const Tensor& x, const ParameterStore& p, const std::string& prefix,
                                    std::size_t heads, std::size_t head, const MaskMatrix& mask,
                                    const RopeTables& rope, std::vector<double>* head_out) {
  const auto L = x.dim(0), d = x.dim(1), hd = d / heads;
  auto project = [&](const char* w) {
    const auto& W = p.get(prefix + w);
    std::vector<double> out(L * hd);
    for (std::size_t i = 0; i < L; ++i) {
      for (std::size_t c = 0; c < hd; ++c) {
        double s = 0.0;
        for (std::size_t k = 0; k < d; ++k) s += x.at(i * d + k) * W.at((head * hd + c) * d + k);
        out[i * hd + c] = s;
      }
    }
    return out;
  };
  auto rotate = [&](std::vector<double> v) {
    for (std::size_t i = 0; i < L; ++i) {
      for (std::size_t j = 0; j < hd / 2; ++j) {
        const double c = rope.cos[i * rope.half + j], s = rope.sin[i * rope.half + j];
        const double a = v[i * hd + 2 * j], b = v[i * hd + 2 * j + 1];
        v[i * hd + 2 * j] = a * c - b * s;
        v[i * hd + 2 * j + 1] = a * s + b * c;
      }
    }
    return v;
  };
  const auto q = rotate(project(".q.W")), k = rotate(project(".k.W")), v = project(".v.W");
  std::vector<double> w(L * L);
  for (std::size_t i = 0; i < L; ++i) {
    double mx = -1e300;
    for (std::size_t j = 0; j < L; ++j) {
      double s = 0.0;
      for (std::size_t c = 0; c < hd; ++c) s += q[i * hd + c] * k[j * hd + c];
      s = s / std::sqrt(static_cast<double>(hd)) + (mask.blocked(i, j) ? -kMaskBig : 0.0);
      w[i * L + j] = s;
      mx = std::max(mx, s);
    }
    double z = 0.0;
    for (std::size_t j = 0; j < L; ++j) z += (w[i * L + j] = std::exp(w[i * L + j] - mx));
    for (std::size_t j = 0; j < L; ++j) w[i * L + j] /= z;
  }
  if (head_out) {
    head_out->assign(L * hd, 0.0);
    for (std::size_t i = 0; i < L; ++i) {
      for (std::size_t j = 0; j < L; ++j) {
        for (std::size_t c = 0; c < hd; ++c) (*head_out)[i * hd + c] += w[i * L + j] * v[j * hd + c];
      }
    }
  }
  return w;
}

ParameterStore attention_params(std::size_t d, std::uint64_t seed) {
  ParameterStore p;
  std::uint64_t k = seed;
  for (const char* n : {"attn.q.W", "attn.k.W", "attn.v.W", "attn.o.W"}) {
    p.add(n, random_tensor({d, d}, k++, 1.0 / std::sqrt(static_cast<double>(d))));
  }
  p.add("attn.o.b", random_tensor({d}, k++, 0.1));
  return p;
}

std::vector<Position> layout_positions(const Layout& layout, int grid) {
  std::vector<Position> pos(layout.text, Position::sentinel());
  for (int t = 0; t < 2; ++t) {
    for (std::size_t i = 0; i < (t == 0 ? layout.cond : layout.target); ++i) {
      pos.push_back({t, static_cast<int>(i) / grid, static_cast<int>(i) % grid, false});
    }
  }
  return pos;
}

}  // namespace

TEST_SUITE("params") {
  TEST_CASE("store keeps insertion order and rejects duplicates") {
    ParameterStore s;
    s.add("b", Tensor::zeros({2}));
    s.add("a", Tensor::zeros({3}));
    CHECK(s.names() == std::vector<std::string>{"b", "a"});
    CHECK(s.total_elements() == 5);
    CHECK_THROWS_AS(s.add("a", Tensor::zeros({1})), ContractError);
    CHECK(s.contains("b"));
    CHECK_FALSE(s.contains("c"));
  }

  TEST_CASE("glob patterns") {
    CHECK(glob_match("blocks.*.attn.q.W", "blocks.11.attn.q.W"));
    CHECK(glob_match("blocks.*.adaln.*.fc1.W", "blocks.0.adaln.cond.fc1.W"));
    CHECK_FALSE(glob_match("blocks.*.attn.q.W", "blocks.0.attn.k.W"));
    CHECK(glob_match("head.?", "head.W"));
    CHECK_FALSE(glob_match("head.?", "head.Wx"));
  }

  TEST_CASE("clone is deep") {
    ParameterStore s;
    s.add("w", Tensor::from({2}, {1, 2}, true));
    auto c = s.clone();
    c.get("w").mutable_data()[0] = 9.0;
    CHECK(s.get("w").at(0) == 1.0);
  }
}

TEST_SUITE("checkpoint") {
  TEST_CASE("serialization round trip is exact and the layout is as documented") {
    ParameterStore s;
    s.add("x", Tensor::from({2, 1}, {0.1, -std::numeric_limits<double>::denorm_min()}));
    s.add("lora.blocks.0.attn.q.W.A", Tensor::from({1}, {1e300}));
    const auto bytes = serialize_checkpoint(s);
    CHECK(bytes.substr(0, 8) == std::string(kCheckpointMagic, 8));
    // magic + count + (len + name + rank + extents + payload) per entry
    CHECK(bytes.size() == 8 + 8 + (8 + 1 + 8 + 16 + 16) + (8 + 24 + 8 + 8 + 8));
    const auto back = deserialize_checkpoint(bytes);
    REQUIRE(back.names() == s.names());
    for (const auto& [name, t] : s) CHECK(bitwise_equal(back.get(name), t));
    CHECK(serialize_checkpoint(back) == bytes);
  }

  TEST_CASE("corrupt checkpoints are rejected") {
    ParameterStore s;
    s.add("x", Tensor::from({2}, {1, 2}));
    auto bytes = serialize_checkpoint(s);
    CHECK_THROWS(deserialize_checkpoint(bytes.substr(0, bytes.size() - 1)));
    CHECK_THROWS(deserialize_checkpoint(bytes + "x"));
    bytes[0] = 'X';
    CHECK_THROWS(deserialize_checkpoint(bytes));
  }

  TEST_CASE("model parameters survive save and load, and so does the forward pass") {
    const auto cfg = tiny_config();
    auto params = Model::init_params(cfg, 3);
    randomize(params, 4);
    const auto path = std::filesystem::temp_directory_path() / "framegen_test_ckpt.bin";
    save_checkpoint(path, params);
    auto loaded = load_checkpoint(path);
    std::filesystem::remove(path);
    const auto flags = Vocabulary::builtin().noun_flags();
    const Model a(cfg, params, flags), b(cfg, loaded, flags);
    const auto in = random_input(cfg, 5);
    CHECK(bitwise_equal(a.predict_noise(in, MaskStrategy::A), b.predict_noise(in, MaskStrategy::A)));
  }

  TEST_CASE("assign_values checks shapes") {
    ParameterStore into, from;
    into.add("w", Tensor::zeros({2}));
    from.add("w", Tensor::from({2}, {1, 2}));
    from.add("extra", Tensor::zeros({1}));
    assign_values(into, from);
    CHECK(into.get("w").at(1) == 2.0);
    ParameterStore bad;
    bad.add("w", Tensor::zeros({3}));
    CHECK_THROWS(assign_values(into, bad));
  }
}

TEST_SUITE("tokens") {
  TEST_CASE("codec round trip is exact") {
    const auto img = random_tensor({8, 8, 3}, 40);
    CHECK(bitwise_equal(decode_latent(encode_latent(img, 2), 2), img));
    const auto lat = encode_latent(img, 2);
    REQUIRE(lat.shape() == Shape{4, 4, 12});
    // vector (1, 2) is the block at (2, 4) flattened as (dy, dx, c)
    CHECK(lat.at((1 * 4 + 2) * 12 + (1 * 2 + 0) * 3 + 2) == img.at(((2 + 1) * 8 + 4) * 3 + 2));
    std::vector<double> px(8 * 8 * 3);
    for (std::size_t i = 0; i < px.size(); ++i) px[i] = static_cast<double>(i % 256) / 255.0;
    const auto grid = Tensor::from({8, 8, 3}, px);
    CHECK(max_abs_diff(latent_to_image(image_to_latent(grid, 2), 2), grid) < 1e-15);
  }

  TEST_CASE("replication patchify matches the layout oracle and inverts exactly") {
    const std::size_t h = 4, c = 3, p = 2;
    const auto cond = random_tensor({h, h, c}, 41), target = random_tensor({h, h, c}, 42);
    const auto pt = patchify_replicate({cond, target}, p);
    REQUIRE(pt.cond.shape() == Shape{4, p * p * p * c});
    for (std::size_t gy = 0; gy < 2; ++gy) {
      for (std::size_t gx = 0; gx < 2; ++gx) {
        const auto tok = gy * 2 + gx;
        CHECK(pt.cond_positions[tok] == Position{0, static_cast<int>(gy), static_cast<int>(gx), false});
        CHECK(pt.target_positions[tok] == Position{1, static_cast<int>(gy), static_cast<int>(gx), false});
        for (std::size_t dt = 0; dt < p; ++dt) {
          for (std::size_t dy = 0; dy < p; ++dy) {
            for (std::size_t dx = 0; dx < p; ++dx) {
              for (std::size_t ch = 0; ch < c; ++ch) {
                const auto col = ((dt * p + dy) * p + dx) * c + ch;
                const auto src = ((gy * p + dy) * h + gx * p + dx) * c + ch;
                CHECK(pt.cond.at(tok * 24 + col) == cond.at(src));
                CHECK(pt.target.at(tok * 24 + col) == target.at(src));
              }
            }
          }
        }
      }
    }
    CHECK(bitwise_equal(unpatchify(pt.cond, h, h, c, p, ReplicaMode::Exact), cond));
    CHECK(bitwise_equal(unpatchify(pt.target, h, h, c, p, ReplicaMode::Average), target));
  }

  TEST_CASE("exact unpatchify rejects disagreeing replicas") {
    const auto pt = patchify_replicate({random_tensor({4, 4, 3}, 43), random_tensor({4, 4, 3}, 44)}, 2);
    auto v = values(pt.cond);
    v[0] += 1.0;
    CHECK_THROWS(unpatchify(Tensor::from(pt.cond.shape(), v), 4, 4, 3, 2, ReplicaMode::Exact));
  }

  TEST_CASE("cond tokens have zero gradient with respect to target pixels") {
    const auto cfg = tiny_config();
    const auto target_img = random_tensor({16, 16, 3}, 45, 0.3, true);
    const auto cond_img = random_tensor({16, 16, 3}, 46, 0.3, true);
    const auto pt = patchify_replicate({encode_latent(cond_img, 2), encode_latent(target_img, 2)}, cfg.patch);
    backward(sum(mul(pt.cond, random_tensor(pt.cond.shape(), 47))));
    const bool target_untouched = !target_img.has_grad() ||
                                  std::all_of(target_img.grad().begin(), target_img.grad().end(),
                                              [](double g) { return g == 0.0; });
    CHECK(target_untouched);
    REQUIRE(cond_img.has_grad());
    CHECK(std::any_of(cond_img.grad().begin(), cond_img.grad().end(), [](double g) { return g != 0.0; }));
  }

  TEST_CASE("build_sequence keeps [text; cond; target] and slicing recovers each part") {
    const auto text = random_tensor({3, 8}, 50), cond = random_tensor({4, 8}, 51), target = random_tensor({4, 8}, 52);
    std::vector<Position> cp(4), tp(4);
    const auto seq = build_sequence(text, cond, target, cp, tp);
    CHECK(seq.layout == Layout{3, 4, 4});
    CHECK(seq.layout.total() == 3 + 2 * 4);
    CHECK(bitwise_equal(seq.segment(Segment::Text), text));
    CHECK(bitwise_equal(seq.segment(Segment::Cond), cond));
    CHECK(bitwise_equal(seq.segment(Segment::Target), target));
    CHECK(seq.positions[0].none);
    CHECK(seq.layout.segment_of(3) == Segment::Cond);
    CHECK(seq.layout.segment_of(10) == Segment::Target);
    CHECK_THROWS_AS(build_sequence(random_tensor({3, 7}, 53), cond, target, cp, tp), DimensionError);
  }

  TEST_CASE("padded captions still occupy every text slot") {
    const auto& v = Vocabulary::builtin();
    const auto ids = v.null_prompt(4);
    CHECK(ids.size() == 4);
    const auto table = random_tensor({v.size(), 8}, 54);
    CHECK(embed_text(ids, table).dim(0) == 4);
  }

  TEST_CASE("UCE adds the mean keyword embedding and the task bias") {
    const auto& v = Vocabulary::builtin();
    const auto ids = v.encode("large circle left on white", 6);
    const auto table = random_tensor({v.size(), 4}, 55);
    const auto inst = extract_instance_embedding(ids, v.noun_flags(), table);
    REQUIRE(inst.has_value());
    const auto noun = v.id("circle");
    for (std::size_t c = 0; c < 4; ++c) CHECK(inst->at(c) == table.at(noun * 4 + c));
    CHECK_FALSE(extract_instance_embedding(v.encode("red on white", 6), v.noun_flags(), table).has_value());

    const auto cond = random_tensor({3, 4}, 56), w = random_tensor({4, 4}, 57), bias = random_tensor({4}, 58);
    const auto out = uce_apply(cond, inst, w, bias);
    for (std::size_t r = 0; r < 3; ++r) {
      for (std::size_t c = 0; c < 4; ++c) {
        double proj = 0.0;
        for (std::size_t k = 0; k < 4; ++k) proj += w.at(c * 4 + k) * inst->at(k);
        CHECK(out.at(r * 4 + c) == doctest::Approx(cond.at(r * 4 + c) + proj + bias.at(c)).epsilon(1e-14));
      }
    }
    const auto no_subject = uce_apply(cond, std::nullopt, w, bias);
    CHECK(no_subject.at(5) == doctest::Approx(cond.at(5) + bias.at(1)).epsilon(1e-14));
  }

  TEST_CASE("vocabulary") {
    const auto& v = Vocabulary::builtin();
    CHECK(v.token(v.pad_id()) == "<pad>");
    CHECK(v.token(v.null_id()) == "<null>");
    const auto ids = v.encode("red square left", 5);
    CHECK(v.decode(ids) == "red square left");
    CHECK_THROWS_AS(v.tokenize("red dragon"), VocabularyError);
    try {
      v.tokenize("dragon");
    } catch (const VocabularyError& e) {
      CHECK(std::string(e.what()).find("circle") != std::string::npos);
    }
    CHECK_THROWS_AS(v.encode("red square left on white", 3), VocabularyError);
    CHECK(Vocabulary::parse(v.to_tsv()).to_tsv() == v.to_tsv());
    CHECK_THROWS_AS(Vocabulary::parse("0\t<pad>\t-\n2\tx\t-\n"), VocabularyError);
  }
}

TEST_SUITE("rope") {
  TEST_CASE("angles follow the 2:3:3 split") {
    const std::vector<Position> pos = {{3, 5, 7, false}};
    const std::size_t hd = 16;
    const auto tb = rope3d_tables(pos, hd);
    // groups of 4, 6, 6 channels: 2, 3, 3 pairs
    const std::size_t group[3] = {4, 6, 6};
    const int coord[3] = {3, 5, 7};
    std::size_t pair = 0;
    for (int a = 0; a < 3; ++a) {
      for (std::size_t j = 0; j < group[a] / 2; ++j, ++pair) {
        const double angle = coord[a] * std::pow(10000.0, -2.0 * j / static_cast<double>(group[a]));
        CHECK(tb.cos[pair] == doctest::Approx(std::cos(angle)).epsilon(1e-15));
        CHECK(tb.sin[pair] == doctest::Approx(std::sin(angle)).epsilon(1e-15));
      }
    }
    CHECK(pair == hd / 2);
    CHECK_THROWS_AS(rope3d_tables(pos, 24), ConfigError);
  }

  TEST_CASE("origin and sentinel positions are identities, and rotations preserve norms") {
    const std::vector<Position> pos = {{0, 0, 0, false}, Position::sentinel(), {1, 2, 3, false}};
    const auto q = random_tensor({3, 32}, 60), k = random_tensor({3, 32}, 61);
    const auto [qr, kr] = rope3d_apply(q, k, pos);
    for (std::size_t c = 0; c < 32; ++c) {
      CHECK(qr.at(c) == q.at(c));
      CHECK(qr.at(32 + c) == q.at(32 + c));
    }
    double n0 = 0.0, n1 = 0.0;
    for (std::size_t c = 0; c < 32; ++c) {
      n0 += q.at(64 + c) * q.at(64 + c);
      n1 += qr.at(64 + c) * qr.at(64 + c);
    }
    CHECK(std::abs(std::sqrt(n0) - std::sqrt(n1)) < 1e-12);
  }

  TEST_CASE("scores depend only on relative position") {
    const auto q = random_tensor({1, 32}, 62), k = random_tensor({1, 32}, 63);
    auto score = [&](Position a, Position b) {
      const std::vector<Position> pa = {a}, pb = {b};
      const auto qa = rope3d_apply(q, q, pa).first;
      const auto kb = rope3d_apply(k, k, pb).second;
      double s = 0.0;
      for (std::size_t c = 0; c < 32; ++c) s += qa.at(c) * kb.at(c);
      return s;
    };
    Rng rng(64);
    for (int trial = 0; trial < 20; ++trial) {
      auto r = [&] { return static_cast<int>(rng.below(9)); };
      const Position a{r(), r(), r(), false}, b{r(), r(), r(), false};
      const int dt = r(), dy = r(), dx = r();
      const Position a2{a.t + dt, a.y + dy, a.x + dx, false}, b2{b.t + dt, b.y + dy, b.x + dx, false};
      CHECK(std::abs(score(a, b) - score(a2, b2)) < 1e-9);
    }
  }
}

TEST_SUITE("adaln") {
  TEST_CASE("timestep embedding") {
    const auto e = timestep_embedding(17, 8);
    for (std::size_t i = 0; i < 4; ++i) {
      const double f = std::pow(10000.0, -static_cast<double>(i) / 4.0);
      CHECK(e.at(i) == doctest::Approx(std::cos(17 * f)).epsilon(1e-14));
      CHECK(e.at(4 + i) == doctest::Approx(std::sin(17 * f)).epsilon(1e-14));
    }
  }

  TEST_CASE("modulation at init is gamma = beta = 0 and gate = 1") {
    const auto cfg = tiny_config();
    const auto params = Model::init_params(cfg, 1);
    const auto m = modulation(123, cfg.t_max, 0, cfg.d_model, plain(params));
    for (auto s : kSegments) {
      for (const auto* mp : {&m.attn, &m.mlp}) {
        for (std::size_t c = 0; c < cfg.d_model; ++c) {
          CHECK((*mp)[s].gamma.at(c) == 0.0);
          CHECK((*mp)[s].beta.at(c) == 0.0);
          CHECK((*mp)[s].gate.at(c) == 1.0);
        }
      }
    }
    CHECK_THROWS_AS(modulation(cfg.t_max, cfg.t_max, 0, cfg.d_model, plain(params)), ContractError);
  }

  TEST_CASE("cond and target branches start identical and diverge once trained") {
    const auto cfg = tiny_config();
    auto params = Model::init_params(cfg, 2);
    for (const char* leaf : {".fc1.W", ".fc1.b", ".fc2.W", ".fc2.b"}) {
      CHECK(bitwise_equal(params.get("blocks.1.adaln.cond" + std::string(leaf)),
                          params.get("blocks.1.adaln.target" + std::string(leaf))));
    }
    CHECK_FALSE(bitwise_equal(params.get("blocks.1.adaln.text.fc1.W"), params.get("blocks.1.adaln.cond.fc1.W")));
    randomize(params, 3);
    const auto m = modulation(10, cfg.t_max, 1, cfg.d_model, plain(params));
    const auto m2 = modulation(10, cfg.t_max, 1, cfg.d_model, plain(params));
    CHECK(bitwise_equal(m.attn[Segment::Cond].gamma, m2.attn[Segment::Cond].gamma));
    CHECK_FALSE(bitwise_equal(m.attn[Segment::Cond].gamma, m.attn[Segment::Target].gamma));
  }

  TEST_CASE("sc_adaln matches a per-segment oracle and is LN when unmodulated") {
    const Layout layout{2, 3, 3};
    const auto x = random_tensor({8, 16}, 70);
    ModulationParams zero;
    for (auto s : kSegments) zero[s] = {Tensor::zeros({16}), Tensor::zeros({16}), Tensor::full({16}, 1.0)};
    CHECK(bitwise_equal(sc_adaln(x, layout, zero).joined(), layer_norm(x)));

    ModulationParams mp;
    std::uint64_t k = 71;
    for (auto s : kSegments) mp[s] = {random_tensor({16}, k++), random_tensor({16}, k++), random_tensor({16}, k++)};
    const auto out = sc_adaln(x, layout, mp).joined();
    const auto ln = layer_norm(x);
    for (std::size_t r = 0; r < 8; ++r) {
      const auto& m = mp[layout.segment_of(r)];
      for (std::size_t c = 0; c < 16; ++c) {
        const double want = ln.at(r * 16 + c) * (1.0 + m.gamma.at(c)) + m.beta.at(c);
        CHECK(std::abs(out.at(r * 16 + c) - want) < 1e-14);
      }
    }
  }

  TEST_CASE("text and target outputs are unreachable from the cond branch") {
    const auto cfg = tiny_config();
    auto params = Model::init_params(cfg, 4);
    randomize(params, 5);
    const Model model(cfg, params, Vocabulary::builtin().noun_flags());
    const auto seq = model.embed(random_input(cfg, 6));
    const auto m = modulation(200, cfg.t_max, 0, cfg.d_model, model.linears());
    const auto out = sc_adaln(seq.tokens, seq.layout, m.attn);
    const auto& cond_w = params.get("blocks.0.adaln.cond.fc2.W");
    CHECK_FALSE(out[Segment::Text].depends_on(cond_w));
    CHECK_FALSE(out[Segment::Target].depends_on(cond_w));
    CHECK(out[Segment::Cond].depends_on(cond_w));
    // Same question through the whole network: a loss over the text rows
    // after a full block leaves the cond branch's gradient buffer untouched.
    const auto h = model.dit_block(seq.tokens, seq.layout, 0, 200, model.mask(MaskStrategy::A));
    params.zero_grad();
    backward(sum(slice_rows(h, 0, seq.layout.text)));
    for (const char* name : {"blocks.0.adaln.cond.fc1.W", "blocks.0.adaln.cond.fc2.W", "blocks.0.adaln.cond.fc2.b"}) {
      const auto& p = params.get(name);
      const bool zero = !p.has_grad() || std::all_of(p.grad().begin(), p.grad().end(), [](double g) { return g == 0.0; });
      CHECK_MESSAGE(zero, name);
    }
    CHECK(params.get("blocks.0.adaln.text.fc2.W").has_grad());
  }
}

TEST_SUITE("mask") {
  TEST_CASE("mask A on layout (2, 3, 3)") {
    const Layout layout{2, 3, 3};
    const auto m = build_mask(MaskStrategy::A, layout);
    for (std::size_t i = 0; i < 8; ++i) {
      for (std::size_t j = 0; j < 8; ++j) {
        const bool text_cond = (i < 2 && j >= 2 && j < 5) || (j < 2 && i >= 2 && i < 5);
        CHECK(m.blocked(i, j) == text_cond);
        CHECK(m.bias.at(i * 8 + j) == (text_cond ? -kMaskBig : 0.0));
      }
    }
    CHECK(m.blocked_count() == 12);
  }

  TEST_CASE("strategy relations") {
    const Layout layout{2, 3, 3};
    const auto a = build_mask(MaskStrategy::A, layout), b = build_mask(MaskStrategy::B, layout);
    const auto c = build_mask(MaskStrategy::C, layout), none = build_mask(MaskStrategy::None, layout);
    const auto c_diag = build_mask(MaskStrategy::C, layout, {.c_blocks_diagonal = false});
    CHECK(none.blocked_count() == 0);
    for (std::size_t i = 0; i < 8; ++i) {
      for (std::size_t j = 0; j < 8; ++j) {
        if (a.blocked(i, j)) {
          CHECK(b.blocked(i, j));
          CHECK(c.blocked(i, j));
        }
        const auto qs = layout.segment_of(i), ks = layout.segment_of(j);
        CHECK(b.blocked(i, j) == (a.blocked(i, j) || (qs == Segment::Target && ks == Segment::Cond)));
        CHECK(c.blocked(i, j) == (a.blocked(i, j) || (qs == Segment::Cond && ks == Segment::Cond)));
        CHECK(c_diag.blocked(i, j) == (c.blocked(i, j) && i != j));
      }
    }
    CHECK(mask_name(MaskStrategy::None) == "none");
    CHECK(parse_mask("c") == MaskStrategy::C);
    CHECK_FALSE(parse_mask("d").has_value());
  }

  TEST_CASE("a layout leaving a row without keys is rejected") {
    CHECK_THROWS_AS(build_mask(MaskStrategy::C, Layout{2, 3, 0}), ContractError);
  }
}

TEST_SUITE("attention") {
  TEST_CASE("matches a naive per-head oracle for every strategy") {
    const Layout layout{2, 4, 4};
    const auto pos = layout_positions(layout, 2);
    const std::size_t d = 32, heads = 2;
    const auto rope = rope3d_tables(pos, d / heads);
    const auto params = attention_params(d, 80);
    const auto x = random_tensor({10, d}, 81);
    for (auto s : {MaskStrategy::A, MaskStrategy::B, MaskStrategy::C, MaskStrategy::None}) {
      const auto mask = build_mask(s, layout);
      AttentionProbe probe;
      const auto out = fcd_attention(x, heads, plain(params), "attn", mask, rope, &probe);
      REQUIRE(probe.weights.size() == heads);
      std::vector<double> concat(10 * d);
      for (std::size_t h = 0; h < heads; ++h) {
        std::vector<double> ho;
        const auto w = naive_attention(x, params, "attn", heads, h, mask, rope, &ho);
        for (std::size_t i = 0; i < w.size(); ++i) CHECK(std::abs(w[i] - probe.weights[h][i]) < 1e-10);
        for (std::size_t i = 0; i < 10; ++i) {
          for (std::size_t c = 0; c < d / heads; ++c) concat[i * d + h * (d / heads) + c] = ho[i * (d / heads) + c];
        }
      }
      const auto& o = params.get("attn.o.W");
      const auto& ob = params.get("attn.o.b");
      for (std::size_t i = 0; i < 10; ++i) {
        for (std::size_t c = 0; c < d; ++c) {
          double want = ob.at(c);
          for (std::size_t k = 0; k < d; ++k) want += concat[i * d + k] * o.at(c * d + k);
          CHECK(std::abs(out.at(i * d + c) - want) < 1e-10);
        }
      }
    }
  }

  TEST_CASE("a single token attends to itself") {
    const Layout layout{0, 0, 1};
    const std::vector<Position> pos = {{1, 0, 0, false}};
    const auto params = attention_params(16, 90);
    const auto x = random_tensor({1, 16}, 91);
    const auto out = fcd_attention(x, 1, plain(params), "attn", build_mask(MaskStrategy::None, layout),
                                   rope3d_tables(pos, 16));
    const auto& lin = plain(params);
    CHECK(max_abs_diff(out, lin(lin(x, "attn.v"), "attn.o")) < 1e-12);
  }

  TEST_CASE("with mask A, text content cannot reach cond outputs") {
    const auto cfg = tiny_config();
    auto params = Model::init_params(cfg, 7);
    randomize(params, 8);
    const Model model(cfg, params, Vocabulary::builtin().noun_flags());
    const auto seq = model.embed(random_input(cfg, 9));
    auto perturbed = values(seq.tokens);
    for (std::size_t i = 0; i < seq.layout.text * cfg.d_model; ++i) perturbed[i] += 3.0 * std::sin(1.0 + i);
    const auto tokens2 = Tensor::from(seq.tokens.shape(), perturbed);
    const auto& lin = model.linears();
    for (auto s : {MaskStrategy::A, MaskStrategy::B, MaskStrategy::C}) {
      const auto& m = model.mask(s);
      const auto o1 = fcd_attention(seq.tokens, cfg.n_heads, lin, "blocks.0.attn", m, model.rope());
      const auto o2 = fcd_attention(tokens2, cfg.n_heads, lin, "blocks.0.attn", m, model.rope());
      const auto b = seq.layout.begin(Segment::Cond), e = seq.layout.end(Segment::Cond);
      CHECK(max_abs_diff(slice_rows(o1, b, e), slice_rows(o2, b, e)) <= 1e-9);
    }
    const auto& none = model.mask(MaskStrategy::None);
    const auto o1 = fcd_attention(seq.tokens, cfg.n_heads, lin, "blocks.0.attn", none, model.rope());
    const auto o2 = fcd_attention(tokens2, cfg.n_heads, lin, "blocks.0.attn", none, model.rope());
    const auto b = seq.layout.begin(Segment::Cond), e = seq.layout.end(Segment::Cond);
    CHECK(max_abs_diff(slice_rows(o1, b, e), slice_rows(o2, b, e)) > 1e-6);
  }
}

TEST_SUITE("model") {
  TEST_CASE("identity at init: blocks pass tokens through and the head outputs zeros") {
    const auto cfg = tiny_config();
    const auto params = Model::init_params(cfg, 11);
    const Model model(cfg, params, Vocabulary::builtin().noun_flags());
    const auto in = random_input(cfg, 12);
    const auto seq = model.embed(in);
    for (std::size_t b = 0; b < cfg.n_blocks; ++b) {
      CHECK(bitwise_equal(model.dit_block(seq.tokens, seq.layout, b, in.t, model.mask(MaskStrategy::A)), seq.tokens));
    }
    const auto eps = model.predict_noise(in, MaskStrategy::A);
    CHECK(eps.shape() == in.target_latent.shape());
    for (double v : eps.data()) CHECK(v == 0.0);
  }

  TEST_CASE("init and forward are deterministic") {
    const auto cfg = tiny_config();
    auto p1 = Model::init_params(cfg, 13), p2 = Model::init_params(cfg, 13);
    for (const auto& [name, t] : p1) CHECK(bitwise_equal(t, p2.get(name)));
    randomize(p1, 14);
    randomize(p2, 14);
    const auto flags = Vocabulary::builtin().noun_flags();
    const Model a(cfg, p1, flags), b(cfg, p2, flags);
    const auto in = random_input(cfg, 15);
    CHECK(bitwise_equal(a.predict_noise(in, MaskStrategy::B), b.predict_noise(in, MaskStrategy::B)));
    CHECK_FALSE(bitwise_equal(Model::init_params(cfg, 16).get("uce.W"), p2.get("uce.W")));
  }

  TEST_CASE("mask exactness through every layer and head") {
    const auto cfg = tiny_config();
    auto params = Model::init_params(cfg, 17);
    const Model model(cfg, params, Vocabulary::builtin().noun_flags());
    for (int trial = 0; trial < 5; ++trial) {
      randomize(params, 100 + trial);
      for (auto s : {MaskStrategy::A, MaskStrategy::B, MaskStrategy::C, MaskStrategy::None}) {
        AttentionProbe probe;
        NoGradGuard guard;
        model.predict_noise(random_input(cfg, 200 + trial), s, &probe);
        const auto& m = model.mask(s);
        const auto L = m.length;
        CHECK(probe.weights.size() == cfg.n_blocks * cfg.n_heads);
        double worst_blocked = 0.0, worst_row = 0.0;
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
        CHECK(worst_blocked <= 1e-30);
        CHECK(worst_row <= 1e-9);
      }
    }
  }

  TEST_CASE("configuration checks") {
    auto cfg = tiny_config();
    cfg.image_size = 18;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg = tiny_config();
    cfg.n_heads = 4;  // head_dim 8
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg = tiny_config();
    cfg.vocab_size = 1;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    CHECK_NOTHROW(tiny_config().validate());
  }

  TEST_CASE("one block's gradient matches finite differences") {
    const auto cfg = tiny_config();
    auto params = Model::init_params(cfg, 18);
    randomize(params, 19);
    const Model model(cfg, params, Vocabulary::builtin().noun_flags());
    Tensor tokens;
    Layout layout;
    {
      NoGradGuard guard;
      const auto seq = model.embed(random_input(cfg, 20));
      tokens = seq.tokens.clone(true);
      layout = seq.layout;
    }
    const auto r = random_tensor(tokens.shape(), 21);
    const auto f = [&] { return sum(mul(model.dit_block(tokens, layout, 1, 400, model.mask(MaskStrategy::A)), r)); };
    CHECK(grad_check(f, tokens) <= 1e-4);
  }
}
