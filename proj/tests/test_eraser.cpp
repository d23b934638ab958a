#include <cmath>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "anchors/anchors.hpp"
#include "common/error.hpp"
#include "dataforge/synth.hpp"
#include "doctest.h"
#include "encoder/model.hpp"
#include "encoder/vocab.hpp"
#include "eraser/eraser.hpp"

using namespace fge;

namespace {

// 32-native encoder so the resample output feeds it directly.
DualEncoder attack_encoder(std::uint64_t seed) {
  EncoderConfig cfg;
  cfg.image_size = 32;
  cfg.patch = 8;
  cfg.width = 32;
  cfg.blocks = 2;
  cfg.heads = 4;
  cfg.mlp_hidden = 32;
  cfg.embed_dim = 16;
  cfg.text_blocks = 1;
  cfg.max_text_len = 32;
  return make_encoder(cfg, build_vocabulary(all_builtin_prompt_texts()),
                      seed);
}

AttackConfig small_cfg() {
  AttackConfig cfg;
  cfg.layers = {1, 2};
  cfg.omega = {0.5, 0.5};
  return cfg;
}

Tensor fake_image(std::uint64_t seed) {
  return generate_sample(SampleKind::fake_global, seed).image;
}

double max_abs_delta(const Tensor& a, const Tensor& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i)
    m = std::max(m, std::abs(a.data[i] - b.data[i]));
  return m;
}

}  // namespace

TEST_CASE("resample halves the resolution and keeps constants exact") {
  Tensor img({64, 64, 3});
  for (auto& v : img.data) v = 0.37;
  Tensor small = resample_plain(img);
  REQUIRE(small.shape == std::vector<std::size_t>({32, 32, 3}));
  for (double v : small.data) CHECK(v == doctest::Approx(0.37).epsilon(1e-13));

  Tensor bad({16, 16, 3});
  CHECK_THROWS_AS(resample_plain(bad), Error);
}

TEST_CASE("resample conserves a quarter of interior impulse mass") {
  Tensor img({64, 64, 3});
  img.data[(20 * 64 + 31) * 3 + 1] = 1.0;
  Tensor small = resample_plain(img);
  double mass = 0.0;
  for (double v : small.data) mass += v;
  CHECK(mass == doctest::Approx(0.25).epsilon(1e-12));
}

TEST_CASE("finite differences validate the image-to-loss chain") {
  DualEncoder enc = attack_encoder(9);
  AnchorSet anchors = build_anchor_set(enc, ForgerySource::global,
                                       Granularity::fine, builtin_prompts());
  const std::map<int, double> omega = {{1, 0.5}, {2, 0.5}};
  Tensor img = fake_image(42);

  auto f = [&](Tape& t, const TensorPtr& xp) {
    auto tokens = image_tokens(t, enc, resample(t, xp));
    auto zs = encode_image_layers(t, enc, tokens, 1, {1, 2});
    return mmg_loss(t, zs, anchors, 1.0, omega).total;
  };
  const std::vector<std::size_t> coords = {0, 1111, 4097, 8191, 12200};
  CHECK(grad_check(f, img, 1e-5, &coords) < 1e-4);
}

TEST_CASE("guidance loss matches a hand computation") {
  Tape t;
  std::map<int, TensorPtr> zs;
  zs[7] = t.leaf(Tensor({1, 4}, {1, 0, 0, 0}), false);
  AnchorSet anchors;
  const double s = 1.0 / std::sqrt(2.0);
  anchors.real = Tensor({2, 4}, {1, 0, 0, 0, 0, 1, 0, 0});
  anchors.fake = Tensor({1, 4}, {s, s, 0, 0});
  LossBreakdown bd = mmg_loss(t, zs, anchors, 0.5, {{7, 0.7}});
  CHECK(bd.pull.at(7) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(bd.push.at(7) == doctest::Approx(s).epsilon(1e-12));
  const double want = 0.7 * (1.0 + 0.5 * s);
  CHECK(bd.total_value == doctest::Approx(want).epsilon(1e-12));
  CHECK(bd.total->data[0] == bd.total_value);
}

TEST_CASE("guidance loss validates layers and dimensions") {
  Tape t;
  std::map<int, TensorPtr> zs;
  zs[1] = t.leaf(Tensor({1, 4}, {1, 0, 0, 0}), false);
  AnchorSet ok;
  ok.real = Tensor({1, 4}, {1, 0, 0, 0});
  ok.fake = Tensor({1, 4}, {0, 1, 0, 0});

  CHECK_THROWS_AS(mmg_loss(t, {}, ok, 1.0, {}), Error);
  CHECK_THROWS_AS(mmg_loss(t, zs, ok, 1.0, {{2, 1.0}}), Error);
  CHECK_THROWS_AS(mmg_loss(t, zs, ok, 1.0, {{1, 0.5}, {2, 0.5}}), Error);

  AnchorSet narrow;
  narrow.real = Tensor({1, 3}, {1, 0, 0});
  narrow.fake = Tensor({1, 3}, {0, 1, 0});
  CHECK_THROWS_AS(mmg_loss(t, zs, narrow, 1.0, {{1, 1.0}}), Error);
}

TEST_CASE("one attack step follows the signed momentum direction") {
  DualEncoder enc = attack_encoder(3);
  AnchorSet anchors = build_anchor_set(enc, ForgerySource::global,
                                       Granularity::fine, builtin_prompts());
  Tensor img = fake_image(7);
  AttackConfig cfg = small_cfg();
  cfg.steps = 1;

  AttackResult got = attack(img, enc, anchors, cfg);
  REQUIRE(got.trace.steps.size() == 1);

  // Rebuild the same first-iteration gradient by hand.
  Tape t;
  auto x_node = t.leaf(img, false);
  auto d_node = t.leaf(Tensor(img.shape), true);
  auto tokens = image_tokens(t, enc, resample(t, t.add(x_node, d_node)));
  auto zs = encode_image_layers(t, enc, tokens, 1, cfg.layers);
  LossBreakdown bd =
      mmg_loss(t, zs, anchors, cfg.lambda, {{1, 0.5}, {2, 0.5}});
  t.backward(bd.total);
  d_node->ensure_grad();

  CHECK(got.trace.steps[0].total == bd.total_value);
  for (std::size_t i = 0; i < img.numel(); ++i) {
    double g = d_node->grad[i];
    double sign = g > 0.0 ? 1.0 : (g < 0.0 ? -1.0 : 0.0);
    double want = img.data[i] - cfg.alpha * sign;
    want = std::min(1.0, std::max(0.0, want));
    REQUIRE(got.image.data[i] == doctest::Approx(want).epsilon(1e-15));
  }
}

TEST_CASE("the perturbation respects the budget at both scales") {
  DualEncoder enc = attack_encoder(3);
  AnchorSet anchors = build_anchor_set(enc, ForgerySource::local,
                                       Granularity::fine, builtin_prompts());
  Tensor img = fake_image(19);

  for (auto [eps, alpha, steps] :
       {std::tuple{4.0 / 255, 1.0 / 255, std::size_t{4}},
        std::tuple{8.0 / 255, 2.0 / 255, std::size_t{8}}}) {
    AttackConfig cfg = small_cfg();
    cfg.epsilon = eps;
    cfg.alpha = alpha;
    cfg.steps = steps;
    AttackResult r = attack(img, enc, anchors, cfg);
    REQUIRE(r.trace.steps.size() == steps);
    CHECK(max_abs_delta(r.image, img) <= eps + 1e-12);
    for (double v : r.image.data) {
      REQUIRE(v >= 0.0);
      REQUIRE(v <= 1.0);
    }
    for (const auto& rec : r.trace.steps) CHECK(rec.delta_inf <= eps + 1e-12);
  }
}

TEST_CASE("a zero budget returns the clamped input untouched") {
  DualEncoder enc = attack_encoder(3);
  AnchorSet anchors = build_anchor_set(enc, ForgerySource::global,
                                       Granularity::coarse, builtin_prompts());
  Tensor img = fake_image(23);
  img.data[0] = 1.5;  // clamp01 must still apply
  AttackConfig cfg = small_cfg();
  cfg.epsilon = 0.0;
  AttackResult r = attack(img, enc, anchors, cfg);
  CHECK(r.trace.steps.empty());
  CHECK(r.image.data[0] == 1.0);
  for (std::size_t i = 1; i < img.numel(); ++i)
    REQUIRE(r.image.data[i] == img.data[i]);
}

TEST_CASE("iterating drives the guidance loss downhill") {
  DualEncoder enc = attack_encoder(3);
  AnchorSet anchors = build_anchor_set(enc, ForgerySource::global,
                                       Granularity::fine, builtin_prompts());
  Tensor img = fake_image(31);
  AttackConfig cfg = small_cfg();
  AttackResult r = attack(img, enc, anchors, cfg);
  REQUIRE(r.trace.steps.size() == cfg.steps);
  CHECK(r.trace.steps.back().total < r.trace.steps.front().total);
}

TEST_CASE("attacks are bitwise deterministic") {
  DualEncoder enc = attack_encoder(5);
  AnchorSet anchors = build_anchor_set(enc, ForgerySource::local,
                                       Granularity::fine, builtin_prompts());
  Tensor img = fake_image(37);
  AttackConfig cfg = small_cfg();
  AttackResult a = attack(img, enc, anchors, cfg);
  AttackResult b = attack(img, enc, anchors, cfg);
  CHECK(a.image.data == b.image.data);
  REQUIRE(a.trace.steps.size() == b.trace.steps.size());
  for (std::size_t i = 0; i < a.trace.steps.size(); ++i) {
    CHECK(a.trace.steps[i].total == b.trace.steps[i].total);
    CHECK(a.trace.steps[i].grad_inf == b.trace.steps[i].grad_inf);
  }
}

TEST_CASE("per-step clamping keeps the walk feasible") {
  DualEncoder enc = attack_encoder(5);
  AnchorSet anchors = build_anchor_set(enc, ForgerySource::global,
                                       Granularity::fine, builtin_prompts());
  Tensor img = fake_image(41);
  for (std::size_t i = 0; i < 300; ++i) img.data[i] = i % 2 ? 0.0 : 1.0;
  AttackConfig cfg = small_cfg();
  cfg.clamp_each_step = true;
  AttackResult r = attack(img, enc, anchors, cfg);
  CHECK(max_abs_delta(r.image, img) <= cfg.epsilon + 1e-12);
  for (const auto& rec : r.trace.steps)
    CHECK(rec.delta_inf <= cfg.epsilon + 1e-12);
  for (double v : r.image.data) {
    REQUIRE(v >= 0.0);
    REQUIRE(v <= 1.0);
  }
}

TEST_CASE("a flat objective reports a vanished gradient") {
  DualEncoder enc = attack_encoder(5);
  // Identical pull and push anchors cancel exactly: the loss is constant.
  AnchorSet anchors;
  anchors.real = Tensor({1, 16});
  anchors.fake = Tensor({1, 16});
  anchors.real.data[0] = 1.0;
  anchors.fake.data[0] = 1.0;
  Tensor img = fake_image(43);
  AttackConfig cfg = small_cfg();
  try {
    attack(img, enc, anchors, cfg);
    FAIL("expected a throw");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::ZeroGradient);
  }
}

TEST_CASE("attack configuration is validated up front") {
  DualEncoder enc = attack_encoder(5);
  AnchorSet anchors = build_anchor_set(enc, ForgerySource::global,
                                       Granularity::fine, builtin_prompts());
  Tensor img = fake_image(47);

  auto expect_throw = [&](AttackConfig cfg) {
    CHECK_THROWS_AS(attack(img, enc, anchors, cfg), Error);
  };
  AttackConfig c = small_cfg();
  c.steps = 0;
  expect_throw(c);
  c = small_cfg();
  c.alpha = c.epsilon * 2.0;
  expect_throw(c);
  c = small_cfg();
  c.mu = 1.5;
  expect_throw(c);
  c = small_cfg();
  c.lambda = -0.1;
  expect_throw(c);
  c = small_cfg();
  c.omega = {0.5};
  expect_throw(c);
  c = small_cfg();
  c.layers = {1, 1};
  c.omega = {0.5, 0.5};
  expect_throw(c);
}

TEST_CASE("the anchor-free attack moves off the clean embedding") {
  DualEncoder enc = attack_encoder(5);
  Tensor img = fake_image(53);
  AttackConfig cfg = small_cfg();
  AttackResult r = untargeted_attack(img, enc, cfg);
  REQUIRE(r.trace.steps.size() == cfg.steps);
  CHECK(max_abs_delta(r.image, img) <= cfg.epsilon + 1e-12);
  // The recorded pull slots hold the cosine to the frozen clean features.
  double last = r.trace.steps.back().pull.at(2);
  CHECK(last < 0.9999);
  for (const auto& rec : r.trace.steps) CHECK(rec.push.at(1) == 0.0);

  AttackResult r2 = untargeted_attack(img, enc, cfg);
  CHECK(r.image.data == r2.image.data);
}

TEST_CASE("the trace file lists one row per iteration") {
  DualEncoder enc = attack_encoder(5);
  AnchorSet anchors = build_anchor_set(enc, ForgerySource::global,
                                       Granularity::fine, builtin_prompts());
  AttackConfig cfg = small_cfg();
  cfg.steps = 3;
  AttackResult r = attack(fake_image(59), enc, anchors, cfg);
  const std::string path = "/tmp/fge_test_trace.csv";
  write_trace_csv(r.trace, path);

  std::ifstream in(path);
  REQUIRE(in.good());
  std::string line;
  REQUIRE(std::getline(in, line));
  CHECK(line == "iter,total,pull_1,pull_2,push_1,push_2,grad_inf,delta_inf");
  std::size_t rows = 0;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    ++rows;
    std::stringstream ss(line);
    std::string cell;
    std::size_t cells = 0;
    while (std::getline(ss, cell, ',')) ++cells;
    CHECK(cells == 8);
  }
  CHECK(rows == 3);
}
