#include <cmath>
#include <string>
#include <vector>

#include "common/error.hpp"
#include "common/prng.hpp"
#include "dataforge/synth.hpp"
#include "detectors/detectors.hpp"
#include "doctest.h"
#include "encoder/checkpoint.hpp"
#include "encoder/model.hpp"
#include "encoder/vocab.hpp"

using namespace fge;

namespace {

// Two well-separated gaussian blobs along the first axis.
void blob_data(Tensor& emb, std::vector<double>& labels, std::size_t n,
               std::size_t d, std::uint64_t seed) {
  emb = Tensor({2 * n, d});
  labels.assign(2 * n, 0.0);
  Rng rng(seed);
  for (std::size_t i = 0; i < 2 * n; ++i) {
    const bool fake = i >= n;
    labels[i] = fake ? 1.0 : 0.0;
    for (std::size_t c = 0; c < d; ++c)
      emb.data[i * d + c] = rng.gauss(0.0, 0.3);
    emb.data[i * d] += fake ? 1.0 : -1.0;
  }
}

double accuracy(const DetectorHead& head, const Tensor& emb,
                const std::vector<double>& labels) {
  auto scores = head_scores(head, emb);
  std::size_t hit = 0;
  for (std::size_t i = 0; i < scores.size(); ++i)
    if (score_is_fake(scores[i]) == (labels[i] > 0.5)) ++hit;
  return static_cast<double>(hit) / static_cast<double>(scores.size());
}

DualEncoder tiny_encoder(std::uint64_t seed) {
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
  return make_encoder(cfg, build_vocabulary({"a real photo a fake image"}),
                      seed);
}

}  // namespace

TEST_CASE("labels split real from both forgery kinds") {
  CHECK(label_of(SampleKind::real) == 0.0);
  CHECK(label_of(SampleKind::fake_global) == 1.0);
  CHECK(label_of(SampleKind::fake_local) == 1.0);
}

TEST_CASE("head architecture names round trip") {
  CHECK(head_arch_from_name("linear") == HeadArch::linear);
  CHECK(head_arch_from_name("mlp2") == HeadArch::mlp2);
  CHECK(head_arch_name(HeadArch::mlp2) == std::string("mlp2"));
  CHECK_THROWS_AS(head_arch_from_name("cnn"), Error);
}

TEST_CASE("a linear head separates linearly separable blobs") {
  Tensor emb;
  std::vector<double> labels;
  blob_data(emb, labels, 100, 4, 11);
  HeadTrainConfig cfg;
  cfg.steps = 300;
  HeadTrainResult r = train_head(emb, labels, HeadArch::linear, 2, cfg);
  CHECK(r.head.layer == 2);
  CHECK(r.head.embed_dim == 4);
  CHECK(accuracy(r.head, emb, labels) == doctest::Approx(1.0));
  REQUIRE(r.loss_history.size() == 300);
  CHECK(r.loss_history.back() < r.loss_history.front());
}

TEST_CASE("only the hidden layer solves an xor layout") {
  Tensor emb({200, 2});
  std::vector<double> labels(200);
  Rng rng(5);
  for (std::size_t i = 0; i < 200; ++i) {
    const double sx = rng.uniform() < 0.5 ? -1.0 : 1.0;
    const double sy = rng.uniform() < 0.5 ? -1.0 : 1.0;
    emb.data[i * 2] = sx + rng.gauss(0.0, 0.15);
    emb.data[i * 2 + 1] = sy + rng.gauss(0.0, 0.15);
    labels[i] = sx * sy < 0.0 ? 1.0 : 0.0;
  }
  HeadTrainConfig cfg;
  cfg.steps = 800;
  HeadTrainResult lin = train_head(emb, labels, HeadArch::linear, 2, cfg);
  HeadTrainResult mlp = train_head(emb, labels, HeadArch::mlp2, 2, cfg);
  CHECK(accuracy(lin.head, emb, labels) < 0.75);
  CHECK(accuracy(mlp.head, emb, labels) > 0.95);
}

TEST_CASE("a score of exactly one half reads as fake") {
  DetectorHead zero;
  zero.arch = HeadArch::linear;
  zero.embed_dim = 3;
  zero.w1 = make_tensor(Tensor({3, 1}));
  zero.b1 = make_tensor(Tensor({1}));
  Tensor emb({2, 3}, {0.4, -0.2, 0.9, 0.0, 0.0, 0.0});
  auto scores = head_scores(zero, emb);
  for (double s : scores) {
    CHECK(s == 0.5);
    CHECK(score_is_fake(s));
  }
  CHECK_FALSE(score_is_fake(0.4999));
}

TEST_CASE("head training is deterministic in its seed") {
  Tensor emb;
  std::vector<double> labels;
  blob_data(emb, labels, 40, 4, 3);
  HeadTrainConfig cfg;
  cfg.steps = 50;
  HeadTrainResult a = train_head(emb, labels, HeadArch::mlp2, 2, cfg);
  HeadTrainResult b = train_head(emb, labels, HeadArch::mlp2, 2, cfg);
  CHECK(a.loss_history == b.loss_history);
  CHECK(a.head.w1->data == b.head.w1->data);
  cfg.seed = 8;
  HeadTrainResult c = train_head(emb, labels, HeadArch::mlp2, 2, cfg);
  CHECK(a.head.w1->data != c.head.w1->data);
}

TEST_CASE("train_head rejects malformed inputs") {
  Tensor emb({4, 2});
  std::vector<double> labels(4, 0.0);
  HeadTrainConfig cfg;
  CHECK_THROWS_AS(
      train_head(Tensor({4}), labels, HeadArch::linear, 1, cfg), Error);
  std::vector<double> short_labels(3, 0.0);
  CHECK_THROWS_AS(
      train_head(emb, short_labels, HeadArch::linear, 1, cfg), Error);
  HeadTrainConfig zero = cfg;
  zero.steps = 0;
  CHECK_THROWS_AS(train_head(emb, labels, HeadArch::linear, 1, zero), Error);
}

TEST_CASE("scores demand the head's embedding width") {
  Tensor emb;
  std::vector<double> labels;
  blob_data(emb, labels, 10, 4, 3);
  HeadTrainConfig cfg;
  cfg.steps = 10;
  HeadTrainResult r = train_head(emb, labels, HeadArch::linear, 2, cfg);
  Tensor wide({2, 6});
  try {
    head_scores(r.head, wide);
    FAIL("expected a throw");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::DimMismatch);
  }
}

TEST_CASE("head checkpoints round trip bitwise") {
  Tensor emb;
  std::vector<double> labels;
  blob_data(emb, labels, 30, 4, 9);
  HeadTrainConfig cfg;
  cfg.steps = 60;
  for (HeadArch arch : {HeadArch::linear, HeadArch::mlp2}) {
    CAPTURE(head_arch_name(arch));
    HeadTrainResult r = train_head(emb, labels, arch, 2, cfg);
    const std::string path = "/tmp/fge_test_head.bin";
    save_head(r.head, path);
    DetectorHead back = load_head(path);
    CHECK(back.arch == arch);
    CHECK(back.layer == 2);
    CHECK(back.embed_dim == 4);
    CHECK(back.w1->data == r.head.w1->data);
    CHECK(back.b1->data == r.head.b1->data);
    if (arch == HeadArch::mlp2) {
      CHECK(back.w2->data == r.head.w2->data);
      CHECK(back.b2->data == r.head.b2->data);
    }
    auto sa = head_scores(r.head, emb);
    auto sb = head_scores(back, emb);
    CHECK(sa == sb);
  }
}

TEST_CASE("checkpoint kinds cannot be confused") {
  DualEncoder enc = tiny_encoder(2);
  const std::string enc_path = "/tmp/fge_test_kind_enc.bin";
  save_encoder(enc, enc_path);
  try {
    load_head(enc_path);
    FAIL("expected a throw");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::MalformedHeader);
    CHECK(std::string(e.what()).find("not a detector head") !=
          std::string::npos);
  }

  Tensor emb;
  std::vector<double> labels;
  blob_data(emb, labels, 10, 4, 9);
  HeadTrainConfig cfg;
  cfg.steps = 5;
  HeadTrainResult r = train_head(emb, labels, HeadArch::linear, 2, cfg);
  const std::string head_path = "/tmp/fge_test_kind_head.bin";
  save_head(r.head, head_path);
  CHECK_THROWS_AS(load_encoder(head_path), Error);
}

TEST_CASE("image embeddings are independent of the batch split") {
  DualEncoder enc = tiny_encoder(4);
  std::vector<Tensor> images;
  for (std::uint64_t s = 0; s < 5; ++s)
    images.push_back(generate_sample(SampleKind::real, 100 + s).image);
  std::vector<const Tensor*> ptrs;
  for (const auto& im : images) ptrs.push_back(&im);

  Tensor small = embed_images(enc, ptrs, 2, 2);
  Tensor big = embed_images(enc, ptrs, 2, 64);
  REQUIRE(small.shape == std::vector<std::size_t>({5, 16}));
  CHECK(small.data == big.data);
  for (std::size_t r = 0; r < 5; ++r) {
    double n2 = 0.0;
    for (std::size_t c = 0; c < 16; ++c)
      n2 += small.at(r, c) * small.at(r, c);
    CHECK(std::sqrt(n2) == doctest::Approx(1.0).epsilon(1e-9));
  }
  CHECK_THROWS_AS(embed_images(enc, ptrs, 9, 2), Error);
  CHECK_THROWS_AS(embed_images(enc, {}, 2, 2), Error);
}

TEST_CASE("a probe on raw encoder features beats chance") {
  DualEncoder enc = tiny_encoder(6);
  SampleSet corpus = generate_corpus(20, "train", 777);
  std::vector<const Tensor*> ptrs;
  std::vector<double> labels;
  for (const auto& s : corpus.samples) {
    ptrs.push_back(&s.image);
    labels.push_back(label_of(s.kind));
  }
  Tensor emb = embed_images(enc, ptrs, 2, 64);
  HeadTrainConfig cfg;
  cfg.steps = 200;
  HeadTrainResult r = train_head(emb, labels, HeadArch::linear, 2, cfg);
  CHECK(accuracy(r.head, emb, labels) > 0.6);
}
