#include <cmath>
#include <cstdio>
#include <fstream>
#include <string>
#include <vector>

#include "anchors/anchors.hpp"
#include "common/error.hpp"
#include "doctest.h"
#include "encoder/model.hpp"
#include "encoder/vocab.hpp"

using namespace fge;

namespace {

DualEncoder prompt_encoder(std::uint64_t seed) {
  EncoderConfig cfg;
  cfg.image_size = 8;
  cfg.patch = 4;
  cfg.width = 8;
  cfg.blocks = 2;
  cfg.heads = 2;
  cfg.mlp_hidden = 16;
  cfg.embed_dim = 4;
  cfg.text_blocks = 1;
  cfg.max_text_len = 32;
  return make_encoder(cfg, build_vocabulary(all_builtin_prompt_texts()),
                      seed);
}

void write_file(const std::string& path, const std::string& body) {
  std::ofstream out(path);
  out << body;
}

}  // namespace

TEST_CASE("builtin prompt pack carries four prompts per list") {
  const PromptPack& p = builtin_prompts();
  CHECK(p.real_global.size() == 4);
  CHECK(p.fake_global.size() == 4);
  CHECK(p.real_local.size() == 4);
  CHECK(p.fake_local.size() == 4);
  CHECK(p.real_global[0] ==
        "A raw photograph captured by a real camera sensor.");
  CHECK(p.fake_local[3] ==
        "A digital collage created by combining multiple photos.");
  CHECK(coarse_real_prompts() == std::vector<std::string>{"a real photo"});
  CHECK(coarse_fake_prompts() == std::vector<std::string>{"a fake image"});
  CHECK(all_builtin_prompt_texts().size() == 18);
}

TEST_CASE("source and granularity names round trip") {
  CHECK(source_from_name("global") == ForgerySource::global);
  CHECK(source_from_name("local") == ForgerySource::local);
  CHECK(source_name(ForgerySource::local) == std::string("local"));
  CHECK_THROWS_AS(source_from_name("both"), Error);
  for (auto g :
       {Granularity::fine, Granularity::coarse, Granularity::untargeted})
    CHECK(granularity_from_name(granularity_name(g)) == g);
  CHECK_THROWS_AS(granularity_from_name("medium"), Error);
}

TEST_CASE("prompt pack overrides replace only the listed keys") {
  const std::string path = "/tmp/fge_test_prompts.json";
  write_file(path,
             "{\"fake_global\": [\"made by a machine\", \"pure synthesis\"]}");
  PromptPack pack = load_prompt_pack(path);
  CHECK(pack.fake_global ==
        std::vector<std::string>{"made by a machine", "pure synthesis"});
  CHECK(pack.real_global == builtin_prompts().real_global);
  CHECK(pack.real_local == builtin_prompts().real_local);
  CHECK(pack.fake_local == builtin_prompts().fake_local);
}

TEST_CASE("prompt pack loader rejects malformed overrides") {
  const std::string path = "/tmp/fge_test_prompts_bad.json";

  SUBCASE("missing file") {
    CHECK_THROWS_WITH_AS(load_prompt_pack("/tmp/absent_prompts.json"),
                         doctest::Contains("cannot open"), Error);
  }
  SUBCASE("not json") {
    write_file(path, "not json at all");
    CHECK_THROWS_AS(load_prompt_pack(path), Error);
  }
  SUBCASE("unknown key") {
    write_file(path, "{\"fake_coarse\": [\"x\"]}");
    CHECK_THROWS_WITH_AS(load_prompt_pack(path),
                         doctest::Contains("unknown key"), Error);
  }
  SUBCASE("empty list") {
    write_file(path, "{\"real_local\": []}");
    try {
      load_prompt_pack(path);
      FAIL("expected a throw");
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::EmptyPrompt);
    }
  }
  SUBCASE("non-string entry") {
    write_file(path, "{\"real_local\": [3]}");
    try {
      load_prompt_pack(path);
      FAIL("expected a throw");
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::ConfigError);
    }
  }
}

TEST_CASE("anchor sets hold unit rows for every mode") {
  DualEncoder enc = prompt_encoder(3);
  const PromptPack& pack = builtin_prompts();
  for (auto source : {ForgerySource::global, ForgerySource::local}) {
    for (auto gran : {Granularity::fine, Granularity::coarse}) {
      AnchorSet set = build_anchor_set(enc, source, gran, pack);
      const std::size_t want = gran == Granularity::fine ? 4 : 1;
      REQUIRE(set.real.shape ==
              std::vector<std::size_t>({want, enc.cfg.embed_dim}));
      REQUIRE(set.fake.shape ==
              std::vector<std::size_t>({want, enc.cfg.embed_dim}));
      for (const Tensor* m : {&set.real, &set.fake}) {
        for (std::size_t r = 0; r < m->rows(); ++r) {
          double n2 = 0.0;
          for (std::size_t c = 0; c < m->cols(); ++c)
            n2 += m->at(r, c) * m->at(r, c);
          CHECK(std::sqrt(n2) == doctest::Approx(1.0).epsilon(1e-9));
        }
      }
    }
  }
  CHECK_THROWS_AS(build_anchor_set(enc, ForgerySource::global,
                                   Granularity::untargeted, pack),
                  Error);
}

TEST_CASE("anchor encoding is deterministic per encoder") {
  DualEncoder enc = prompt_encoder(3);
  AnchorSet a = build_anchor_set(enc, ForgerySource::local, Granularity::fine,
                                 builtin_prompts());
  AnchorSet b = build_anchor_set(enc, ForgerySource::local, Granularity::fine,
                                 builtin_prompts());
  CHECK(a.real.data == b.real.data);
  CHECK(a.fake.data == b.fake.data);

  DualEncoder other = prompt_encoder(4);
  AnchorSet c = build_anchor_set(other, ForgerySource::local,
                                 Granularity::fine, builtin_prompts());
  CHECK(a.real.data != c.real.data);
}

TEST_CASE("cross similarity averages every real-fake pair") {
  AnchorSet set;
  const double s = 1.0 / std::sqrt(2.0);
  set.real = Tensor({2, 3}, {1, 0, 0, 0, 1, 0});
  set.fake = Tensor({2, 3}, {1, 0, 0, s, s, 0});
  double got = anchor_cross_similarity(set);
  CHECK(got == doctest::Approx((1.0 + s + 0.0 + s) / 4.0).epsilon(1e-12));
}
