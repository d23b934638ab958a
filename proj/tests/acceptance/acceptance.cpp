// Acceptance gate. Runs three seeded end-to-end pipelines (cached between
// invocations under acceptance_runs/), derives every headline claim from
// their artifacts, and prints one verdict line per criterion. Exit status is
// the number of failed criteria.
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <type_traits>
#include <vector>

#include "anchors/anchors.hpp"
#include "common/error.hpp"
#include "common/prng.hpp"
#include "dataforge/ppm.hpp"
#include "dataforge/synth.hpp"
#include "detectors/detectors.hpp"
#include "encoder/checkpoint.hpp"
#include "encoder/model.hpp"
#include "eraser/eraser.hpp"
#include "harness/config.hpp"
#include "harness/pipeline.hpp"
#include "json.hpp"
#include "numcore/tape.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace fge;

namespace {

double now_s() {
  return std::chrono::duration<double>(
             std::chrono::steady_clock::now().time_since_epoch())
      .count();
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) raise(ErrorCode::Io, "cannot open " + p.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

json jread(const fs::path& p) { return json::parse(slurp(p)); }

double median3(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  return v[v.size() / 2];
}

// minimal csv: header row, no quoting in our files
struct Csv {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  std::size_t col(const std::string& name) const {
    for (std::size_t i = 0; i < header.size(); ++i)
      if (header[i] == name) return i;
    raise(ErrorCode::Io, "csv lacks column " + name);
  }
  const std::vector<std::string>* find(const std::string& c0,
                                       const std::string& v0,
                                       const std::string& c1 = "",
                                       const std::string& v1 = "") const {
    const std::size_t i0 = col(c0);
    const std::size_t i1 = c1.empty() ? 0 : col(c1);
    for (const auto& r : rows)
      if (r[i0] == v0 && (c1.empty() || r[i1] == v1)) return &r;
    return nullptr;
  }
};

Csv read_csv(const fs::path& p) {
  std::ifstream in(p);
  if (!in) raise(ErrorCode::Io, "cannot open " + p.string());
  Csv out;
  std::string line;
  bool first = true;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (line.back() == ',') cells.push_back("");
    if (first) {
      out.header = cells;
      first = false;
    } else {
      cells.resize(out.header.size());
      out.rows.push_back(cells);
    }
  }
  return out;
}

const std::vector<std::uint64_t> kSeeds = {7, 8, 9};
const char* const kHeads[] = {"linear", "mlp2"};

fs::path g_root = "acceptance_runs";

fs::path dir_eps8(std::uint64_t seed) {
  return g_root / ("eps8_seed" + std::to_string(seed));
}
fs::path dir_eps4(std::uint64_t seed) {
  return g_root / ("eps4_seed" + std::to_string(seed));
}

RunConfig cfg_eps8(std::uint64_t seed) {
  RunConfig cfg;
  cfg.seed = seed;
  return cfg;  // defaults carry the 8/255, alpha 2/255, 8 step budget
}

RunConfig cfg_eps4(std::uint64_t seed) {
  RunConfig cfg;
  cfg.seed = seed;
  cfg.epsilon = 4.0 / 255.0;
  cfg.alpha = 1.0 / 255.0;
  cfg.steps = 4;
  return cfg;
}

bool full_run_complete(const fs::path& dir) {
  if (!fs::exists(dir / "reports/features_pca.csv")) return false;
  try {
    return jread(dir / "manifest.json")["stages"].size() >= 9;
  } catch (...) {
    return false;
  }
}

void ensure_full_run(std::uint64_t seed) {
  const fs::path dir = dir_eps8(seed);
  if (full_run_complete(dir)) return;
  std::fprintf(stderr, "building full run seed %llu ...\n",
               static_cast<unsigned long long>(seed));
  fs::remove_all(dir);
  RunContext ctx(cfg_eps8(seed), dir.string());
  run_pipeline(ctx);
}

void ensure_eps4_run(std::uint64_t seed) {
  const fs::path dir = dir_eps4(seed);
  if (fs::exists(dir / "reports/report.json")) return;
  std::fprintf(stderr, "building low-budget run seed %llu ...\n",
               static_cast<unsigned long long>(seed));
  fs::remove_all(dir);
  fs::create_directories(dir);
  fs::copy(dir_eps8(seed) / "data", dir / "data",
           fs::copy_options::recursive);
  fs::copy(dir_eps8(seed) / "models", dir / "models",
           fs::copy_options::recursive);
  RunContext ctx(cfg_eps4(seed), dir.string());
  stage_attack(ctx);
  stage_evaluate(ctx);
}

double rdelta_cell(const json& report, const char* head, const char* cls) {
  const auto& v = report["cells"][head]["r_delta"][cls];
  if (v.is_null()) raise(ErrorCode::Io, "null r_delta cell");
  return v.get<double>();
}

char g_note[512];

#define NOTE(...) std::snprintf(g_note, sizeof g_note, __VA_ARGS__)

// ---------------------------------------------------------------------------
// 1: analytic gradients against finite differences, every op plus the full
//    guidance loss through resampling and the encoder

bool crit_gradients() {
  const double t0 = now_s();
  double worst = 0.0;
  auto probe = [&](const std::function<TensorPtr(Tape&, const TensorPtr&)>& f,
                   const Tensor& x) {
    worst = std::max(worst, grad_check(f, x, 1e-5));
  };

  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    Rng rng(seed * 7919 + 1);
    auto rnd = [&](std::vector<std::size_t> shape) {
      Tensor t(std::move(shape));
      for (auto& v : t.data) v = rng.uniform(-1.0, 1.0);
      return t;
    };
    const Tensor B = rnd({4, 6});
    auto weigh = [&](Tape& t, const TensorPtr& y) {
      // pair each output cell with a distinct weight so flat directions of
      // the op still register in the scalar objective
      Tensor w(y->shape);
      for (std::size_t i = 0; i < w.numel(); ++i) w.data[i] = 0.1 * (i + 1);
      return t.sum(t.mul(y, t.leaf(w)));
    };

    probe([&](Tape& t, const TensorPtr& x) { return weigh(t, t.add(x, t.leaf(B))); }, rnd({4, 6}));
    probe([&](Tape& t, const TensorPtr& x) { return weigh(t, t.sub(t.leaf(B), x)); }, rnd({4, 6}));
    probe([&](Tape& t, const TensorPtr& x) { return weigh(t, t.mul(x, t.leaf(B))); }, rnd({4, 6}));
    probe([&](Tape& t, const TensorPtr& x) { return weigh(t, t.scale(x, -1.7)); }, rnd({4, 6}));
    probe([&](Tape& t, const TensorPtr& x) { return t.sum(t.exp(t.add_const(t.scale(x, 0.5), 0.3))); }, rnd({4, 6}));
    probe([&](Tape& t, const TensorPtr& x) { return t.sum(t.gelu(x)); }, rnd({4, 6}));
    probe([&](Tape& t, const TensorPtr& x) { return t.sum(t.tanh(x)); }, rnd({4, 6}));
    probe([&](Tape& t, const TensorPtr& x) { return weigh(t, t.scale_by(t.leaf(B), x)); }, rnd({1}));
    probe([&](Tape& t, const TensorPtr& x) { return weigh(t, t.scale_by(x, t.leaf(rnd({1})))); }, rnd({4, 6}));

    const Tensor W = rnd({6, 3});
    probe([&](Tape& t, const TensorPtr& x) { return weigh(t, t.matmul(x, t.leaf(W))); }, rnd({5, 6}));
    probe([&](Tape& t, const TensorPtr& x) { return weigh(t, t.matmul(t.leaf(B), x)); }, rnd({6, 3}));
    {
      const Tensor X = rnd({4, 6}), bias = rnd({3});
      probe([&](Tape& t, const TensorPtr& x) { return weigh(t, t.linear(t.leaf(X), x, t.leaf(bias))); }, rnd({6, 3}));
      probe([&](Tape& t, const TensorPtr& x) { return weigh(t, t.linear(x, t.leaf(W), t.leaf(bias))); }, rnd({4, 6}));
      probe([&](Tape& t, const TensorPtr& x) { return weigh(t, t.linear(t.leaf(X), t.leaf(W), x)); }, rnd({3}));
    }
    probe([&](Tape& t, const TensorPtr& x) { return weigh(t, t.transpose(x)); }, rnd({4, 6}));
    probe([&](Tape& t, const TensorPtr& x) { return weigh(t, t.add_rowvec(x, t.leaf(rnd({6})))); }, rnd({4, 6}));
    probe([&](Tape& t, const TensorPtr& x) { return weigh(t, t.add_rowvec(t.leaf(B), x)); }, rnd({6}));

    {
      const Tensor g = rnd({6}), b = rnd({6});
      probe([&](Tape& t, const TensorPtr& x) { return weigh(t, t.layernorm(x, t.leaf(g), t.leaf(b))); }, rnd({5, 6}));
      probe([&](Tape& t, const TensorPtr& x) { return weigh(t, t.layernorm(t.leaf(B), x, t.leaf(b))); }, rnd({6}));
      probe([&](Tape& t, const TensorPtr& x) { return weigh(t, t.layernorm(t.leaf(B), t.leaf(g), x)); }, rnd({6}));
    }
    probe([&](Tape& t, const TensorPtr& x) { return weigh(t, t.softmax_rows(x)); }, rnd({3, 5}));
    probe([&](Tape& t, const TensorPtr& x) { return weigh(t, t.l2_normalize(x, 1)); }, rnd({4, 6}));
    probe([&](Tape& t, const TensorPtr& x) { return t.cosine(x, t.leaf(rnd({8}))); }, rnd({8}));
    probe([&](Tape& t, const TensorPtr& x) { return t.sum(t.mul(x, t.leaf(B))); }, rnd({4, 6}));
    probe([&](Tape& t, const TensorPtr& x) { return t.mean(t.mul(x, t.leaf(B))); }, rnd({4, 6}));

    probe([&](Tape& t, const TensorPtr& x) { return t.cross_entropy_rows(x, {1, 0, 3, 2}); }, rnd({4, 5}));
    probe([&](Tape& t, const TensorPtr& x) { return t.bce_with_logits(x, {1, 0, 1, 1, 0, 0}); }, rnd({6}));

    probe([&](Tape& t, const TensorPtr& x) { return weigh(t, t.patchify(x, 2)); }, rnd({6, 4, 3}));
    probe([&](Tape& t, const TensorPtr& x) { return weigh(t, t.prepend_token(x, t.leaf(rnd({5})), 2)); }, rnd({6, 5}));
    probe([&](Tape& t, const TensorPtr& x) { return weigh(t, t.prepend_token(t.leaf(rnd({6, 5})), x, 2)); }, rnd({5}));
    probe([&](Tape& t, const TensorPtr& x) { return weigh(t, t.add_pos(t.leaf(rnd({6, 5})), x, 2)); }, rnd({3, 5}));
    probe([&](Tape& t, const TensorPtr& x) { return weigh(t, t.select_cls_rows(x, 2, 3)); }, rnd({6, 5}));
    // repeated ids make the backward accumulate into one table row
    probe([&](Tape& t, const TensorPtr& x) { return weigh(t, t.gather_rows(x, {2, 0, 2, 1})); }, rnd({4, 5}));
    probe([&](Tape& t, const TensorPtr& x) { return weigh(t, t.mean_pool(x, 2, 3, {3, 2})); }, rnd({6, 5}));

    {
      const std::size_t len = 5, dm = 8, heads = 2;
      const std::vector<std::size_t> lens = {len, 3};
      probe([&](Tape& t, const TensorPtr& x) { return weigh(t, t.attention(x, 2, len, lens, heads)); },
            rnd({2 * len, 3 * dm}));
    }
    {
      Tensor k = rnd({3, 3});
      probe([&](Tape& t, const TensorPtr& x) { return weigh(t, t.depthwise_conv2d(x, k, 1, 1)); }, rnd({6, 7, 3}));
    }
    probe([&](Tape& t, const TensorPtr& x) { return weigh(t, t.bilinear_resize(x, 3, 4)); }, rnd({6, 8, 3}));

    {
      // the attack's actual objective: guidance loss of the perturbed image
      // through resampling and the image tower, differentiated in delta
      EncoderConfig cfg;
      cfg.width = 16;
      cfg.blocks = 2;
      cfg.heads = 2;
      cfg.mlp_hidden = 16;
      cfg.embed_dim = 8;
      cfg.text_blocks = 1;
      cfg.max_text_len = 4;
      DualEncoder enc = make_encoder(cfg, build_vocabulary({"a b"}), seed + 1);
      for (auto& p : enc.param_ptrs()) p->requires_grad = false;

      AnchorSet set;
      Tensor clean({64, 64, 3});
      for (auto& v : clean.data) v = rng.uniform(0.25, 0.75);
      set.real = rnd({2, cfg.embed_dim});
      set.fake = rnd({3, cfg.embed_dim});
      const std::map<int, double> omega = {{1, 0.5}, {2, 0.5}};

      auto f = [&](Tape& t, const TensorPtr& delta) {
        auto x = t.add(t.leaf(clean), delta);
        auto small = resample(t, x);
        auto tokens = image_tokens(t, enc, small);
        auto z = encode_image_layers(t, enc, tokens, 1, {1, 2});
        return mmg_loss(t, z, set, 1.0, omega).total;
      };
      Tensor delta({64, 64, 3});
      for (auto& v : delta.data) v = rng.uniform(-0.02, 0.02);
      std::vector<std::size_t> coords;
      for (std::size_t i = 0; i < delta.numel(); i += 977) coords.push_back(i);
      worst = std::max(worst, grad_check(f, delta, 1e-5, &coords));
    }
  }

  const double secs = now_s() - t0;
  NOTE("max rel err %.2e over 10 seeds, %.1fs", worst, secs);
  return worst <= 1e-4 && secs < 60.0;
}

// ---------------------------------------------------------------------------
// 2: perturbation budget is exact, on disk and in memory

bool crit_budget() {
  std::size_t audited[2] = {0, 0};
  std::size_t violations = 0;
  for (const bool low : {false, true}) {
    const fs::path dir = low ? dir_eps4(7) : dir_eps8(7);
    const double eps = low ? 4.0 / 255.0 : 8.0 / 255.0;
    const auto entries =
        load_manifest((dir / "data/attack/attack_manifest.jsonl").string());
    for (const auto& e : entries) {
      const Tensor clean = load_ppm((dir / "data/attack" / e.file).string());
      const Tensor adv = load_ppm((dir / "adv/main" / e.file).string());
      double d = 0.0, lo = 1.0, hi = 0.0;
      for (std::size_t i = 0; i < adv.numel(); ++i) {
        d = std::max(d, std::abs(adv.data[i] - clean.data[i]));
        lo = std::min(lo, adv.data[i]);
        hi = std::max(hi, adv.data[i]);
      }
      ++audited[low];
      if (d > eps + 1e-12 || lo < 0.0 || hi > 1.0) ++violations;
    }
  }

  // the raw operator, before any file quantization
  DualEncoder enc =
      load_encoder((dir_eps8(7) / "models/encoder.fge").string());
  for (auto& p : enc.param_ptrs()) p->requires_grad = false;
  const AnchorSet set = build_anchor_set(enc, ForgerySource::global,
                                         Granularity::fine, builtin_prompts());
  const auto entries =
      load_manifest((dir_eps8(7) / "data/attack/attack_manifest.jsonl").string());
  for (const bool low : {false, true}) {
    AttackConfig acfg;
    acfg.epsilon = low ? 4.0 / 255.0 : 8.0 / 255.0;
    acfg.alpha = low ? 1.0 / 255.0 : 2.0 / 255.0;
    acfg.steps = low ? 4 : 8;
    acfg.layers = {enc.final_block() - 1, enc.final_block()};
    acfg.omega = {0.5, 0.5};
    for (std::size_t i = 0; i < 16; ++i) {
      const Tensor clean =
          load_ppm((dir_eps8(7) / "data/attack" / entries[i].file).string());
      const AttackResult res = attack(clean, enc, set, acfg);
      double d = 0.0;
      for (std::size_t j = 0; j < clean.numel(); ++j)
        d = std::max(d, std::abs(res.image.data[j] - clean.data[j]));
      ++audited[low];
      if (d > acfg.epsilon * (1.0 + 1e-12) + 1e-15) ++violations;
    }
  }

  NOTE("%zu + %zu images audited, %zu violations", audited[0], audited[1],
       violations);
  return audited[0] >= 500 && audited[1] >= 500 && violations == 0;
}

// ---------------------------------------------------------------------------
// 3: data + backbone + probe inside ten minutes, probe at 90%

bool crit_pipeline_gate() {
  const json manifest = jread(dir_eps8(7) / "manifest.json");
  double secs = 0.0;
  for (const auto& s : manifest["stages"]) {
    const std::string name = s["name"].get<std::string>();
    if (name == "gen-data" || name == "train-backbone" ||
        name == "train-detectors")
      secs += s["seconds"].get<double>();
  }
  const json det = jread(dir_eps8(7) / "reports/detectors.json");
  const double balanced = det["linear"]["balanced"].get<double>();
  NOTE("gen+train+probe %.0fs, linear probe %.1f%% balanced", secs, balanced);
  return secs < 600.0 && balanced >= 90.0;
}

// ---------------------------------------------------------------------------
// 4: the headline collapse at 8/255, and reals stay put

bool crit_headline() {
  bool ok = true;
  std::string parts;
  for (const char* head : kHeads) {
    std::vector<double> fake, real;
    for (const auto seed : kSeeds) {
      const json r = jread(dir_eps8(seed) / "reports/report.json");
      fake.push_back(rdelta_cell(r, head, "fake"));
      real.push_back(rdelta_cell(r, head, "real"));
    }
    const double mf = median3(fake), mr = median3(real);
    ok = ok && mf <= -50.0 && mr >= -5.0;
    parts += std::string(head) + " fake " + std::to_string(mf).substr(0, 6) +
             " real " + std::to_string(mr).substr(0, 6) + "  ";
  }
  NOTE("median R-delta: %s", parts.c_str());
  return ok;
}

// ---------------------------------------------------------------------------
// 5: still potent at half budget

bool crit_low_budget() {
  bool ok = true;
  std::string parts;
  for (const char* head : kHeads) {
    std::vector<double> fake;
    for (const auto seed : kSeeds)
      fake.push_back(
          rdelta_cell(jread(dir_eps4(seed) / "reports/report.json"), head,
                      "fake"));
    const double mf = median3(fake);
    ok = ok && mf <= -25.0;
    parts += std::string(head) + " " + std::to_string(mf).substr(0, 6) + "  ";
  }
  NOTE("median fake R-delta at 4/255: %s", parts.c_str());
  return ok;
}

// ---------------------------------------------------------------------------
// 6: finer anchors strictly beat blind gradient pressure

bool crit_granularity() {
  bool ok = true;
  std::string parts;
  for (const char* head : kHeads) {
    const std::string col = std::string(head) + "_fake_acc";
    std::map<std::string, std::vector<double>> acc;
    for (const auto seed : kSeeds) {
      const Csv t = read_csv(dir_eps8(seed) / "reports/ablate_granularity.csv");
      for (const char* g : {"untargeted", "coarse", "fine"}) {
        const auto* row = t.find("granularity", g);
        if (!row) return false;
        acc[g].push_back(std::stod((*row)[t.col(col)]));
      }
    }
    const double fine = median3(acc["fine"]);
    const double coarse = median3(acc["coarse"]);
    const double untargeted = median3(acc["untargeted"]);
    ok = ok && fine <= coarse + 1e-9 && coarse <= untargeted + 1e-9 &&
         fine < untargeted - 10.0;
    char buf[96];
    std::snprintf(buf, sizeof buf, "%s %.1f/%.1f/%.1f  ", head, fine, coarse,
                  untargeted);
    parts += buf;
  }
  NOTE("median fake acc fine/coarse/untargeted: %s", parts.c_str());
  return ok;
}

// ---------------------------------------------------------------------------
// 7: source-matched anchors at least as damaging as mismatched

bool crit_source_match() {
  bool ok = true;
  std::string parts;
  for (const char* head : kHeads) {
    for (const char* f_src : {"global", "local"}) {
      const char* other = std::string(f_src) == "global" ? "local" : "global";
      std::vector<double> matched, mismatched;
      for (const auto seed : kSeeds) {
        const Csv t =
            read_csv(dir_eps8(seed) / "reports/ablate_source_match.csv");
        const std::string col = std::string(head) + "_fake_acc";
        const auto* m = t.find("anchors", f_src, "fakes", f_src);
        const auto* x = t.find("anchors", other, "fakes", f_src);
        if (!m || !x) return false;
        matched.push_back(std::stod((*m)[t.col(col)]));
        mismatched.push_back(std::stod((*x)[t.col(col)]));
      }
      const double mm = median3(matched), mx = median3(mismatched);
      ok = ok && mm <= mx + 1e-9;
      char buf[96];
      std::snprintf(buf, sizeof buf, "%s/%s %.1f vs %.1f  ", head, f_src, mm,
                    mx);
      parts += buf;
    }
  }
  NOTE("matched vs mismatched fake acc: %s", parts.c_str());
  return ok;
}

// ---------------------------------------------------------------------------
// 8: embeddings migrate toward the real anchors, away from the fake ones

bool crit_migration() {
  std::vector<double> toward, away, counts;
  for (const auto seed : kSeeds) {
    const json r = jread(dir_eps8(seed) / "reports/report.json");
    const auto& m = r["migration"];
    toward.push_back(m["real_centroid_adv"].get<double>() -
                     m["real_centroid_clean"].get<double>());
    away.push_back(m["fake_centroid_adv"].get<double>() -
                   m["fake_centroid_clean"].get<double>());
    counts.push_back(m["fakes"].get<double>());
  }
  const double t = median3(toward), a = median3(away);
  NOTE("real centroid %+.3f, fake centroid %+.3f over %g fakes", t, a,
       counts[0]);
  return t > 0.05 && a < 0.0 && counts[0] >= 200;
}

// ---------------------------------------------------------------------------
// 9: the evasion survives mild re-compression and blur

bool crit_robustness() {
  bool ok = true;
  std::string parts;
  for (const char* head : kHeads) {
    const std::string col = std::string(head) + "_fake_acc";
    std::vector<double> clean, jpeg50, blur1;
    std::map<std::string, std::vector<double>> extra;
    for (const auto seed : kSeeds) {
      const Csv t = read_csv(dir_eps8(seed) / "reports/robustness.csv");
      const auto* c = t.find("distortion", "clean");
      const auto* j = t.find("distortion", "jpeg", "param", "50");
      const auto* b = t.find("distortion", "blur", "param", "1");
      if (!c || !j || !b) return false;
      clean.push_back(std::stod((*c)[t.col(col)]));
      jpeg50.push_back(std::stod((*j)[t.col(col)]));
      blur1.push_back(std::stod((*b)[t.col(col)]));
      for (const auto& row : t.rows) {
        const std::string kind = row[t.col("distortion")];
        if (kind == "clean") continue;
        const std::string key = kind + " " + row[t.col("param")];
        extra[key].push_back(std::stod(row[t.col(col)]));
      }
    }
    const double mc = median3(clean);
    const double mj = median3(jpeg50);
    const double mb = median3(blur1);
    // accuracy on distorted adversarials must stay collapsed, not recover
    ok = ok && mj <= 0.5 * mc && mb <= 0.5 * mc;
    char buf[128];
    std::snprintf(buf, sizeof buf, "%s clean %.1f jpeg50 %.1f blur1 %.1f  ",
                  head, mc, mj, mb);
    parts += buf;
    std::string aux = std::string("  [info] ") + head + " fake acc:";
    for (auto& [key, vals] : extra) {
      char kb[64];
      std::snprintf(kb, sizeof kb, " %s=%.1f", key.c_str(), median3(vals));
      aux += kb;
    }
    std::fprintf(stderr, "%s\n", aux.c_str());
  }
  NOTE("median fake acc: %s", parts.c_str());
  return ok;
}

// ---------------------------------------------------------------------------
// 10: the attack is black-box by construction and by audit

static_assert(
    std::is_same_v<decltype(&attack),
                   AttackResult (*)(const Tensor&, const DualEncoder&,
                                    const AnchorSet&, const AttackConfig&)>,
    "attack must see the encoder and anchors only");
static_assert(
    std::is_same_v<decltype(&untargeted_attack),
                   AttackResult (*)(const Tensor&, const DualEncoder&,
                                    const AttackConfig&)>,
    "untargeted attack must see the encoder only");

bool crit_black_box() {
  std::size_t stages_checked = 0;
  for (const auto seed : kSeeds) {
    const json manifest = jread(dir_eps8(seed) / "manifest.json");
    for (const auto& s : manifest["stages"]) {
      if (s["name"] != "attack") continue;
      ++stages_checked;
      if (s["reads"].empty()) return false;
      for (const auto& r : s["reads"])
        if (r.get<std::string>().find("head") != std::string::npos)
          return false;
    }
  }
  NOTE("signatures fixed at compile time; %zu attack stages read no detector",
       stages_checked);
  return stages_checked == kSeeds.size();
}

// ---------------------------------------------------------------------------
// 11: a second full run of the same config is byte-identical

bool crit_determinism() {
  const fs::path dir = g_root / "eps8_seed7_repeat";
  if (!full_run_complete(dir)) {
    fs::remove_all(dir);
    std::fprintf(stderr, "building repeat run seed 7 ...\n");
    RunContext ctx(cfg_eps8(7), dir.string());
    run_pipeline(ctx);
  }

  std::size_t files = 0, mismatched = 0;
  // every adversarial image, every report, every checkpoint
  for (const char* sub : {"adv", "reports", "models"}) {
    for (const auto& entry :
         fs::recursive_directory_iterator(dir_eps8(7) / sub)) {
      if (!entry.is_regular_file()) continue;
      const fs::path rel = fs::relative(entry.path(), dir_eps8(7));
      ++files;
      if (!fs::exists(dir / rel) || slurp(entry.path()) != slurp(dir / rel))
        ++mismatched;
    }
  }
  NOTE("%zu files compared across full reruns, %zu differ", files, mismatched);
  return files > 600 && mismatched == 0;
}

// ---------------------------------------------------------------------------
// 12: relative-drop arithmetic on reference cells

bool crit_rdelta() {
  const auto a = r_delta(0.5, 74.7);
  const auto b = r_delta(99.1, 95.3);
  const auto c = r_delta(33.0, 33.0);
  const auto d = r_delta(12.0, 0.0);
  const bool ok = a && std::abs(*a - (-99.3)) < 0.1 && b &&
                  std::abs(*b - 4.0) < 0.1 && c && *c == 0.0 && !d;
  NOTE("collapse %.4f%%, gain %+.4f%%, flat 0, undefined null",
       a ? *a : 0.0, b ? *b : 0.0);
  return ok;
}

}  // namespace

int main(int argc, char** argv) {
  if (argc > 1) g_root = argv[1];
  fs::create_directories(g_root);

  bool runs_ok = true;
  try {
    for (const auto seed : kSeeds) ensure_full_run(seed);
    for (const auto seed : kSeeds) ensure_eps4_run(seed);
  } catch (const std::exception& e) {
    runs_ok = false;
    std::fprintf(stderr, "pipeline build failed: %s\n", e.what());
  }

  const struct {
    int id;
    const char* what;
    bool (*fn)();
  } criteria[] = {
      {1, "gradient checks", crit_gradients},
      {2, "budget exactness", crit_budget},
      {3, "pipeline gate", crit_pipeline_gate},
      {4, "headline collapse", crit_headline},
      {5, "half-budget collapse", crit_low_budget},
      {6, "granularity ordering", crit_granularity},
      {7, "source matching", crit_source_match},
      {8, "embedding migration", crit_migration},
      {9, "fragility under distortion", crit_robustness},
      {10, "black-box separation", crit_black_box},
      {11, "determinism", crit_determinism},
      {12, "relative-drop arithmetic", crit_rdelta},
  };

  int failures = 0;
  for (const auto& c : criteria) {
    bool pass = false;
    g_note[0] = '\0';
    try {
      pass = c.fn();
    } catch (const std::exception& e) {
      NOTE("exception: %s", e.what());
    }
    if (!runs_ok && c.id != 1 && c.id != 12) {
      // without the cached runs most criteria cannot be measured
    }
    std::printf("[criterion %2d] %s  %s (%s)\n", c.id, pass ? "PASS" : "FAIL",
                c.what, g_note);
    std::fflush(stdout);
    if (!pass) ++failures;
  }
  return failures;
}
