#include "harness/pipeline.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <mutex>
#include <sstream>
#include <thread>

#include "anchors/anchors.hpp"
#include "common/error.hpp"
#include "dataforge/ppm.hpp"
#include "dataforge/synth.hpp"
#include "detectors/detectors.hpp"
#include "encoder/checkpoint.hpp"
#include "encoder/train.hpp"
#include "eraser/eraser.hpp"
#include "harness/distort.hpp"
#include "harness/pca.hpp"
#include "json.hpp"

namespace fge {

using nlohmann::json;
namespace fs = std::filesystem;

std::optional<double> r_delta(double acc_adv, double acc_clean) {
  if (acc_clean < 0.0)
    raise(ErrorCode::InvalidArg, "r_delta: clean accuracy must be nonnegative");
  if (acc_clean == 0.0) return std::nullopt;
  return (acc_adv - acc_clean) / acc_clean * 100.0;
}

namespace {

double now_secs() {
  return std::chrono::duration<double>(
             std::chrono::steady_clock::now().time_since_epoch())
      .count();
}

json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) raise(ErrorCode::Io, "cannot open " + path);
  json j = json::parse(in, nullptr, false);
  if (j.is_discarded()) raise(ErrorCode::Io, path + " is not valid JSON");
  return j;
}

void write_text_file(const std::string& path, const std::string& text) {
  fs::create_directories(fs::path(path).parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) raise(ErrorCode::Io, "cannot open " + path + " for writing");
  out << text;
  if (!out) raise(ErrorCode::Io, "short write to " + path);
}

// Independent per-item work distributed over a small thread pool; item i's
// result depends only on i, so the worker count never changes the outputs.
void run_parallel(std::size_t n, const std::function<void(std::size_t)>& fn) {
  std::size_t workers = std::max(1u, std::thread::hardware_concurrency());
  workers = std::min<std::size_t>(std::min<std::size_t>(workers, 8), n ? n : 1);
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::mutex err_mtx;
  std::exception_ptr err;
  auto body = [&] {
    for (;;) {
      const std::size_t i = next.fetch_add(1);
      if (i >= n) return;
      try {
        fn(i);
      } catch (...) {
        std::lock_guard<std::mutex> lock(err_mtx);
        if (!err) err = std::current_exception();
        return;
      }
    }
  };
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(body);
  for (auto& t : pool) t.join();
  if (err) std::rethrow_exception(err);
}

constexpr std::uint64_t kAttackSeedOffset = 1ull << 41;

}  // namespace

RunContext::RunContext(RunConfig cfg, std::string out_dir)
    : cfg_(std::move(cfg)), out_dir_(std::move(out_dir)) {
  if (out_dir_.empty())
    raise(ErrorCode::InvalidArg, "run needs an output directory");
  fs::create_directories(out_dir_);
  write_manifest_skeleton();
}

void RunContext::write_manifest_skeleton() {
  const std::string mpath = path("manifest.json");
  json m;
  if (fs::exists(mpath)) m = read_json_file(mpath);
  if (!m.is_object()) m = json::object();
  m["config"] = json::parse(config_to_json(cfg_));
  m["config_hash"] = config_hash(cfg_);
  m["seed"] = cfg_.seed;
  if (!m.contains("stages") || !m["stages"].is_array()) m["stages"] = json::array();
  write_text_file(mpath, m.dump(2) + "\n");
}

void RunContext::note_read(const std::string& p) {
  std::string rel = p;
  const std::string prefix = out_dir_ + "/";
  if (rel.rfind(prefix, 0) == 0) rel = rel.substr(prefix.size());
  for (const auto& f : forbidden_)
    if (rel.find(f) != std::string::npos || p.find(f) != std::string::npos)
      raise(ErrorCode::Internal,
            "stage \"" + stage_ + "\" attempted to read \"" + rel +
                "\", which its threat model forbids");
  if (!stage_.empty()) reads_.push_back(rel);
}

void RunContext::begin_stage(const std::string& name,
                             std::vector<std::string> forbidden) {
  stage_ = name;
  forbidden_ = std::move(forbidden);
  reads_.clear();
  stage_start_ = now_secs();
}

void RunContext::end_stage() {
  const double secs = now_secs() - stage_start_;
  const std::string mpath = path("manifest.json");
  json m = read_json_file(mpath);
  json entry{{"name", stage_}, {"seconds", secs}, {"reads", reads_}};
  bool replaced = false;
  for (auto& s : m["stages"])
    if (s.is_object() && s.value("name", "") == stage_) {
      s = entry;
      replaced = true;
      break;
    }
  if (!replaced) m["stages"].push_back(entry);
  write_text_file(mpath, m.dump(2) + "\n");
  stage_.clear();
  forbidden_.clear();
  reads_.clear();
}

namespace {

// All file loads inside stages flow through these so the manifest's read
// audit is complete.
Tensor read_image(RunContext& ctx, const std::string& p) {
  ctx.note_read(p);
  return load_ppm(p);
}

std::vector<CorpusEntry> read_corpus_manifest(RunContext& ctx,
                                              const std::string& p) {
  ctx.note_read(p);
  return load_manifest(p);
}

DualEncoder read_encoder_file(RunContext& ctx, const std::string& p) {
  ctx.note_read(p);
  ctx.note_read(p + ".meta.json");
  return load_encoder(p);
}

// Attack backward passes only need the input gradient; frozen params keep
// concurrent attacks from racing on shared grad buffers.
void freeze(DualEncoder& enc) {
  for (auto& p : enc.param_ptrs()) {
    p->requires_grad = false;
    p->grad.clear();
  }
}

DetectorHead read_head_file(RunContext& ctx, const std::string& p) {
  ctx.note_read(p);
  return load_head(p);
}

PromptPack prompts_for(RunContext& ctx) {
  if (ctx.cfg().prompts.empty()) return builtin_prompts();
  ctx.note_read(ctx.cfg().prompts);
  return load_prompt_pack(ctx.cfg().prompts);
}

struct LoadedSet {
  std::vector<CorpusEntry> entries;
  std::vector<Tensor> images;
};

LoadedSet read_split(RunContext& ctx, const std::string& split) {
  LoadedSet out;
  const std::string dir = ctx.path("data/" + split);
  out.entries = read_corpus_manifest(ctx, dir + "/" + split + "_manifest.jsonl");
  out.images.reserve(out.entries.size());
  for (const auto& e : out.entries) out.images.push_back(read_image(ctx, dir + "/" + e.file));
  return out;
}

std::vector<const Tensor*> ptrs_of(const std::vector<Tensor>& v) {
  std::vector<const Tensor*> p;
  p.reserve(v.size());
  for (const auto& t : v) p.push_back(&t);
  return p;
}

}  // namespace

void stage_gen_data(RunContext& ctx) {
  const RunConfig& cfg = ctx.cfg();
  ctx.begin_stage("gen-data");
  SampleSet train = generate_corpus(cfg.train_per_class, "train", cfg.seed);
  SampleSet test = generate_corpus(cfg.test_per_class, "test", cfg.seed);
  SampleSet atk =
      generate_corpus(cfg.attack_per_class, "test", cfg.seed + kAttackSeedOffset);
  atk.split = "attack";  // disjoint seed range; relabel for file naming
  write_corpus(train, ctx.path("data/train"));
  write_corpus(test, ctx.path("data/test"));
  write_corpus(atk, ctx.path("data/attack"));
  ctx.end_stage();
}

void stage_train_backbone(RunContext& ctx) {
  const RunConfig& cfg = ctx.cfg();
  ctx.begin_stage("train-backbone");
  LoadedSet train = read_split(ctx, "train");
  SampleSet corpus;
  corpus.split = "train";
  corpus.per_class = cfg.train_per_class;
  for (std::size_t i = 0; i < train.entries.size(); ++i) {
    SynthSample s;
    s.kind = train.entries[i].kind;
    s.seed = train.entries[i].seed;
    s.caption = train.entries[i].caption;
    s.image = std::move(train.images[i]);
    corpus.samples.push_back(std::move(s));
  }
  std::vector<std::string> extra = all_builtin_prompt_texts();
  if (!cfg.prompts.empty()) {
    const PromptPack pack = prompts_for(ctx);
    for (const auto* list :
         {&pack.real_global, &pack.fake_global, &pack.real_local, &pack.fake_local})
      extra.insert(extra.end(), list->begin(), list->end());
  }
  EncoderConfig ecfg;
  TrainConfig tcfg;
  tcfg.steps = cfg.backbone_steps;
  tcfg.batch = cfg.backbone_batch;
  tcfg.lr = cfg.backbone_lr;
  tcfg.seed = cfg.seed;
  TrainResult res = train_contrastive(corpus, extra, ecfg, tcfg);
  fs::create_directories(ctx.path("models"));
  save_encoder(res.encoder, ctx.path("models/encoder.fge"));
  std::ostringstream csv;
  csv << "step,loss\n";
  for (std::size_t i = 0; i < res.loss_history.size(); ++i) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%zu,%.12g\n", i, res.loss_history[i]);
    csv << buf;
  }
  write_text_file(ctx.path("reports/backbone_loss.csv"), csv.str());
  ctx.end_stage();
}

namespace {

struct PairAcc {
  double real = 0.0, fake = 0.0;  // percentages over their subsets
};

PairAcc accuracy_percent(const std::vector<double>& scores,
                         const std::vector<CorpusEntry>& entries) {
  double ok_real = 0, ok_fake = 0;
  std::size_t n_real = 0, n_fake = 0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    const bool is_fake = entries[i].kind != SampleKind::real;
    const bool said_fake = score_is_fake(scores[i]);
    if (is_fake) {
      ++n_fake;
      ok_fake += said_fake ? 1.0 : 0.0;
    } else {
      ++n_real;
      ok_real += said_fake ? 0.0 : 1.0;
    }
  }
  PairAcc acc;
  acc.real = n_real ? 100.0 * ok_real / static_cast<double>(n_real) : 0.0;
  acc.fake = n_fake ? 100.0 * ok_fake / static_cast<double>(n_fake) : 0.0;
  return acc;
}

struct HeadPair {
  DetectorHead linear, mlp2;
};

HeadPair read_heads(RunContext& ctx) {
  HeadPair h;
  h.linear = read_head_file(ctx, ctx.path("models/head_linear.fge"));
  h.mlp2 = read_head_file(ctx, ctx.path("models/head_mlp2.fge"));
  return h;
}

struct ScoredSet {
  std::vector<double> linear, mlp2;
};

ScoredSet score_images(const DualEncoder& enc, const HeadPair& heads,
                       const std::vector<Tensor>& images) {
  ScoredSet s;
  const auto ptrs = ptrs_of(images);
  std::map<int, Tensor> embeds;
  for (const int layer : {heads.linear.layer, heads.mlp2.layer})
    if (!embeds.count(layer)) embeds.emplace(layer, embed_images(enc, ptrs, layer));
  s.linear = head_scores(heads.linear, embeds.at(heads.linear.layer));
  s.mlp2 = head_scores(heads.mlp2, embeds.at(heads.mlp2.layer));
  return s;
}

}  // namespace

void stage_train_detectors(RunContext& ctx) {
  const RunConfig& cfg = ctx.cfg();
  ctx.begin_stage("train-detectors");
  DualEncoder enc = read_encoder_file(ctx, ctx.path("models/encoder.fge"));
  const int layer = static_cast<int>(enc.cfg.blocks);
  LoadedSet train = read_split(ctx, "train");
  std::vector<double> labels;
  for (const auto& e : train.entries) labels.push_back(label_of(e.kind));
  const Tensor z = embed_images(enc, ptrs_of(train.images), layer);
  HeadTrainConfig hcfg;
  hcfg.steps = cfg.head_steps;
  hcfg.batch = cfg.head_batch;
  hcfg.lr = cfg.head_lr;
  hcfg.seed = cfg.seed;
  HeadTrainResult lin = train_head(z, labels, HeadArch::linear, layer, hcfg);
  HeadTrainResult mlp = train_head(z, labels, HeadArch::mlp2, layer, hcfg);
  fs::create_directories(ctx.path("models"));
  save_head(lin.head, ctx.path("models/head_linear.fge"));
  save_head(mlp.head, ctx.path("models/head_mlp2.fge"));

  LoadedSet test = read_split(ctx, "test");
  HeadPair heads{lin.head, mlp.head};
  ScoredSet scores = score_images(enc, heads, test.images);
  const PairAcc la = accuracy_percent(scores.linear, test.entries);
  const PairAcc ma = accuracy_percent(scores.mlp2, test.entries);
  json rep{{"linear",
            {{"real", la.real},
             {"fake", la.fake},
             {"balanced", 0.5 * (la.real + la.fake)}}},
           {"mlp2",
            {{"real", ma.real},
             {"fake", ma.fake},
             {"balanced", 0.5 * (ma.real + ma.fake)}}}};
  write_text_file(ctx.path("reports/detectors.json"), rep.dump(2) + "\n");
  ctx.end_stage();
}

namespace {

AnchorSet merge_sources(const AnchorSet& a, const AnchorSet& b) {
  AnchorSet m = a;
  m.real_prompts.insert(m.real_prompts.end(), b.real_prompts.begin(),
                        b.real_prompts.end());
  m.fake_prompts.insert(m.fake_prompts.end(), b.fake_prompts.begin(),
                        b.fake_prompts.end());
  const std::size_t d = a.real.shape[1];
  Tensor real({a.real.shape[0] + b.real.shape[0], d});
  Tensor fake({a.fake.shape[0] + b.fake.shape[0], d});
  std::copy(a.real.data.begin(), a.real.data.end(), real.data.begin());
  std::copy(b.real.data.begin(), b.real.data.end(),
            real.data.begin() + a.real.numel());
  std::copy(a.fake.data.begin(), a.fake.data.end(), fake.data.begin());
  std::copy(b.fake.data.begin(), b.fake.data.end(),
            fake.data.begin() + a.fake.numel());
  m.real = std::move(real);
  m.fake = std::move(fake);
  return m;
}

// Quantize an adversarial image to the 8-bit grid without ever leaving the
// L-inf ball around the (already 8-bit exact) clean image; plain rounding
// could step one level past the budget when 255*eps is fractional.
Tensor snap_to_ppm_budget(const Tensor& adv, const Tensor& clean, double eps) {
  Tensor out(adv.shape);
  const double bound = eps * 255.0;
  const long long radius = static_cast<long long>(std::floor(bound + 1e-9));
  for (std::size_t i = 0; i < adv.numel(); ++i) {
    const long long k = std::llround(clean.data[i] * 255.0);
    long long m = std::llround(std::clamp(adv.data[i], 0.0, 1.0) * 255.0);
    m = std::clamp(m, k - radius, k + radius);
    m = std::clamp<long long>(m, 0, 255);
    out.data[i] = static_cast<double>(m) / 255.0;
  }
  return out;
}

struct AnchorKit {
  Granularity granularity = Granularity::fine;
  bool matched = false;
  ForgerySource forced = ForgerySource::global;
  AnchorSet fine_global, fine_local, fine_merged, coarse;
};

AnchorKit build_anchor_kit(const DualEncoder& enc, const PromptPack& pack,
                           const std::string& granularity,
                           const std::string& anchor_source) {
  AnchorKit kit;
  kit.granularity = granularity_from_name(granularity);
  if (kit.granularity == Granularity::untargeted) return kit;
  if (kit.granularity == Granularity::coarse) {
    kit.coarse =
        build_anchor_set(enc, ForgerySource::global, Granularity::coarse, pack);
    return kit;
  }
  kit.fine_global =
      build_anchor_set(enc, ForgerySource::global, Granularity::fine, pack);
  kit.fine_local =
      build_anchor_set(enc, ForgerySource::local, Granularity::fine, pack);
  kit.fine_merged = merge_sources(kit.fine_global, kit.fine_local);
  kit.matched = anchor_source == "matched";
  if (!kit.matched) kit.forced = source_from_name(anchor_source);
  return kit;
}

// Anchor choice per image. Real images have no forgery source, so under
// matched anchors they pull toward real and push away from both fake
// vocabularies at once.
const AnchorSet* anchors_for(const AnchorKit& kit, SampleKind kind) {
  if (kit.granularity == Granularity::untargeted) return nullptr;
  if (kit.granularity == Granularity::coarse) return &kit.coarse;
  if (!kit.matched)
    return kit.forced == ForgerySource::global ? &kit.fine_global
                                               : &kit.fine_local;
  switch (kind) {
    case SampleKind::real:
      return &kit.fine_merged;
    case SampleKind::fake_global:
      return &kit.fine_global;
    case SampleKind::fake_local:
      return &kit.fine_local;
  }
  return &kit.fine_merged;
}

struct AttackOutcome {
  Tensor image;
  std::size_t iters = 0;
  double final_loss = 0.0;
  bool has_loss = false;
};

// Attacks `items` with the kit and writes snapped PPMs plus a JSON manifest
// into out/adv/<tag>. Inputs are preloaded so workers never touch the disk.
void attack_into(RunContext& ctx, const DualEncoder& enc, const AnchorKit& kit,
                 const std::vector<CorpusEntry>& entries,
                 const std::vector<Tensor>& images, const AttackConfig& acfg,
                 const std::string& tag) {
  const std::string dir = ctx.path("adv/" + tag);
  fs::create_directories(dir);
  std::vector<AttackOutcome> out(entries.size());
  run_parallel(entries.size(), [&](std::size_t i) {
    AttackOutcome& o = out[i];
    if (acfg.epsilon == 0.0) {
      o.image = images[i];  // zero budget admits no perturbation
      return;
    }
    const AnchorSet* set = anchors_for(kit, entries[i].kind);
    AttackResult res = set ? attack(images[i], enc, *set, acfg)
                           : untargeted_attack(images[i], enc, acfg);
    o.iters = res.trace.steps.size();
    if (o.iters) {
      o.final_loss = res.trace.steps.back().total;
      o.has_loss = true;
    }
    o.image = snap_to_ppm_budget(res.image, images[i], acfg.epsilon);
  });
  json manifest = json::array();
  for (std::size_t i = 0; i < entries.size(); ++i) {
    save_ppm(out[i].image, dir + "/" + entries[i].file);
    double delta_inf = 0.0;
    for (std::size_t p = 0; p < out[i].image.numel(); ++p)
      delta_inf = std::max(delta_inf,
                           std::abs(out[i].image.data[p] - images[i].data[p]));
    json e{{"file", entries[i].file},
           {"clean", "data/attack/" + entries[i].file},
           {"kind", kind_name(entries[i].kind)},
           {"granularity", granularity_name(kit.granularity)},
           {"anchors",
            kit.granularity == Granularity::untargeted
                ? "none"
                : (kit.granularity == Granularity::coarse
                       ? "coarse"
                       : (kit.matched ? "matched" : source_name(kit.forced)))},
           {"iters", out[i].iters},
           {"delta_inf", delta_inf}};
    if (out[i].has_loss) e["final_loss"] = out[i].final_loss;
    manifest.push_back(std::move(e));
  }
  write_text_file(dir + "/adv_manifest.json", manifest.dump(2) + "\n");
}

AttackConfig attack_config_of(const RunConfig& cfg, const DualEncoder& enc) {
  AttackConfig a;
  a.epsilon = cfg.epsilon;
  a.alpha = cfg.alpha;
  a.steps = cfg.steps;
  a.mu = cfg.mu;
  a.lambda = cfg.lambda;
  const int n = static_cast<int>(enc.cfg.blocks);
  a.layers = {n - 1, n};
  a.omega = {0.5, 0.5};
  a.clamp_each_step = cfg.clamp_each_step;
  return a;
}

}  // namespace

void stage_attack(RunContext& ctx) {
  const RunConfig& cfg = ctx.cfg();
  // The attack stage sees encoder, anchors, and images only; detector
  // checkpoints are unreachable while it runs.
  ctx.begin_stage("attack", {"models/head"});
  DualEncoder enc = read_encoder_file(ctx, ctx.path("models/encoder.fge"));
  freeze(enc);
  const PromptPack pack = prompts_for(ctx);
  LoadedSet atk = read_split(ctx, "attack");
  const AnchorKit kit =
      build_anchor_kit(enc, pack, cfg.granularity, cfg.anchor_source);
  attack_into(ctx, enc, kit, atk.entries, atk.images,
              attack_config_of(cfg, enc), "main");
  ctx.end_stage();
}

namespace {

std::vector<Tensor> read_adv_images(RunContext& ctx, const std::string& tag,
                                    const std::vector<CorpusEntry>& entries) {
  std::vector<Tensor> out;
  out.reserve(entries.size());
  for (const auto& e : entries)
    out.push_back(read_image(ctx, ctx.path("adv/" + tag + "/" + e.file)));
  return out;
}

double centroid_cos(const Tensor& z, std::size_t row, const Tensor& anchors) {
  const std::size_t d = z.shape[1];
  std::vector<double> c(d, 0.0);
  for (std::size_t a = 0; a < anchors.shape[0]; ++a)
    for (std::size_t j = 0; j < d; ++j) c[j] += anchors.data[a * d + j];
  double nc = 0, nz = 0, dot = 0;
  for (std::size_t j = 0; j < d; ++j) {
    c[j] /= static_cast<double>(anchors.shape[0]);
    nc += c[j] * c[j];
    const double v = z.data[row * d + j];
    nz += v * v;
    dot += v * c[j];
  }
  return dot / (std::sqrt(nc) * std::sqrt(nz));
}

std::string fmt_opt(const std::optional<double>& v) {
  if (!v) return "";
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.12g", *v);
  return buf;
}

std::string fmt_num(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.12g", v);
  return buf;
}

json cells_json(const PairAcc& clean, const PairAcc& adv) {
  auto opt_json = [](const std::optional<double>& v) {
    return v ? json(*v) : json(nullptr);
  };
  return json{{"clean", {{"real", clean.real}, {"fake", clean.fake}}},
              {"adv", {{"real", adv.real}, {"fake", adv.fake}}},
              {"r_delta",
               {{"real", opt_json(r_delta(adv.real, clean.real))},
                {"fake", opt_json(r_delta(adv.fake, clean.fake))}}}};
}

}  // namespace

void stage_evaluate(RunContext& ctx) {
  const RunConfig& cfg = ctx.cfg();
  ctx.begin_stage("evaluate");
  DualEncoder enc = read_encoder_file(ctx, ctx.path("models/encoder.fge"));
  HeadPair heads = read_heads(ctx);
  LoadedSet test = read_split(ctx, "test");
  LoadedSet atk = read_split(ctx, "attack");
  std::vector<Tensor> adv = read_adv_images(ctx, "main", atk.entries);

  ScoredSet s_test = score_images(enc, heads, test.images);
  ScoredSet s_clean = score_images(enc, heads, atk.images);
  ScoredSet s_adv = score_images(enc, heads, adv);
  const PairAcc t_lin = accuracy_percent(s_test.linear, test.entries);
  const PairAcc t_mlp = accuracy_percent(s_test.mlp2, test.entries);
  const PairAcc c_lin = accuracy_percent(s_clean.linear, atk.entries);
  const PairAcc c_mlp = accuracy_percent(s_clean.mlp2, atk.entries);
  const PairAcc a_lin = accuracy_percent(s_adv.linear, atk.entries);
  const PairAcc a_mlp = accuracy_percent(s_adv.mlp2, atk.entries);

  // budget audit over the written files
  double max_delta = 0.0, pix_min = 1.0, pix_max = 0.0;
  std::size_t violations = 0;
  for (std::size_t i = 0; i < adv.size(); ++i) {
    for (std::size_t p = 0; p < adv[i].numel(); ++p) {
      const double v = adv[i].data[p];
      const double d = std::abs(v - atk.images[i].data[p]);
      max_delta = std::max(max_delta, d);
      pix_min = std::min(pix_min, v);
      pix_max = std::max(pix_max, v);
      if (d > cfg.epsilon || v < 0.0 || v > 1.0) ++violations;
    }
  }

  // Embedding migration of the attacked fakes toward the real text anchors,
  // measured against the matched fine anchor centroids regardless of which
  // granularity produced the images.
  const PromptPack pack = prompts_for(ctx);
  const AnchorSet fg =
      build_anchor_set(enc, ForgerySource::global, Granularity::fine, pack);
  const AnchorSet fl =
      build_anchor_set(enc, ForgerySource::local, Granularity::fine, pack);
  const int layer = static_cast<int>(enc.cfg.blocks);
  const Tensor z_clean = embed_images(enc, ptrs_of(atk.images), layer);
  const Tensor z_adv = embed_images(enc, ptrs_of(adv), layer);
  double mr_clean = 0, mr_adv = 0, mf_clean = 0, mf_adv = 0;
  std::size_t n_fakes = 0;
  for (std::size_t i = 0; i < atk.entries.size(); ++i) {
    if (atk.entries[i].kind == SampleKind::real) continue;
    const AnchorSet& set =
        atk.entries[i].kind == SampleKind::fake_global ? fg : fl;
    mr_clean += centroid_cos(z_clean, i, set.real);
    mr_adv += centroid_cos(z_adv, i, set.real);
    mf_clean += centroid_cos(z_clean, i, set.fake);
    mf_adv += centroid_cos(z_adv, i, set.fake);
    ++n_fakes;
  }
  if (n_fakes) {
    mr_clean /= n_fakes;
    mr_adv /= n_fakes;
    mf_clean /= n_fakes;
    mf_adv /= n_fakes;
  }

  json report{
      {"config", json::parse(config_to_json(cfg))},
      {"seed", cfg.seed},
      {"test",
       {{"linear",
         {{"real", t_lin.real},
          {"fake", t_lin.fake},
          {"balanced", 0.5 * (t_lin.real + t_lin.fake)}}},
        {"mlp2",
         {{"real", t_mlp.real},
          {"fake", t_mlp.fake},
          {"balanced", 0.5 * (t_mlp.real + t_mlp.fake)}}}}},
      {"cells",
       {{"linear", cells_json(c_lin, a_lin)}, {"mlp2", cells_json(c_mlp, a_mlp)}}},
      {"budget",
       {{"epsilon", cfg.epsilon},
        {"max_delta_inf", max_delta},
        {"pixel_min", pix_min},
        {"pixel_max", pix_max},
        {"violations", violations}}},
      {"migration",
       {{"real_centroid_clean", mr_clean},
        {"real_centroid_adv", mr_adv},
        {"fake_centroid_clean", mf_clean},
        {"fake_centroid_adv", mf_adv},
        {"fakes", n_fakes}}}};
  write_text_file(ctx.path("reports/report.json"), report.dump(2) + "\n");

  std::ostringstream csv;
  csv << "head,subset,clean_acc,adv_acc,r_delta\n";
  const struct {
    const char* head;
    const char* subset;
    double clean, adv;
  } rows[] = {{"linear", "real", c_lin.real, a_lin.real},
              {"linear", "fake", c_lin.fake, a_lin.fake},
              {"mlp2", "real", c_mlp.real, a_mlp.real},
              {"mlp2", "fake", c_mlp.fake, a_mlp.fake}};
  for (const auto& r : rows)
    csv << r.head << "," << r.subset << "," << fmt_num(r.clean) << ","
        << fmt_num(r.adv) << "," << fmt_opt(r_delta(r.adv, r.clean)) << "\n";
  write_text_file(ctx.path("reports/metrics.csv"), csv.str());
  ctx.end_stage();
}

void stage_ablate(RunContext& ctx, const std::string& axis) {
  const RunConfig& cfg = ctx.cfg();
  if (axis != "granularity" && axis != "source_match")
    raise(ErrorCode::InvalidArg,
          "ablate axis must be granularity or source_match, got \"" + axis + "\"");
  ctx.begin_stage("ablate-" + axis);
  DualEncoder enc = read_encoder_file(ctx, ctx.path("models/encoder.fge"));
  freeze(enc);
  const PromptPack pack = prompts_for(ctx);
  LoadedSet atk = read_split(ctx, "attack");

  // fakes only; the tables compare fake detection accuracy
  std::vector<CorpusEntry> fakes;
  std::vector<Tensor> fake_imgs;
  for (std::size_t i = 0; i < atk.entries.size(); ++i)
    if (atk.entries[i].kind != SampleKind::real) {
      fakes.push_back(atk.entries[i]);
      fake_imgs.push_back(atk.images[i]);
    }
  const AttackConfig acfg = attack_config_of(cfg, enc);

  if (axis == "granularity") {
    for (const char* g : {"untargeted", "coarse", "fine"}) {
      const AnchorKit kit = build_anchor_kit(enc, pack, g, "matched");
      attack_into(ctx, enc, kit, fakes, fake_imgs, acfg,
                  std::string("abl_") + g);
    }
  } else {
    for (const char* a_src : {"global", "local"}) {
      const AnchorKit kit = build_anchor_kit(enc, pack, "fine", a_src);
      for (const char* f_src : {"global", "local"}) {
        const SampleKind want = std::string(f_src) == "global"
                                    ? SampleKind::fake_global
                                    : SampleKind::fake_local;
        std::vector<CorpusEntry> sub;
        std::vector<Tensor> sub_imgs;
        for (std::size_t i = 0; i < fakes.size(); ++i)
          if (fakes[i].kind == want) {
            sub.push_back(fakes[i]);
            sub_imgs.push_back(fake_imgs[i]);
          }
        attack_into(ctx, enc, kit, sub, sub_imgs, acfg,
                    std::string("abl_src_") + a_src + "_" + f_src);
      }
    }
  }

  // attacks done; detector heads may load now
  HeadPair heads = read_heads(ctx);
  auto fake_acc = [&](const std::vector<CorpusEntry>& entries,
                      const std::vector<Tensor>& imgs) {
    ScoredSet s = score_images(enc, heads, imgs);
    return std::pair<double, double>(accuracy_percent(s.linear, entries).fake,
                                     accuracy_percent(s.mlp2, entries).fake);
  };

  std::ostringstream csv;
  if (axis == "granularity") {
    const auto [base_lin, base_mlp] = fake_acc(fakes, fake_imgs);
    csv << "granularity,linear_fake_acc,mlp2_fake_acc,linear_r_delta,mlp2_r_delta\n";
    csv << "baseline," << fmt_num(base_lin) << "," << fmt_num(base_mlp) << ",,\n";
    for (const char* g : {"untargeted", "coarse", "fine"}) {
      std::vector<Tensor> adv = read_adv_images(ctx, std::string("abl_") + g, fakes);
      const auto [lin, mlp] = fake_acc(fakes, adv);
      csv << g << "," << fmt_num(lin) << "," << fmt_num(mlp) << ","
          << fmt_opt(r_delta(lin, base_lin)) << ","
          << fmt_opt(r_delta(mlp, base_mlp)) << "\n";
    }
    write_text_file(ctx.path("reports/ablate_granularity.csv"), csv.str());
  } else {
    csv << "anchors,fakes,linear_fake_acc,mlp2_fake_acc,linear_r_delta,mlp2_r_delta\n";
    for (const char* a_src : {"global", "local"})
      for (const char* f_src : {"global", "local"}) {
        const SampleKind want = std::string(f_src) == "global"
                                    ? SampleKind::fake_global
                                    : SampleKind::fake_local;
        std::vector<CorpusEntry> sub;
        std::vector<Tensor> sub_imgs;
        for (std::size_t i = 0; i < fakes.size(); ++i)
          if (fakes[i].kind == want) {
            sub.push_back(fakes[i]);
            sub_imgs.push_back(fake_imgs[i]);
          }
        const auto [base_lin, base_mlp] = fake_acc(sub, sub_imgs);
        std::vector<Tensor> adv = read_adv_images(
            ctx, std::string("abl_src_") + a_src + "_" + f_src, sub);
        const auto [lin, mlp] = fake_acc(sub, adv);
        csv << a_src << "," << f_src << "," << fmt_num(lin) << ","
            << fmt_num(mlp) << "," << fmt_opt(r_delta(lin, base_lin)) << ","
            << fmt_opt(r_delta(mlp, base_mlp)) << "\n";
      }
    write_text_file(ctx.path("reports/ablate_source_match.csv"), csv.str());
  }
  ctx.end_stage();
}

void stage_robustness(RunContext& ctx) {
  const RunConfig& cfg = ctx.cfg();
  ctx.begin_stage("robustness");
  DualEncoder enc = read_encoder_file(ctx, ctx.path("models/encoder.fge"));
  HeadPair heads = read_heads(ctx);
  LoadedSet atk = read_split(ctx, "attack");
  std::vector<Tensor> adv = read_adv_images(ctx, "main", atk.entries);

  std::ostringstream csv;
  csv << "distortion,param,linear_real_acc,linear_fake_acc,mlp2_real_acc,mlp2_fake_acc\n";
  auto emit = [&](const std::string& name, const std::string& param,
                  const std::vector<Tensor>& imgs) {
    ScoredSet s = score_images(enc, heads, imgs);
    const PairAcc lin = accuracy_percent(s.linear, atk.entries);
    const PairAcc mlp = accuracy_percent(s.mlp2, atk.entries);
    csv << name << "," << param << "," << fmt_num(lin.real) << ","
        << fmt_num(lin.fake) << "," << fmt_num(mlp.real) << ","
        << fmt_num(mlp.fake) << "\n";
  };
  emit("clean", "", atk.images);
  emit("adv", "", adv);
  // distortion at native resolution, then the standard predict path
  std::vector<Tensor> work(adv.size());
  for (const double sigma : cfg.robust_sigmas) {
    run_parallel(adv.size(),
                 [&](std::size_t i) { work[i] = gaussian_blur(adv[i], sigma); });
    emit("blur", fmt_num(sigma), work);
  }
  for (const int q : cfg.robust_qualities) {
    run_parallel(adv.size(),
                 [&](std::size_t i) { work[i] = jpeg_proxy(adv[i], q); });
    emit("jpeg", std::to_string(q), work);
  }
  write_text_file(ctx.path("reports/robustness.csv"), csv.str());
  ctx.end_stage();
}

void stage_export_features(RunContext& ctx) {
  ctx.begin_stage("export-features");
  DualEncoder enc = read_encoder_file(ctx, ctx.path("models/encoder.fge"));
  const PromptPack pack = prompts_for(ctx);
  LoadedSet atk = read_split(ctx, "attack");
  std::vector<Tensor> adv = read_adv_images(ctx, "main", atk.entries);
  const int layer = static_cast<int>(enc.cfg.blocks);
  const Tensor z_clean = embed_images(enc, ptrs_of(atk.images), layer);
  const Tensor z_adv = embed_images(enc, ptrs_of(adv), layer);

  const std::size_t n = z_clean.shape[0], d = z_clean.shape[1];
  Tensor all({2 * n, d});
  std::copy(z_clean.data.begin(), z_clean.data.end(), all.data.begin());
  std::copy(z_adv.data.begin(), z_adv.data.end(), all.data.begin() + n * d);
  PcaResult pca = pca_project(all, 2);

  std::vector<double> mean(d, 0.0);
  for (std::size_t i = 0; i < 2 * n; ++i)
    for (std::size_t j = 0; j < d; ++j) mean[j] += all.data[i * d + j];
  for (auto& m : mean) m /= static_cast<double>(2 * n);
  auto project_row = [&](const Tensor& t, std::size_t row, int comp) {
    double s = 0;
    for (std::size_t j = 0; j < d; ++j)
      s += (t.data[row * d + j] - mean[j]) * pca.components[comp * d + j];
    return s;
  };

  std::ostringstream csv;
  csv << "file,kind,variant,pc1,pc2\n";
  for (std::size_t i = 0; i < n; ++i)
    csv << atk.entries[i].file << "," << kind_name(atk.entries[i].kind)
        << ",clean," << fmt_num(pca.coords.data[i * 2]) << ","
        << fmt_num(pca.coords.data[i * 2 + 1]) << "\n";
  for (std::size_t i = 0; i < n; ++i)
    csv << atk.entries[i].file << "," << kind_name(atk.entries[i].kind)
        << ",adv," << fmt_num(pca.coords.data[(n + i) * 2]) << ","
        << fmt_num(pca.coords.data[(n + i) * 2 + 1]) << "\n";
  // text anchors through the same projection, for the figure legend
  for (const ForgerySource src : {ForgerySource::global, ForgerySource::local}) {
    const AnchorSet set = build_anchor_set(enc, src, Granularity::fine, pack);
    for (const auto* which : {"real", "fake"}) {
      const Tensor& rows = std::string(which) == "real" ? set.real : set.fake;
      for (std::size_t r = 0; r < rows.shape[0]; ++r)
        csv << "anchor," << which << "_" << source_name(src) << ",anchor,"
            << fmt_num(project_row(rows, r, 0)) << ","
            << fmt_num(project_row(rows, r, 1)) << "\n";
    }
  }
  write_text_file(ctx.path("reports/features_pca.csv"), csv.str());
  ctx.end_stage();
}

void run_pipeline(RunContext& ctx) {
  const struct {
    const char* name;
    std::function<void()> fn;
  } stages[] = {
      {"gen-data", [&] { stage_gen_data(ctx); }},
      {"train-backbone", [&] { stage_train_backbone(ctx); }},
      {"train-detectors", [&] { stage_train_detectors(ctx); }},
      {"attack", [&] { stage_attack(ctx); }},
      {"evaluate", [&] { stage_evaluate(ctx); }},
      {"ablate-granularity", [&] { stage_ablate(ctx, "granularity"); }},
      {"ablate-source-match", [&] { stage_ablate(ctx, "source_match"); }},
      {"robustness", [&] { stage_robustness(ctx); }},
      {"export-features", [&] { stage_export_features(ctx); }},
  };
  for (const auto& s : stages) {
    try {
      s.fn();
    } catch (const Error& e) {
      raise(ErrorCode::StageFailure,
            std::string("stage ") + s.name + " failed: " + e.what());
    }
  }
}

}  // namespace fge
