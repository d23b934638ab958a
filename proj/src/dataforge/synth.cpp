#include "dataforge/synth.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>

#include "json.hpp"

#include "common/prng.hpp"
#include "dataforge/ppm.hpp"

namespace fge {

namespace {

constexpr std::size_t kRes = 64;
constexpr double kGrainSigma = 0.03;
constexpr double kPasteBrightness = 0.08;

// Stream salts; every random decision draws from its own substream so a
// change in one stage cannot shift another stage's choices.
constexpr std::uint64_t kSaltContent = 0x11;
constexpr std::uint64_t kSaltGrain = 0x22;
constexpr std::uint64_t kSaltDonor = 0x33;
constexpr std::uint64_t kSaltCaption = 0x44;
constexpr std::uint64_t kSaltPaste = 0x55;

double clamp01(double v) { return v < 0.0 ? 0.0 : (v > 1.0 ? 1.0 : v); }

struct Shape {
  bool ellipse = true;
  double cx = 0, cy = 0, rx = 0, ry = 0;
  double col[3] = {0, 0, 0};
};

struct ContentSpec {
  double bg[4][3];  // corner colors, row-major: tl, tr, bl, br
  std::vector<Shape> shapes;
};

ContentSpec content_spec(std::uint64_t seed) {
  Rng rng(mix_seed(seed, kSaltContent));
  ContentSpec s;
  for (auto& corner : s.bg)
    for (auto& c : corner) c = rng.uniform(0.25, 0.75);
  const int n = rng.range(1, 3);
  for (int i = 0; i < n; ++i) {
    Shape sh;
    sh.ellipse = rng.uniform() < 0.5;
    sh.cx = rng.uniform(12.0, 52.0);
    sh.cy = rng.uniform(12.0, 52.0);
    sh.rx = rng.uniform(8.0, 20.0);
    sh.ry = rng.uniform(8.0, 20.0);
    for (auto& c : sh.col) c = rng.uniform(0.15, 0.85);
    s.shapes.push_back(sh);
  }
  return s;
}

Tensor render_content(const ContentSpec& s) {
  Tensor img({kRes, kRes, 3});
  for (std::size_t y = 0; y < kRes; ++y) {
    const double t = static_cast<double>(y) / (kRes - 1);
    for (std::size_t x = 0; x < kRes; ++x) {
      const double u = static_cast<double>(x) / (kRes - 1);
      for (std::size_t c = 0; c < 3; ++c)
        img.data[(y * kRes + x) * 3 + c] =
            (1 - t) * ((1 - u) * s.bg[0][c] + u * s.bg[1][c]) +
            t * ((1 - u) * s.bg[2][c] + u * s.bg[3][c]);
    }
  }
  for (const Shape& sh : s.shapes)
    for (std::size_t y = 0; y < kRes; ++y)
      for (std::size_t x = 0; x < kRes; ++x) {
        const double dx = (static_cast<double>(x) - sh.cx) / sh.rx;
        const double dy = (static_cast<double>(y) - sh.cy) / sh.ry;
        const bool inside = sh.ellipse ? (dx * dx + dy * dy <= 1.0)
                                       : (std::abs(dx) <= 1.0 && std::abs(dy) <= 1.0);
        if (inside)
          for (std::size_t c = 0; c < 3; ++c)
            img.data[(y * kRes + x) * 3 + c] = sh.col[c];
      }
  return img;
}

void add_grain(Tensor& img, std::uint64_t seed) {
  Rng rng(mix_seed(seed, kSaltGrain));
  for (auto& v : img.data) v = clamp01(v + rng.gauss(0.0, kGrainSigma));
}

std::size_t mirror101(long i, long n) {
  while (i < 0 || i >= n) {
    if (i < 0) i = -i;
    if (i >= n) i = 2 * n - 2 - i;
  }
  return static_cast<std::size_t>(i);
}

// One separable pass of the 5-tap binomial kernel with mirror padding.
void binomial5(Tensor& img) {
  static const double k[5] = {1.0 / 16, 4.0 / 16, 6.0 / 16, 4.0 / 16, 1.0 / 16};
  const long h = static_cast<long>(img.shape[0]);
  const long w = static_cast<long>(img.shape[1]);
  Tensor tmp({img.shape[0], img.shape[1], 3});
  for (long y = 0; y < h; ++y)
    for (long x = 0; x < w; ++x)
      for (std::size_t c = 0; c < 3; ++c) {
        double acc = 0.0;
        for (long d = -2; d <= 2; ++d)
          acc += k[d + 2] * img.data[(y * w + mirror101(x + d, w)) * 3 + c];
        tmp.data[(y * w + x) * 3 + c] = acc;
      }
  for (long y = 0; y < h; ++y)
    for (long x = 0; x < w; ++x)
      for (std::size_t c = 0; c < 3; ++c) {
        double acc = 0.0;
        for (long d = -2; d <= 2; ++d)
          acc += k[d + 2] * tmp.data[(mirror101(y + d, h) * w + x) * 3 + c];
        img.data[(y * w + x) * 3 + c] = acc;
      }
}

void quantize_levels(Tensor& img, int levels) {
  const double steps = static_cast<double>(levels - 1);
  for (auto& v : img.data) v = std::round(v * steps) / steps;
}

Tensor real_image(std::uint64_t seed) {
  Tensor img = render_content(content_spec(seed));
  add_grain(img, seed);
  return img;
}

// ---- captions --------------------------------------------------------------

const char* kCountWords[] = {"one", "two", "three"};

const char* color_name(const double* col) {
  struct Proto {
    const char* name;
    double rgb[3];
  };
  static const Proto protos[] = {
      {"red", {0.80, 0.20, 0.20}},    {"green", {0.20, 0.70, 0.25}},
      {"blue", {0.20, 0.30, 0.80}},   {"yellow", {0.85, 0.80, 0.20}},
      {"orange", {0.85, 0.55, 0.20}}, {"purple", {0.60, 0.25, 0.70}},
      {"teal", {0.20, 0.65, 0.65}},   {"gray", {0.50, 0.50, 0.50}},
  };
  const Proto* best = protos;
  double best_d = 1e300;
  for (const auto& p : protos) {
    double d = 0.0;
    for (int c = 0; c < 3; ++c) {
      const double dd = col[c] - p.rgb[c];
      d += dd * dd;
    }
    if (d < best_d) {
      best_d = d;
      best = &p;
    }
  }
  return best->name;
}

const char* tone_word(const ContentSpec& s) {
  double mean = 0.0;
  for (const auto& corner : s.bg)
    for (double c : corner) mean += c;
  mean /= 12.0;
  if (mean < 0.45) return "dark";
  if (mean < 0.55) return "muted";
  return "pale";
}

const std::vector<std::string>& phrase_pool(SampleKind kind) {
  static const std::vector<std::string> real_pool = {
      "natural iso noise and film grain",
      "organic textures and seamless blending",
      "a real camera sensor look",
      "consistent depth and focus",
      "unedited straight out of camera",
      "a genuine real world scene",
  };
  static const std::vector<std::string> global_pool = {
      "waxy skin and artificial textures",
      "generated by artificial intelligence",
      "smooth computer generated imagery",
      "a fully synthetic ai artwork look",
      "a fake diffusion style rendering",
  };
  static const std::vector<std::string> local_pool = {
      "cut and paste objects and hard edges",
      "unnatural boundaries around pasted elements",
      "digitally manipulated regions edited in photoshop",
      "a composite collage of combined photos",
      "a fake pasted patch with odd brightness",
  };
  switch (kind) {
    case SampleKind::real: return real_pool;
    case SampleKind::fake_global: return global_pool;
    case SampleKind::fake_local: return local_pool;
  }
  return real_pool;
}

const char* noun_for(SampleKind kind, Rng& rng) {
  switch (kind) {
    case SampleKind::real:
      return rng.uniform() < 0.5 ? "photograph" : "photo";
    case SampleKind::fake_global:
      return rng.uniform() < 0.5 ? "image" : "rendering";
    case SampleKind::fake_local:
      return rng.uniform() < 0.5 ? "picture" : "composite picture";
  }
  return "photo";
}

}  // namespace

const char* kind_name(SampleKind k) {
  switch (k) {
    case SampleKind::real: return "real";
    case SampleKind::fake_global: return "fake_global";
    case SampleKind::fake_local: return "fake_local";
  }
  return "real";
}

SampleKind kind_from_name(const std::string& name) {
  if (name == "real") return SampleKind::real;
  if (name == "fake_global") return SampleKind::fake_global;
  if (name == "fake_local") return SampleKind::fake_local;
  raise(ErrorCode::InvalidArg, "unknown sample kind '" + name + "'");
}

std::string caption_for(SampleKind kind, std::uint64_t seed) {
  const ContentSpec spec = content_spec(seed);
  Rng rng(mix_seed(seed ^ (static_cast<std::uint64_t>(kind) + 1) * 0x9e37ull,
                   kSaltCaption));
  const std::size_t n = spec.shapes.size();
  const Shape& first = spec.shapes.front();
  std::string shape_word = first.ellipse ? "ellipse" : "rectangle";
  if (n > 1) shape_word += "s";

  const auto& pool = phrase_pool(kind);
  const std::size_t p1 = rng.below(pool.size());
  std::size_t p2 = rng.below(pool.size() - 1);
  if (p2 >= p1) ++p2;

  std::string cap = "a ";
  cap += noun_for(kind, rng);
  cap += " of ";
  cap += kCountWords[n - 1];
  cap += " ";
  cap += color_name(first.col);
  cap += " ";
  cap += shape_word;
  cap += " on a ";
  cap += tone_word(spec);
  cap += " background with ";
  cap += pool[p1];
  cap += " and ";
  cap += pool[p2];
  return cap;
}

SynthSample generate_sample(SampleKind kind, std::uint64_t seed) {
  SynthSample s;
  s.kind = kind;
  s.seed = seed;
  switch (kind) {
    case SampleKind::real:
      s.image = real_image(seed);
      break;
    case SampleKind::fake_global: {
      s.image = render_content(content_spec(seed));
      binomial5(s.image);
      binomial5(s.image);
      quantize_levels(s.image, 32);
      break;
    }
    case SampleKind::fake_local: {
      s.image = real_image(seed);
      const Tensor donor = real_image(mix_seed(seed, kSaltDonor));
      Rng rng(mix_seed(seed, kSaltPaste));
      const std::size_t pw = static_cast<std::size_t>(rng.range(16, 24));
      const std::size_t ph = static_cast<std::size_t>(rng.range(16, 24));
      const std::size_t sx = rng.below(kRes - pw + 1);
      const std::size_t sy = rng.below(kRes - ph + 1);
      const std::size_t dx = rng.below(kRes - pw + 1);
      const std::size_t dy = rng.below(kRes - ph + 1);
      for (std::size_t y = 0; y < ph; ++y)
        for (std::size_t x = 0; x < pw; ++x)
          for (std::size_t c = 0; c < 3; ++c)
            s.image.data[((dy + y) * kRes + dx + x) * 3 + c] = clamp01(
                donor.data[((sy + y) * kRes + sx + x) * 3 + c] +
                kPasteBrightness);
      s.paste = {dx, dy, pw, ph};
      break;
    }
  }
  s.caption = caption_for(kind, seed);
  return s;
}

double mean_abs_laplacian(const Tensor& img) {
  if (img.rank() != 3)
    raise(ErrorCode::ShapeMismatch,
          "mean_abs_laplacian expects an H,W,C image");
  const std::size_t h = img.shape[0], w = img.shape[1], ch = img.shape[2];
  double acc = 0.0;
  std::size_t count = 0;
  for (std::size_t y = 1; y + 1 < h; ++y)
    for (std::size_t x = 1; x + 1 < w; ++x)
      for (std::size_t c = 0; c < ch; ++c) {
        const double lap = img.data[((y - 1) * w + x) * ch + c] +
                           img.data[((y + 1) * w + x) * ch + c] +
                           img.data[(y * w + x - 1) * ch + c] +
                           img.data[(y * w + x + 1) * ch + c] -
                           4.0 * img.data[(y * w + x) * ch + c];
        acc += std::abs(lap);
        ++count;
      }
  return acc / static_cast<double>(count);
}

SampleSet generate_corpus(std::size_t n_per_class, const std::string& split,
                          std::uint64_t master_seed) {
  if (split != "train" && split != "test")
    raise(ErrorCode::InvalidArg, "generate_corpus: split must be train or test");
  if (n_per_class == 0)
    raise(ErrorCode::InvalidArg, "generate_corpus: empty class requested");
  SampleSet set;
  set.split = split;
  set.per_class = n_per_class;
  const std::uint64_t base =
      master_seed + (split == "test" ? (1ull << 40) : 0ull);
  const SampleKind kinds[] = {SampleKind::real, SampleKind::fake_global,
                              SampleKind::fake_local};
  // The three kinds at index i share one scene seed, so every scene exists
  // as a real/global/local triple whose captions differ only in authenticity
  // vocabulary. Contrastive batches then cannot rank captions by scene
  // content alone.
  for (std::size_t k = 0; k < 3; ++k)
    for (std::size_t i = 0; i < n_per_class; ++i)
      set.samples.push_back(generate_sample(kinds[k], base + i));
  return set;
}

std::string write_corpus(const SampleSet& set, const std::string& dir) {
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) raise(ErrorCode::Io, "write_corpus: cannot create " + dir);
  const std::string manifest_path = dir + "/" + set.split + "_manifest.jsonl";
  std::ofstream mf(manifest_path);
  if (!mf) raise(ErrorCode::Io, "write_corpus: cannot open " + manifest_path);
  char idxbuf[16];
  for (std::size_t i = 0; i < set.samples.size(); ++i) {
    const SynthSample& s = set.samples[i];
    std::snprintf(idxbuf, sizeof idxbuf, "%06zu", i);
    const std::string file =
        set.split + "_" + idxbuf + "_" + kind_name(s.kind) + ".ppm";
    save_ppm(s.image, dir + "/" + file);
    nlohmann::json j{{"file", file},
                     {"kind", kind_name(s.kind)},
                     {"seed", s.seed},
                     {"caption", s.caption}};
    if (s.kind == SampleKind::fake_local)
      j["paste"] = {s.paste.x, s.paste.y, s.paste.w, s.paste.h};
    mf << j.dump() << "\n";
  }
  if (!mf) raise(ErrorCode::Io, "write_corpus: short write to " + manifest_path);
  return manifest_path;
}

std::vector<CorpusEntry> load_manifest(const std::string& manifest_path) {
  std::ifstream in(manifest_path);
  if (!in) raise(ErrorCode::Io, "load_manifest: cannot open " + manifest_path);
  std::vector<CorpusEntry> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    nlohmann::json j = nlohmann::json::parse(line, nullptr, false);
    if (j.is_discarded() || !j.is_object())
      raise(ErrorCode::Io, "load_manifest: bad json at " + manifest_path + ":" +
                               std::to_string(lineno));
    try {
      CorpusEntry e;
      e.file = j.at("file").get<std::string>();
      e.kind = kind_from_name(j.at("kind").get<std::string>());
      e.seed = j.at("seed").get<std::uint64_t>();
      e.caption = j.at("caption").get<std::string>();
      if (j.contains("paste")) {
        e.paste.x = j["paste"][0].get<std::size_t>();
        e.paste.y = j["paste"][1].get<std::size_t>();
        e.paste.w = j["paste"][2].get<std::size_t>();
        e.paste.h = j["paste"][3].get<std::size_t>();
      }
      out.push_back(std::move(e));
    } catch (const nlohmann::json::exception& ex) {
      raise(ErrorCode::Io, "load_manifest: missing field at " + manifest_path +
                               ":" + std::to_string(lineno) + " (" + ex.what() +
                               ")");
    }
  }
  return out;
}

}  // namespace fge
