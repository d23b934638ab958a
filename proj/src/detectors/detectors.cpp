#include "detectors/detectors.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>

#include "common/binio.hpp"
#include "common/prng.hpp"
#include "eraser/eraser.hpp"

namespace fge {

namespace {

constexpr std::uint64_t kSaltHeadInit = 0xB1;
constexpr std::uint64_t kSaltHeadShuffle = 0xB2;
constexpr std::size_t kHiddenUnits = 16;
constexpr double kHeadInitStd = 0.1;

double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

}  // namespace

const char* head_arch_name(HeadArch a) {
  return a == HeadArch::linear ? "linear" : "mlp2";
}

HeadArch head_arch_from_name(const std::string& name) {
  if (name == "linear") return HeadArch::linear;
  if (name == "mlp2") return HeadArch::mlp2;
  raise(ErrorCode::InvalidArg, "unknown head architecture '" + name + "'");
}

std::vector<TensorPtr> DetectorHead::param_ptrs() const {
  std::vector<TensorPtr> out = {w1, b1};
  if (arch == HeadArch::mlp2) {
    out.push_back(w2);
    out.push_back(b2);
  }
  return out;
}

double label_of(SampleKind kind) {
  return kind == SampleKind::real ? 0.0 : 1.0;
}

Tensor embed_images(const DualEncoder& enc,
                    const std::vector<const Tensor*>& images, int layer,
                    std::size_t batch) {
  if (images.empty())
    raise(ErrorCode::InvalidArg, "embed_images: no images given");
  if (batch == 0) raise(ErrorCode::InvalidArg, "embed_images: zero batch");
  const std::size_t np = enc.cfg.tokens_per_image();
  const std::size_t pd = enc.cfg.patch_dim();
  Tensor out({images.size(), enc.cfg.embed_dim});

  for (std::size_t start = 0; start < images.size(); start += batch) {
    const std::size_t b = std::min(batch, images.size() - start);
    Tensor patches({b * np, pd});
    for (std::size_t i = 0; i < b; ++i) {
      Tape prep;
      auto node = prep.leaf(resample_plain(*images[start + i]), false);
      TensorPtr tok = image_tokens(prep, enc, node);
      std::copy(tok->data.begin(), tok->data.end(),
                patches.data.begin() + static_cast<long>(i * np * pd));
    }
    Tape t;
    auto x = t.leaf(std::move(patches), false);
    TensorPtr z = encode_image_layers(t, enc, x, b, {layer}).at(layer);
    std::copy(z->data.begin(), z->data.end(),
              out.data.begin() +
                  static_cast<long>(start * enc.cfg.embed_dim));
  }
  return out;
}

HeadTrainResult train_head(const Tensor& embeddings,
                           const std::vector<double>& labels, HeadArch arch,
                           int layer, const HeadTrainConfig& cfg) {
  if (embeddings.rank() != 2)
    raise(ErrorCode::ShapeMismatch, "train_head: embeddings must be {n,d}");
  const std::size_t n = embeddings.rows(), d = embeddings.cols();
  if (n == 0) raise(ErrorCode::InvalidArg, "train_head: empty embedding set");
  if (labels.size() != n)
    raise(ErrorCode::ShapeMismatch,
          "train_head: " + std::to_string(labels.size()) + " labels for " +
              std::to_string(n) + " rows");
  if (cfg.steps == 0) raise(ErrorCode::InvalidArg, "train_head: zero steps");

  Rng init_rng(mix_seed(cfg.seed, kSaltHeadInit));
  DetectorHead head;
  head.arch = arch;
  head.layer = layer;
  head.embed_dim = d;
  if (arch == HeadArch::linear) {
    head.w1 = make_tensor(Tensor({d, 1}));
    head.b1 = make_tensor(Tensor({1}));
  } else {
    Tensor w1({d, kHiddenUnits});
    for (auto& v : w1.data) v = init_rng.gauss(0.0, kHeadInitStd);
    Tensor w2({kHiddenUnits, 1});
    for (auto& v : w2.data) v = init_rng.gauss(0.0, kHeadInitStd);
    head.w1 = make_tensor(std::move(w1));
    head.b1 = make_tensor(Tensor({kHiddenUnits}));
    head.w2 = make_tensor(std::move(w2));
    head.b2 = make_tensor(Tensor({1}));
  }
  std::vector<TensorPtr> params = head.param_ptrs();
  for (auto& p : params) p->requires_grad = true;
  std::vector<AdamState> states(params.size());
  AdamConfig acfg;
  acfg.lr = cfg.lr;

  const std::size_t bsz = std::min(cfg.batch, n);
  Rng shuffle_rng(mix_seed(cfg.seed, kSaltHeadShuffle));
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  std::size_t cursor = n;

  HeadTrainResult result;
  result.loss_history.reserve(cfg.steps);
  for (std::size_t step = 0; step < cfg.steps; ++step) {
    if (cursor + bsz > n) {
      shuffle_rng.shuffle(order.data(), n);
      cursor = 0;
    }
    Tensor batch({bsz, d});
    std::vector<double> y(bsz);
    for (std::size_t i = 0; i < bsz; ++i) {
      const std::size_t src = order[cursor + i];
      std::copy(embeddings.data.begin() + static_cast<long>(src * d),
                embeddings.data.begin() + static_cast<long>((src + 1) * d),
                batch.data.begin() + static_cast<long>(i * d));
      y[i] = labels[src];
    }
    cursor += bsz;

    Tape t;
    auto x = t.leaf(std::move(batch), false);
    TensorPtr logits;
    if (arch == HeadArch::linear) {
      logits = t.add_rowvec(t.matmul(x, head.w1), head.b1);
    } else {
      auto h = t.tanh(t.add_rowvec(t.matmul(x, head.w1), head.b1));
      logits = t.add_rowvec(t.matmul(h, head.w2), head.b2);
    }
    auto loss = t.bce_with_logits(logits, y);
    for (auto& p : params) p->zero_grad();
    t.backward(loss);
    adam_step(params, states, acfg);
    result.loss_history.push_back(loss->data[0]);
  }

  result.head = std::move(head);
  return result;
}

std::vector<double> head_scores(const DetectorHead& head,
                                const Tensor& embeddings) {
  if (embeddings.rank() != 2)
    raise(ErrorCode::ShapeMismatch, "head_scores: embeddings must be {n,d}");
  if (embeddings.cols() != head.embed_dim)
    raise(ErrorCode::DimMismatch,
          "head_scores: embedding width " +
              std::to_string(embeddings.cols()) + " vs head width " +
              std::to_string(head.embed_dim));
  Tape t;
  auto x = t.leaf(embeddings, false);
  TensorPtr logits;
  if (head.arch == HeadArch::linear) {
    logits = t.add_rowvec(t.matmul(x, head.w1), head.b1);
  } else {
    auto h = t.tanh(t.add_rowvec(t.matmul(x, head.w1), head.b1));
    logits = t.add_rowvec(t.matmul(h, head.w2), head.b2);
  }
  std::vector<double> out(embeddings.rows());
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = sigmoid(logits->data[i]);
  return out;
}

void save_head(const DetectorHead& head, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) raise(ErrorCode::Io, "save_head: cannot open " + path);
  binio::write_header(out, binio::kKindDetector);
  Tensor meta({3});
  meta.data[0] = head.arch == HeadArch::linear ? 1.0 : 2.0;
  meta.data[1] = static_cast<double>(head.layer);
  meta.data[2] = static_cast<double>(head.embed_dim);
  binio::write_record(out, "meta", meta);
  binio::write_record(out, "w1", *head.w1);
  binio::write_record(out, "b1", *head.b1);
  if (head.arch == HeadArch::mlp2) {
    binio::write_record(out, "w2", *head.w2);
    binio::write_record(out, "b2", *head.b2);
  }
  if (!out) raise(ErrorCode::Io, "save_head: write failed for " + path);
}

DetectorHead load_head(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) raise(ErrorCode::Io, "load_head: cannot open " + path);

  const std::uint32_t kind = binio::read_header(in, path);
  if (kind != binio::kKindDetector)
    raise(ErrorCode::MalformedHeader,
          path + " holds payload kind " + std::to_string(kind) +
              ", not a detector head");

  std::map<std::string, Tensor> records;
  std::string name;
  Tensor value;
  while (binio::read_record(in, path, name, value))
    records.emplace(name, std::move(value));

  auto take = [&](const char* key) {
    auto it = records.find(key);
    if (it == records.end())
      raise(ErrorCode::MalformedHeader, path + ": missing record " + key);
    return std::move(it->second);
  };

  Tensor meta = take("meta");
  if (meta.numel() != 3)
    raise(ErrorCode::MalformedHeader, path + ": bad meta record");
  DetectorHead head;
  const int arch_code = static_cast<int>(meta.data[0]);
  if (arch_code != 1 && arch_code != 2)
    raise(ErrorCode::MalformedHeader, path + ": unknown head architecture");
  head.arch = arch_code == 1 ? HeadArch::linear : HeadArch::mlp2;
  head.layer = static_cast<int>(meta.data[1]);
  head.embed_dim = static_cast<std::size_t>(meta.data[2]);

  const std::size_t d = head.embed_dim;
  auto expect = [&](Tensor t, std::vector<std::size_t> shape,
                    const char* key) {
    if (t.shape != shape)
      raise(ErrorCode::MalformedHeader,
            path + ": record " + key + " has shape " + shape_str(t.shape));
    return make_tensor(std::move(t));
  };
  head.w1 = expect(take("w1"),
                   {d, head.arch == HeadArch::linear ? 1 : kHiddenUnits},
                   "w1");
  head.b1 = expect(take("b1"),
                   {head.arch == HeadArch::linear ? 1 : kHiddenUnits}, "b1");
  if (head.arch == HeadArch::mlp2) {
    head.w2 = expect(take("w2"), {kHiddenUnits, 1}, "w2");
    head.b2 = expect(take("b2"), {1}, "b2");
  }
  return head;
}

}  // namespace fge
