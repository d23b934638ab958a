#include "encoder/train.hpp"

#include <algorithm>
#include <map>

#include "eraser/eraser.hpp"

namespace fge {

namespace {

constexpr std::uint64_t kSaltInit = 0xA1;
constexpr std::uint64_t kSaltShuffle = 0xA2;
constexpr std::uint64_t kSaltJitter = 0xA3;

// Per-sample jitter applied at encoder resolution each time an image enters a
// batch. The corpus is small enough to memorize over ~2000 steps; without
// this the embeddings stop transferring to held-out scenes. Shifts stay
// within two pixels so the coarse position words in captions remain true.
Tensor jitter(const Tensor& img, Rng& rng) {
  const long h = static_cast<long>(img.shape[0]);
  const long w = static_cast<long>(img.shape[1]);
  const long c = static_cast<long>(img.shape[2]);
  const long dy = rng.range(-2, 2);
  const long dx = rng.range(-2, 2);
  const double contrast = rng.uniform(0.9, 1.1);
  const double bias = rng.uniform(-0.04, 0.04);
  double gain[3] = {1.0, 1.0, 1.0};
  for (long k = 0; k < std::min<long>(c, 3); ++k) gain[k] = rng.uniform(0.92, 1.08);
  const double sigma = rng.uniform(0.0, 0.02);

  auto reflect = [](long i, long n) {
    while (i < 0 || i >= n) {
      if (i < 0) i = -1 - i;
      if (i >= n) i = 2 * n - 1 - i;
    }
    return i;
  };
  Tensor out = Tensor::uninit(img.shape);
  for (long y = 0; y < h; ++y) {
    const long sy = reflect(y + dy, h);
    for (long x = 0; x < w; ++x) {
      const long sx = reflect(x + dx, w);
      for (long k = 0; k < c; ++k) {
        double v = img.data[(sy * w + sx) * c + k];
        v = (v * gain[k % 3] - 0.5) * contrast + 0.5 + bias + sigma * rng.gauss();
        out.data[(y * w + x) * c + k] = std::min(1.0, std::max(0.0, v));
      }
    }
  }
  return out;
}

// The log-temperature walks freely except out of numeric danger; the bounds
// keep the temperature within (0.01, ~900).
constexpr double kLogTempLo = -4.6;
constexpr double kLogTempHi = 6.8;

}  // namespace

TrainResult train_contrastive(const SampleSet& corpus,
                              const std::vector<std::string>& extra_vocab_texts,
                              const EncoderConfig& enc_cfg,
                              const TrainConfig& cfg) {
  const std::size_t n = corpus.samples.size();
  if (cfg.batch < 2)
    raise(ErrorCode::BatchTooSmall, "train_contrastive: batch below 2");
  if (n < cfg.batch)
    raise(ErrorCode::BatchTooSmall,
          "train_contrastive: corpus of " + std::to_string(n) +
              " cannot fill a batch of " + std::to_string(cfg.batch));

  std::vector<std::string> texts;
  texts.reserve(n + extra_vocab_texts.size());
  for (const auto& s : corpus.samples) texts.push_back(s.caption);
  texts.insert(texts.end(), extra_vocab_texts.begin(),
               extra_vocab_texts.end());

  DualEncoder enc = make_encoder(enc_cfg, build_vocabulary(texts),
                                 mix_seed(cfg.seed, kSaltInit));

  // Images pass through the native-to-encoder resample exactly once; the
  // per-batch jitter then works on the small grid, which keeps it cheap.
  const std::size_t np = enc_cfg.tokens_per_image();
  const std::size_t pd = enc_cfg.patch_dim();
  std::vector<Tensor> resampled;
  std::vector<std::vector<std::size_t>> captions;
  resampled.reserve(n);
  captions.reserve(n);
  for (const auto& s : corpus.samples) {
    resampled.push_back(resample_plain(s.image));
    captions.push_back(encode_tokens(enc.vocab, s.caption));
  }

  std::vector<TensorPtr> params = enc.param_ptrs();
  std::vector<AdamState> states(params.size());
  AdamConfig acfg;
  acfg.lr = cfg.lr;
  TensorPtr log_temp = enc.param("log_temp");

  Rng shuffle_rng(mix_seed(cfg.seed, kSaltShuffle));
  Rng jitter_rng(mix_seed(cfg.seed, kSaltJitter));

  // Samples sharing a scene seed stay adjacent in the epoch order, so most
  // batches hold whole real/global/local triples. Ranking a caption against
  // its siblings' is what pushes the authenticity vocabulary into the image
  // features; scene words cancel within a triple.
  std::map<std::uint64_t, std::vector<std::size_t>> by_scene;
  for (std::size_t i = 0; i < n; ++i)
    by_scene[corpus.samples[i].seed].push_back(i);
  std::vector<std::vector<std::size_t>> groups;
  groups.reserve(by_scene.size());
  for (auto& [seed, members] : by_scene) groups.push_back(std::move(members));

  std::vector<std::size_t> order;
  order.reserve(n);
  auto reshuffle = [&] {
    shuffle_rng.shuffle(groups.data(), groups.size());
    order.clear();
    for (auto& g : groups) {
      shuffle_rng.shuffle(g.data(), g.size());
      order.insert(order.end(), g.begin(), g.end());
    }
  };
  std::size_t cursor = n;  // forces a shuffle before the first batch

  TrainResult result;
  result.loss_history.reserve(cfg.steps);
  const int final_layer = static_cast<int>(enc_cfg.blocks);

  for (std::size_t step = 0; step < cfg.steps; ++step) {
    if (cursor + cfg.batch > n) {
      reshuffle();
      cursor = 0;
    }

    Tensor patches({cfg.batch * np, pd});
    std::vector<std::vector<std::size_t>> ids(cfg.batch);
    for (std::size_t b = 0; b < cfg.batch; ++b) {
      const std::size_t src = order[cursor + b];
      Tape prep;
      auto node = prep.leaf(jitter(resampled[src], jitter_rng), false);
      TensorPtr tok = image_tokens(prep, enc, node);
      std::copy(tok->data.begin(), tok->data.end(),
                patches.data.begin() + static_cast<long>(b * np * pd));
      ids[b] = captions[src];
    }
    cursor += cfg.batch;

    Tape t;
    auto pnode = t.leaf(std::move(patches), false);
    auto zimg =
        encode_image_layers(t, enc, pnode, cfg.batch, {final_layer});
    auto ztxt = encode_text_batch(t, enc, ids);
    auto loss = info_nce_loss(t, enc, zimg.at(final_layer), ztxt);

    enc.zero_grads();
    t.backward(loss);
    adam_step(params, states, acfg);
    double& lt = log_temp->data[0];
    lt = std::min(kLogTempHi, std::max(kLogTempLo, lt));

    result.loss_history.push_back(loss->data[0]);
  }

  result.encoder = std::move(enc);
  return result;
}

}  // namespace fge
