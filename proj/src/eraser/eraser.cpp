#include "eraser/eraser.hpp"

#include <cmath>
#include <fstream>

#include "common/prng.hpp"

namespace fge {

namespace {

constexpr std::size_t kNative = 64;
constexpr double kGradFloor = 1e-20;

void validate_native(const Tensor& img) {
  if (img.rank() != 3 || img.shape[0] != kNative || img.shape[1] != kNative ||
      img.shape[2] != 3)
    raise(ErrorCode::BadResolution,
          "expected a 64x64x3 native image, got " + shape_str(img.shape));
}

void validate_attack_config(const AttackConfig& cfg) {
  if (cfg.steps < 1)
    raise(ErrorCode::InvalidArg, "attack: steps must be at least 1");
  if (cfg.epsilon < 0.0)
    raise(ErrorCode::InvalidArg, "attack: negative budget");
  if (cfg.epsilon > 0.0) {
    if (cfg.alpha <= 0.0)
      raise(ErrorCode::InvalidArg, "attack: step size must be positive");
    if (cfg.alpha > cfg.epsilon + 1e-15)
      raise(ErrorCode::InvalidArg,
            "attack: step size exceeds the budget");
  }
  if (cfg.mu < 0.0 || cfg.mu > 1.0)
    raise(ErrorCode::InvalidArg, "attack: momentum decay outside [0,1]");
  if (cfg.lambda < 0.0)
    raise(ErrorCode::InvalidArg, "attack: negative push weight");
  if (cfg.layers.empty() || cfg.layers.size() != cfg.omega.size())
    raise(ErrorCode::LayerSetMismatch,
          "attack: layer and weight lists must align");
}

std::map<int, double> omega_map(const AttackConfig& cfg) {
  std::map<int, double> m;
  for (std::size_t i = 0; i < cfg.layers.size(); ++i) {
    if (m.count(cfg.layers[i]))
      raise(ErrorCode::LayerSetMismatch,
            "attack: duplicate layer " + std::to_string(cfg.layers[i]));
    m[cfg.layers[i]] = cfg.omega[i];
  }
  return m;
}

double sign_of(double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); }

Tensor clamp01_sum(const Tensor& x, const Tensor& delta) {
  Tensor out(x.shape);
  for (std::size_t i = 0; i < x.numel(); ++i) {
    double v = x.data[i] + delta.data[i];
    if (v < 0.0) v = 0.0;
    if (v > 1.0) v = 1.0;
    out.data[i] = v;
  }
  return out;
}

// One attack iteration's loss as a function of the current perturbation.
struct IterLoss {
  LossBreakdown breakdown;
  TensorPtr delta_node;
};

// Shared by both attack flavors; loss_fn receives the per-layer embeddings.
template <class LossFn>
AttackResult run_attack(const Tensor& image, const DualEncoder& enc,
                        const AttackConfig& cfg, LossFn&& loss_fn,
                        const Tensor* delta0 = nullptr) {
  validate_native(image);
  validate_attack_config(cfg);

  AttackResult res;
  if (cfg.epsilon == 0.0) {  // zero budget: the input passes through untouched
    res.image = image;
    for (auto& v : res.image.data) v = std::min(1.0, std::max(0.0, v));
    return res;
  }

  Tensor delta(image.shape);
  if (delta0) {
    delta = *delta0;
    for (std::size_t i = 0; i < delta.numel(); ++i) {
      double d = std::min(cfg.epsilon, std::max(-cfg.epsilon, delta.data[i]));
      if (cfg.clamp_each_step)
        d = std::min(1.0 - image.data[i], std::max(-image.data[i], d));
      delta.data[i] = d;
    }
  }
  std::vector<double> mom(image.numel(), 0.0);

  for (std::size_t it = 1; it <= cfg.steps; ++it) {
    Tape t;
    auto x_node = t.leaf(image, false);
    auto d_node = t.leaf(delta, true);
    auto adv = t.add(x_node, d_node);
    auto small = resample(t, adv);
    auto tokens = image_tokens(t, enc, small);
    auto zs = encode_image_layers(t, enc, tokens, 1, cfg.layers);
    LossBreakdown bd = loss_fn(t, zs);
    t.backward(bd.total);

    d_node->ensure_grad();
    double l1 = 0.0;
    for (double g : d_node->grad) l1 += std::abs(g);
    if (l1 < kGradFloor)
      raise(ErrorCode::ZeroGradient,
            "attack: guidance gradient vanished at iteration " +
                std::to_string(it));

    double grad_inf = 0.0, delta_inf = 0.0;
    for (std::size_t i = 0; i < delta.numel(); ++i) {
      mom[i] = cfg.mu * mom[i] + d_node->grad[i] / l1;
      grad_inf = std::max(grad_inf, std::abs(mom[i]));
      double d = delta.data[i] - cfg.alpha * sign_of(mom[i]);
      if (d > cfg.epsilon) d = cfg.epsilon;
      if (d < -cfg.epsilon) d = -cfg.epsilon;
      if (cfg.clamp_each_step) {
        const double lo = -image.data[i], hi = 1.0 - image.data[i];
        if (d < lo) d = lo;
        if (d > hi) d = hi;
      }
      delta.data[i] = d;
      delta_inf = std::max(delta_inf, std::abs(d));
    }

    StepRecord rec;
    rec.iter = it;
    rec.total = bd.total_value;
    rec.pull = bd.pull;
    rec.push = bd.push;
    rec.grad_inf = grad_inf;
    rec.delta_inf = delta_inf;
    res.trace.steps.push_back(std::move(rec));
  }

  res.image = clamp01_sum(image, delta);
  return res;
}

}  // namespace

TensorPtr resample(Tape& t, const TensorPtr& img) {
  validate_native(*img);
  static const Tensor kh({1, 4}, {1.0 / 8, 3.0 / 8, 3.0 / 8, 1.0 / 8});
  static const Tensor kv({4, 1}, {1.0 / 8, 3.0 / 8, 3.0 / 8, 1.0 / 8});
  auto blurred = t.depthwise_conv2d(t.depthwise_conv2d(img, kh, 0, 1), kv, 1, 0);
  return t.bilinear_resize(blurred, kNative / 2, kNative / 2);
}

Tensor resample_plain(const Tensor& img) {
  Tape t;
  return *resample(t, t.leaf(img, false));
}

LossBreakdown mmg_loss(Tape& t, const std::map<int, TensorPtr>& z_layers,
                       const AnchorSet& anchors, double lambda,
                       const std::map<int, double>& omega) {
  if (z_layers.empty())
    raise(ErrorCode::LayerSetMismatch, "mmg_loss: no layer embeddings");
  if (z_layers.size() != omega.size())
    raise(ErrorCode::LayerSetMismatch,
          "mmg_loss: weight table does not cover the captured layers");
  for (const auto& [l, w] : omega)
    if (!z_layers.count(l))
      raise(ErrorCode::LayerSetMismatch,
            "mmg_loss: weight given for uncaptured layer " + std::to_string(l));
  const std::size_t d = anchors.real.shape[1];
  if (anchors.fake.shape[1] != d)
    raise(ErrorCode::DimMismatch, "mmg_loss: anchor matrices disagree on dim");

  auto anchor_leaf = [&](const Tensor& mat, std::size_t row) {
    Tensor r({d});
    for (std::size_t j = 0; j < d; ++j) r.data[j] = mat.data[row * d + j];
    return t.leaf(std::move(r), false);
  };

  LossBreakdown bd;
  TensorPtr total;
  for (const auto& [l, z] : z_layers) {
    if (z->numel() != d)
      raise(ErrorCode::DimMismatch,
            "mmg_loss: embedding dim " + std::to_string(z->numel()) +
                " vs anchor dim " + std::to_string(d));
    TensorPtr cos_real;
    for (std::size_t r = 0; r < anchors.real.shape[0]; ++r) {
      auto c = t.cosine(z, anchor_leaf(anchors.real, r));
      cos_real = cos_real ? t.add(cos_real, c) : c;
    }
    TensorPtr cos_fake;
    for (std::size_t r = 0; r < anchors.fake.shape[0]; ++r) {
      auto c = t.cosine(z, anchor_leaf(anchors.fake, r));
      cos_fake = cos_fake ? t.add(cos_fake, c) : c;
    }
    auto pull = t.add_const(t.scale(cos_real, -1.0),
                            static_cast<double>(anchors.real.shape[0]));
    auto contrib =
        t.scale(t.add(pull, t.scale(cos_fake, lambda)), omega.at(l));
    bd.pull[l] = pull->data[0];
    bd.push[l] = cos_fake->data[0];
    total = total ? t.add(total, contrib) : contrib;
  }
  bd.total = total;
  bd.total_value = total->data[0];
  return bd;
}

AttackResult attack(const Tensor& image, const DualEncoder& enc,
                    const AnchorSet& anchors, const AttackConfig& cfg) {
  const std::map<int, double> omega = omega_map(cfg);
  return run_attack(image, enc, cfg,
                    [&](Tape& t, const std::map<int, TensorPtr>& zs) {
                      return mmg_loss(t, zs, anchors, cfg.lambda, omega);
                    });
}

AttackResult untargeted_attack(const Tensor& image, const DualEncoder& enc,
                               const AttackConfig& cfg) {
  validate_native(image);
  validate_attack_config(cfg);
  const std::map<int, double> omega = omega_map(cfg);

  // Freeze the clean embeddings once; the attack walks away from them.
  std::map<int, Tensor> clean;
  {
    Tape t;
    auto node = t.leaf(image, false);
    auto tokens = image_tokens(t, enc, resample(t, node));
    auto zs = encode_image_layers(t, enc, tokens, 1, cfg.layers);
    for (auto& [l, z] : zs) clean.emplace(l, *z);
  }

  // The objective peaks at the clean point itself, where its gradient
  // vanishes; a fixed sign pattern inside the budget starts the walk off
  // the summit without giving up determinism.
  Tensor d0(image.shape);
  Rng rng(0xf5eedull);
  for (auto& v : d0.data)
    v = (rng.uniform() < 0.5 ? -0.5 : 0.5) * cfg.epsilon;

  return run_attack(image, enc, cfg,
                    [&](Tape& t, const std::map<int, TensorPtr>& zs) {
                      LossBreakdown bd;
                      TensorPtr total;
                      for (const auto& [l, z] : zs) {
                        auto ref = t.leaf(clean.at(l), false);
                        auto c = t.cosine(z, ref);
                        auto contrib = t.scale(c, omega.at(l));
                        bd.pull[l] = c->data[0];
                        bd.push[l] = 0.0;
                        total = total ? t.add(total, contrib) : contrib;
                      }
                      bd.total = total;
                      bd.total_value = total->data[0];
                      return bd;
                    },
                    &d0);
}

void write_trace_csv(const AttackTrace& trace, const std::string& path) {
  std::ofstream out(path);
  if (!out) raise(ErrorCode::Io, "write_trace_csv: cannot open " + path);
  std::vector<int> layers;
  if (!trace.steps.empty())
    for (const auto& [l, v] : trace.steps.front().pull) layers.push_back(l);
  out << "iter,total";
  for (int l : layers) out << ",pull_" << l;
  for (int l : layers) out << ",push_" << l;
  out << ",grad_inf,delta_inf\n";
  char buf[64];
  auto emit = [&](double v) {
    std::snprintf(buf, sizeof buf, "%.17g", v);
    out << "," << buf;
  };
  for (const auto& s : trace.steps) {
    out << s.iter;
    std::snprintf(buf, sizeof buf, "%.17g", s.total);
    out << "," << buf;
    for (int l : layers) emit(s.pull.at(l));
    for (int l : layers) emit(s.push.at(l));
    emit(s.grad_inf);
    emit(s.delta_inf);
    out << "\n";
  }
  if (!out) raise(ErrorCode::Io, "write_trace_csv: short write to " + path);
}

}  // namespace fge
