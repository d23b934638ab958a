#include "encoder/model.hpp"

#include <algorithm>
#include <cmath>

namespace fge {

namespace {

constexpr double kInitStd = 0.02;
constexpr double kPosInitStd = 0.01;
const double kLogTempInit = std::log(0.07);

TensorPtr block_forward(Tape& t, const DualEncoder& e, const std::string& pfx,
                        TensorPtr x, std::size_t batch, std::size_t len,
                        const std::vector<std::size_t>& lens) {
  const EncoderConfig& c = e.cfg;
  auto a = t.layernorm(x, e.param(pfx + ".ln1.g"), e.param(pfx + ".ln1.b"),
                       c.ln_eps);
  auto qkv = t.linear(a, e.param(pfx + ".qkv.w"), e.param(pfx + ".qkv.b"));
  auto att = t.attention(qkv, batch, len, lens, c.heads);
  att = t.linear(att, e.param(pfx + ".out.w"), e.param(pfx + ".out.b"));
  x = t.add(x, att);
  auto m = t.layernorm(x, e.param(pfx + ".ln2.g"), e.param(pfx + ".ln2.b"),
                       c.ln_eps);
  m = t.gelu(t.linear(m, e.param(pfx + ".mlp.w1"), e.param(pfx + ".mlp.b1")));
  m = t.linear(m, e.param(pfx + ".mlp.w2"), e.param(pfx + ".mlp.b2"));
  return t.add(x, m);
}

}  // namespace

TensorPtr DualEncoder::param(const std::string& name) const {
  for (const auto& [n, p] : params)
    if (n == name) return p;
  raise(ErrorCode::Internal, "unknown parameter '" + name + "'");
}

std::vector<TensorPtr> DualEncoder::param_ptrs() const {
  std::vector<TensorPtr> out;
  out.reserve(params.size());
  for (const auto& [n, p] : params) out.push_back(p);
  return out;
}

void DualEncoder::zero_grads() const {
  for (const auto& [n, p] : params) p->zero_grad();
}

double DualEncoder::temperature() const {
  return std::exp(param("log_temp")->data[0]);
}

DualEncoder make_encoder(const EncoderConfig& cfg, Vocabulary vocab,
                         std::uint64_t seed) {
  if (cfg.patch == 0 || cfg.image_size % cfg.patch != 0)
    raise(ErrorCode::BadResolution,
          "make_encoder: image size " + std::to_string(cfg.image_size) +
              " does not tile with patch " + std::to_string(cfg.patch));
  if (cfg.heads == 0 || cfg.width % cfg.heads != 0)
    raise(ErrorCode::ShapeMismatch,
          "make_encoder: width must divide into heads");
  if (cfg.blocks < 1 || cfg.text_blocks < 1)
    raise(ErrorCode::ShapeMismatch, "make_encoder: zero-depth tower");
  if (vocab.size() < 2)
    raise(ErrorCode::ShapeMismatch, "make_encoder: vocabulary lacks specials");

  DualEncoder e;
  e.cfg = cfg;
  e.vocab = std::move(vocab);
  Rng rng(seed);

  auto reg = [&e](const std::string& name, Tensor t) {
    auto p = make_tensor(std::move(t));
    p->requires_grad = true;
    e.params.emplace_back(name, p);
    return p;
  };
  auto randn = [&rng](std::vector<std::size_t> shape, double stddev) {
    return Tensor::randn(std::move(shape), rng, stddev);
  };
  auto reg_block = [&](const std::string& pfx) {
    const std::size_t w = cfg.width, m = cfg.mlp_hidden;
    reg(pfx + ".ln1.g", Tensor::full({w}, 1.0));
    reg(pfx + ".ln1.b", Tensor({w}));
    reg(pfx + ".qkv.w", randn({w, 3 * w}, kInitStd));
    reg(pfx + ".qkv.b", Tensor({3 * w}));
    reg(pfx + ".out.w", randn({w, w}, kInitStd));
    reg(pfx + ".out.b", Tensor({w}));
    reg(pfx + ".ln2.g", Tensor::full({w}, 1.0));
    reg(pfx + ".ln2.b", Tensor({w}));
    reg(pfx + ".mlp.w1", randn({w, m}, kInitStd));
    reg(pfx + ".mlp.b1", Tensor({m}));
    reg(pfx + ".mlp.w2", randn({m, w}, kInitStd));
    reg(pfx + ".mlp.b2", Tensor({w}));
  };

  const std::size_t w = cfg.width;
  reg("img.patch.w", randn({cfg.patch_dim(), w}, kInitStd));
  reg("img.patch.b", Tensor({w}));
  reg("img.cls", randn({w}, kInitStd));
  reg("img.pos", randn({cfg.tokens_per_image() + 1, w}, kPosInitStd));
  for (std::size_t i = 1; i <= cfg.blocks; ++i)
    reg_block("img.blk" + std::to_string(i));
  reg("img.lnf.g", Tensor::full({w}, 1.0));
  reg("img.lnf.b", Tensor({w}));
  reg("img.proj", randn({w, cfg.embed_dim}, kInitStd));

  reg("txt.embed", randn({e.vocab.size(), w}, kInitStd));
  reg("txt.pos", randn({cfg.max_text_len, w}, kPosInitStd));
  for (std::size_t i = 1; i <= cfg.text_blocks; ++i)
    reg_block("txt.blk" + std::to_string(i));
  reg("txt.proj", randn({w, cfg.embed_dim}, kInitStd));

  reg("log_temp", Tensor::scalar(kLogTempInit));
  return e;
}

TensorPtr image_tokens(Tape& t, const DualEncoder& enc, const TensorPtr& img) {
  const std::size_t s = enc.cfg.image_size;
  if (img->rank() != 3 || img->shape[0] != s || img->shape[1] != s ||
      img->shape[2] != 3)
    raise(ErrorCode::BadResolution,
          "image_tokens: expected " + std::to_string(s) + "x" +
              std::to_string(s) + "x3, got " + shape_str(img->shape));
  // map [0,1] pixels onto [-1,1] before patch extraction
  auto norm = t.add_const(t.scale(img, 2.0), -1.0);
  return t.patchify(norm, enc.cfg.patch);
}

std::map<int, TensorPtr> encode_image_layers(Tape& t, const DualEncoder& enc,
                                             const TensorPtr& patch_tokens,
                                             std::size_t batch,
                                             const std::vector<int>& layers) {
  const EncoderConfig& c = enc.cfg;
  if (layers.empty())
    raise(ErrorCode::LayerSetMismatch, "encode_image_layers: empty layer set");
  std::vector<int> want = layers;
  std::sort(want.begin(), want.end());
  want.erase(std::unique(want.begin(), want.end()), want.end());
  for (int l : want)
    if (l < 1 || l > static_cast<int>(c.blocks))
      raise(ErrorCode::LayerSetMismatch,
            "encode_image_layers: layer " + std::to_string(l) +
                " outside 1.." + std::to_string(c.blocks));
  const std::size_t np = c.tokens_per_image();
  if (patch_tokens->rank() != 2 || patch_tokens->shape[0] != batch * np ||
      patch_tokens->shape[1] != c.patch_dim())
    raise(ErrorCode::ShapeMismatch,
          "encode_image_layers: token shape " +
              shape_str(patch_tokens->shape) + " does not match batch " +
              std::to_string(batch));

  auto x = t.linear(patch_tokens, enc.param("img.patch.w"),
                    enc.param("img.patch.b"));
  x = t.prepend_token(x, enc.param("img.cls"), batch);
  x = t.add_pos(x, enc.param("img.pos"), batch);
  const std::size_t len = np + 1;
  const std::vector<std::size_t> lens(batch, len);

  std::map<int, TensorPtr> captured;
  for (std::size_t i = 1; i <= c.blocks; ++i) {
    x = block_forward(t, enc, "img.blk" + std::to_string(i), x, batch, len,
                      lens);
    const int li = static_cast<int>(i);
    if (std::find(want.begin(), want.end(), li) != want.end())
      captured[li] = t.select_cls_rows(x, batch, len);
  }

  std::map<int, TensorPtr> out;
  for (auto& [l, cls] : captured) {
    auto h = t.layernorm(cls, enc.param("img.lnf.g"), enc.param("img.lnf.b"),
                         c.ln_eps);
    out[l] = t.l2_normalize(t.matmul(h, enc.param("img.proj")), 1);
  }
  return out;
}

TensorPtr encode_text_batch(Tape& t, const DualEncoder& enc,
                            const std::vector<std::vector<std::size_t>>& ids) {
  const EncoderConfig& c = enc.cfg;
  const std::size_t batch = ids.size();
  if (batch == 0)
    raise(ErrorCode::EmptyPrompt, "encode_text_batch: no prompts given");
  std::size_t len = 1;
  std::vector<std::size_t> lens(batch);
  for (std::size_t b = 0; b < batch; ++b) {
    if (ids[b].empty())
      raise(ErrorCode::EmptyPrompt,
            "encode_text_batch: prompt " + std::to_string(b) + " is empty");
    lens[b] = std::min(ids[b].size(), c.max_text_len);
    len = std::max(len, lens[b]);
  }
  std::vector<std::size_t> flat(batch * len, Vocabulary::kPad);
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t i = 0; i < lens[b]; ++i) flat[b * len + i] = ids[b][i];

  auto x = t.gather_rows(enc.param("txt.embed"), flat);
  x = t.add_pos(x, enc.param("txt.pos"), batch);
  for (std::size_t i = 1; i <= c.text_blocks; ++i)
    x = block_forward(t, enc, "txt.blk" + std::to_string(i), x, batch, len,
                      lens);
  auto pooled = t.mean_pool(x, batch, len, lens);
  return t.l2_normalize(t.matmul(pooled, enc.param("txt.proj")), 1);
}

TensorPtr info_nce_loss(Tape& t, const DualEncoder& enc,
                        const TensorPtr& img_emb, const TensorPtr& txt_emb) {
  if (img_emb->rank() != 2 || !img_emb->same_shape(*txt_emb))
    raise(ErrorCode::ShapeMismatch,
          "info_nce_loss: embedding shapes " + shape_str(img_emb->shape) +
              " vs " + shape_str(txt_emb->shape));
  const std::size_t batch = img_emb->shape[0];
  if (batch < 2)
    raise(ErrorCode::BatchTooSmall,
          "info_nce_loss: needs at least 2 pairs, got " +
              std::to_string(batch));
  auto inv_temp = t.exp(t.scale(enc.param("log_temp"), -1.0));
  auto logits = t.scale_by(t.matmul(img_emb, t.transpose(txt_emb)), inv_temp);
  std::vector<std::size_t> diag(batch);
  for (std::size_t i = 0; i < batch; ++i) diag[i] = i;
  auto li = t.cross_entropy_rows(logits, diag);
  auto lt = t.cross_entropy_rows(t.transpose(logits), diag);
  return t.scale(t.add(li, lt), 0.5);
}

}  // namespace fge
