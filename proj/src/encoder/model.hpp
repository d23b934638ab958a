#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "encoder/vocab.hpp"
#include "numcore/tape.hpp"

namespace fge {

struct EncoderConfig {
  std::size_t image_size = 32;   // encoder-side resolution
  std::size_t patch = 4;
  std::size_t width = 64;        // transformer width, both towers
  std::size_t blocks = 4;        // image tower depth N
  std::size_t heads = 4;
  std::size_t mlp_hidden = 64;
  std::size_t embed_dim = 32;    // joint space dimension
  std::size_t text_blocks = 2;
  std::size_t max_text_len = 32;
  double ln_eps = 1e-5;

  std::size_t tokens_per_image() const {
    return (image_size / patch) * (image_size / patch);
  }
  std::size_t patch_dim() const { return patch * patch * 3; }
};

// Both towers plus the trainable log-temperature, with parameters in a
// stable registration order (the checkpoint record order).
struct DualEncoder {
  EncoderConfig cfg;
  Vocabulary vocab;
  std::vector<std::pair<std::string, TensorPtr>> params;

  TensorPtr param(const std::string& name) const;
  std::vector<TensorPtr> param_ptrs() const;
  void zero_grads() const;
  double temperature() const;  // exp(log_temp)
  int final_block() const { return static_cast<int>(cfg.blocks); }
};

DualEncoder make_encoder(const EncoderConfig& cfg, Vocabulary vocab,
                         std::uint64_t seed);

// Pixel normalization plus patch extraction for one 32x32x3 image node.
TensorPtr image_tokens(Tape& t, const DualEncoder& enc, const TensorPtr& img);

// Runs the image tower over pre-patchified tokens ({batch*Np, patch_dim}).
// Returns, per requested block index (1-based), the row-normalized joint
// embeddings {batch, embed_dim}. Every captured representation passes
// through the shared final layernorm and projection.
std::map<int, TensorPtr> encode_image_layers(Tape& t, const DualEncoder& enc,
                                             const TensorPtr& patch_tokens,
                                             std::size_t batch,
                                             const std::vector<int>& layers);

// Text tower over padded token id rows; mean pooling over real tokens.
// Returns {batch, embed_dim}, rows L2-normalized.
TensorPtr encode_text_batch(Tape& t, const DualEncoder& enc,
                            const std::vector<std::vector<std::size_t>>& ids);

// Symmetric InfoNCE over matched image/text rows at the encoder's current
// temperature. Raises BatchTooSmall below two pairs.
TensorPtr info_nce_loss(Tape& t, const DualEncoder& enc,
                        const TensorPtr& img_emb, const TensorPtr& txt_emb);

}  // namespace fge
