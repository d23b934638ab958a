#pragma once

#include <string>
#include <vector>

#include "dataforge/synth.hpp"
#include "encoder/model.hpp"

namespace fge {

enum class HeadArch { linear, mlp2 };

const char* head_arch_name(HeadArch a);
HeadArch head_arch_from_name(const std::string& name);

// Binary real-vs-fake probe over frozen encoder features. The linear head is
// a single affine score; mlp2 adds one tanh hidden layer of 16 units.
struct DetectorHead {
  HeadArch arch = HeadArch::linear;
  int layer = 0;              // encoder block whose embedding feeds the head
  std::size_t embed_dim = 0;
  TensorPtr w1, b1;           // linear: {d,1},{1}; mlp2: {d,16},{16}
  TensorPtr w2, b2;           // mlp2 only: {16,1},{1}

  std::vector<TensorPtr> param_ptrs() const;
};

struct HeadTrainConfig {
  std::size_t steps = 500;
  std::size_t batch = 128;
  double lr = 1e-2;
  std::uint64_t seed = 7;
};

struct HeadTrainResult {
  DetectorHead head;
  std::vector<double> loss_history;
};

// Frozen-encoder features for a stack of native 64x64 images, one row per
// image, taken at the given block (unit rows, encoder embedding width).
Tensor embed_images(const DualEncoder& enc,
                    const std::vector<const Tensor*>& images, int layer,
                    std::size_t batch = 64);

// Labels: real maps to 0, both forgery kinds to 1.
double label_of(SampleKind kind);

// Fits a head on precomputed embeddings with sigmoid cross-entropy.
HeadTrainResult train_head(const Tensor& embeddings,
                           const std::vector<double>& labels, HeadArch arch,
                           int layer, const HeadTrainConfig& cfg);

// Fake-probability per row of a {n,d} embedding matrix.
std::vector<double> head_scores(const DetectorHead& head,
                                const Tensor& embeddings);

// Decision rule: probability at or above one half reads as fake.
inline bool score_is_fake(double p) { return p >= 0.5; }

void save_head(const DetectorHead& head, const std::string& path);
DetectorHead load_head(const std::string& path);

}  // namespace fge
