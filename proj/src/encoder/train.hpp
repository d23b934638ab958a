#pragma once

#include "dataforge/synth.hpp"
#include "encoder/model.hpp"

namespace fge {

struct TrainConfig {
  std::size_t steps = 2000;
  std::size_t batch = 64;
  double lr = 3e-4;
  std::uint64_t seed = 7;
};

struct TrainResult {
  DualEncoder encoder;
  std::vector<double> loss_history;  // one entry per step
};

// Contrastive training over (image, caption) pairs. extra_vocab_texts are
// folded into the vocabulary so downstream prompts never hit <unk>.
TrainResult train_contrastive(const SampleSet& corpus,
                              const std::vector<std::string>& extra_vocab_texts,
                              const EncoderConfig& enc_cfg,
                              const TrainConfig& cfg);

}  // namespace fge
