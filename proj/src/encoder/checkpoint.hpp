#pragma once

#include <string>

#include "encoder/model.hpp"

namespace fge {

// Writes the parameter records plus a "<path>.meta.json" sidecar holding the
// architecture hyperparameters and the vocabulary.
void save_encoder(const DualEncoder& enc, const std::string& path);

DualEncoder load_encoder(const std::string& path);

}  // namespace fge
