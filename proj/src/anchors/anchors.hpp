#pragma once

#include <string>
#include <vector>

#include "encoder/model.hpp"

namespace fge {

enum class ForgerySource { global, local };
enum class Granularity { fine, coarse, untargeted };

const char* source_name(ForgerySource s);
ForgerySource source_from_name(const std::string& name);
const char* granularity_name(Granularity g);
Granularity granularity_from_name(const std::string& name);

// Prompt texts per source. The builtin pack is the attack's default
// vocabulary; a JSON file can override any of the four lists.
struct PromptPack {
  std::vector<std::string> real_global, fake_global, real_local, fake_local;
};

const PromptPack& builtin_prompts();

// Coarse mode collapses every source to one generic pair.
const std::vector<std::string>& coarse_real_prompts();
const std::vector<std::string>& coarse_fake_prompts();

// Every builtin prompt text (fine, both sources, plus the coarse pair);
// feeds vocabulary construction before training.
std::vector<std::string> all_builtin_prompt_texts();

// Override file: a JSON object with any of the keys real_global, fake_global,
// real_local, fake_local mapped to arrays of strings. Missing keys keep the
// builtin lists.
PromptPack load_prompt_pack(const std::string& json_path);

struct AnchorSet {
  ForgerySource source = ForgerySource::global;
  Granularity granularity = Granularity::fine;
  std::vector<std::string> real_prompts, fake_prompts;
  Tensor real;  // {n_real, embed_dim}, rows unit-norm
  Tensor fake;  // {n_fake, embed_dim}, rows unit-norm
};

// Encodes the prompts for one source at the requested granularity.
// Untargeted mode has no anchors and is rejected here.
AnchorSet build_anchor_set(const DualEncoder& enc, ForgerySource source,
                           Granularity granularity, const PromptPack& pack);

// Mean cosine between real and fake anchor rows; near 1 means the text
// encoder cannot tell the two vocabularies apart.
double anchor_cross_similarity(const AnchorSet& set);

}  // namespace fge
