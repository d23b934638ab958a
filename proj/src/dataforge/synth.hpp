#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "numcore/tensor.hpp"

namespace fge {

enum class SampleKind { real, fake_global, fake_local };

const char* kind_name(SampleKind k);
SampleKind kind_from_name(const std::string& name);

struct PasteRect {
  std::size_t x = 0, y = 0, w = 0, h = 0;  // w == 0 means "no paste"
};

struct SynthSample {
  SampleKind kind = SampleKind::real;
  std::uint64_t seed = 0;
  Tensor image;         // 64x64x3 in [0,1]
  std::string caption;  // lowercase, space separated
  PasteRect paste;      // populated for fake_local
};

// Deterministic in (kind, seed). All three kinds share the content layer for
// a given seed; only the authenticity pipeline differs, so a (real, s) /
// (fake_global, s) pair depicts the same scene.
SynthSample generate_sample(SampleKind kind, std::uint64_t seed);

std::string caption_for(SampleKind kind, std::uint64_t seed);

// Mean of |4-neighbor Laplacian| over interior pixels and channels; the
// high-frequency energy statistic used to separate textures.
double mean_abs_laplacian(const Tensor& img);

struct SampleSet {
  std::string split;  // "train" or "test"
  std::size_t per_class = 0;
  std::vector<SynthSample> samples;  // kind-major: all real, then global, local
};

// Scene seeds are master_seed + split offset + scene index, shared by all
// three kinds at that index; train and test draw from disjoint seed ranges
// for any master_seed.
SampleSet generate_corpus(std::size_t n_per_class, const std::string& split,
                          std::uint64_t master_seed);

struct CorpusEntry {
  std::string file;  // relative to the manifest's directory
  SampleKind kind = SampleKind::real;
  std::uint64_t seed = 0;
  std::string caption;
  PasteRect paste;
};

// Writes one PPM per sample plus <split>_manifest.jsonl into dir;
// returns the manifest path.
std::string write_corpus(const SampleSet& set, const std::string& dir);

std::vector<CorpusEntry> load_manifest(const std::string& manifest_path);

}  // namespace fge
