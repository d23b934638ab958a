#include "anchors/anchors.hpp"

#include <fstream>

#include "json.hpp"

namespace fge {

const char* source_name(ForgerySource s) {
  return s == ForgerySource::global ? "global" : "local";
}

ForgerySource source_from_name(const std::string& name) {
  if (name == "global") return ForgerySource::global;
  if (name == "local") return ForgerySource::local;
  raise(ErrorCode::UnknownSource, "unknown forgery source '" + name + "'");
}

const char* granularity_name(Granularity g) {
  switch (g) {
    case Granularity::fine: return "fine";
    case Granularity::coarse: return "coarse";
    case Granularity::untargeted: return "untargeted";
  }
  return "fine";
}

Granularity granularity_from_name(const std::string& name) {
  if (name == "fine") return Granularity::fine;
  if (name == "coarse") return Granularity::coarse;
  if (name == "untargeted") return Granularity::untargeted;
  raise(ErrorCode::InvalidArg, "unknown granularity '" + name + "'");
}

const PromptPack& builtin_prompts() {
  static const PromptPack pack = {
      // real, fully generated counterpart
      {
          "A raw photograph captured by a real camera sensor.",
          "A high-quality photo with natural ISO noise and film grain.",
          "An authentic, unedited image from the physical world.",
          "A sharp photograph shot on a DSLR camera.",
      },
      // fully generated
      {
          "A fully synthetic image generated by artificial intelligence.",
          "A digital rendering with waxy skin and artificial textures.",
          "A computer generated imagery created by GAN or Diffusion models.",
          "An AI artwork generated by Midjourney, Stable Diffusion, or "
          "StyleGAN.",
      },
      // real, spliced counterpart
      {
          "An unedited, original photograph straight out of camera.",
          "A single-exposure shot with consistent depth and focus.",
          "A high-quality real photo with organic textures and seamless "
          "blending.",
          "A raw documentary image depicting a real world scene.",
      },
      // spliced
      {
          "A digitally manipulated image edited in Photoshop.",
          "A composite image with cut-and-paste objects and hard edges.",
          "A fake picture with unnatural boundaries and pasted elements.",
          "A digital collage created by combining multiple photos.",
      },
  };
  return pack;
}

const std::vector<std::string>& coarse_real_prompts() {
  static const std::vector<std::string> p = {"a real photo"};
  return p;
}

const std::vector<std::string>& coarse_fake_prompts() {
  static const std::vector<std::string> p = {"a fake image"};
  return p;
}

std::vector<std::string> all_builtin_prompt_texts() {
  std::vector<std::string> out;
  const PromptPack& pack = builtin_prompts();
  for (const auto* list :
       {&pack.real_global, &pack.fake_global, &pack.real_local,
        &pack.fake_local, &coarse_real_prompts(), &coarse_fake_prompts()})
    out.insert(out.end(), list->begin(), list->end());
  return out;
}

PromptPack load_prompt_pack(const std::string& json_path) {
  std::ifstream in(json_path);
  if (!in) raise(ErrorCode::Io, "load_prompt_pack: cannot open " + json_path);
  nlohmann::json j = nlohmann::json::parse(in, nullptr, false);
  if (j.is_discarded() || !j.is_object())
    raise(ErrorCode::ConfigError,
          "load_prompt_pack: " + json_path + " is not a json object");
  PromptPack pack = builtin_prompts();
  auto take = [&](const char* key, std::vector<std::string>& dst) {
    if (!j.contains(key)) return;
    const auto& arr = j[key];
    if (!arr.is_array())
      raise(ErrorCode::ConfigError, "load_prompt_pack: key '" +
                                        std::string(key) +
                                        "' must be an array of strings");
    std::vector<std::string> items;
    for (const auto& it : arr) {
      if (!it.is_string())
        raise(ErrorCode::ConfigError, "load_prompt_pack: key '" +
                                          std::string(key) +
                                          "' holds a non-string entry");
      items.push_back(it.get<std::string>());
    }
    if (items.empty())
      raise(ErrorCode::EmptyPrompt, "load_prompt_pack: key '" +
                                        std::string(key) +
                                        "' is an empty list");
    dst = std::move(items);
  };
  take("real_global", pack.real_global);
  take("fake_global", pack.fake_global);
  take("real_local", pack.real_local);
  take("fake_local", pack.fake_local);
  for (const auto& [key, val] : j.items())
    if (key != "real_global" && key != "fake_global" && key != "real_local" &&
        key != "fake_local")
      raise(ErrorCode::ConfigError,
            "load_prompt_pack: unknown key '" + key + "'");
  return pack;
}

namespace {

Tensor encode_prompt_rows(const DualEncoder& enc,
                          const std::vector<std::string>& prompts) {
  if (prompts.empty())
    raise(ErrorCode::EmptyPrompt, "anchor prompt list is empty");
  std::vector<std::vector<std::size_t>> ids;
  ids.reserve(prompts.size());
  for (const auto& p : prompts) ids.push_back(encode_tokens(enc.vocab, p));
  Tape t;
  TensorPtr z = encode_text_batch(t, enc, ids);
  return *z;
}

}  // namespace

AnchorSet build_anchor_set(const DualEncoder& enc, ForgerySource source,
                           Granularity granularity, const PromptPack& pack) {
  if (granularity == Granularity::untargeted)
    raise(ErrorCode::InvalidArg,
          "build_anchor_set: untargeted mode uses no anchors");
  AnchorSet set;
  set.source = source;
  set.granularity = granularity;
  if (granularity == Granularity::coarse) {
    set.real_prompts = coarse_real_prompts();
    set.fake_prompts = coarse_fake_prompts();
  } else if (source == ForgerySource::global) {
    set.real_prompts = pack.real_global;
    set.fake_prompts = pack.fake_global;
  } else {
    set.real_prompts = pack.real_local;
    set.fake_prompts = pack.fake_local;
  }
  set.real = encode_prompt_rows(enc, set.real_prompts);
  set.fake = encode_prompt_rows(enc, set.fake_prompts);
  return set;
}

double anchor_cross_similarity(const AnchorSet& set) {
  const std::size_t nr = set.real.shape[0], nf = set.fake.shape[0];
  const std::size_t d = set.real.shape[1];
  double acc = 0.0;
  for (std::size_t i = 0; i < nr; ++i)
    for (std::size_t j = 0; j < nf; ++j) {
      double dot = 0.0;
      for (std::size_t k = 0; k < d; ++k)
        dot += set.real.data[i * d + k] * set.fake.data[j * d + k];
      acc += dot;
    }
  return acc / static_cast<double>(nr * nf);
}

}  // namespace fge
