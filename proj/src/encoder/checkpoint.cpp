#include "encoder/checkpoint.hpp"

#include <fstream>

#include "json.hpp"

#include "common/binio.hpp"

namespace fge {

namespace {

nlohmann::json config_json(const EncoderConfig& c) {
  return {{"image_size", c.image_size}, {"patch", c.patch},
          {"width", c.width},           {"blocks", c.blocks},
          {"heads", c.heads},           {"mlp_hidden", c.mlp_hidden},
          {"embed_dim", c.embed_dim},   {"text_blocks", c.text_blocks},
          {"max_text_len", c.max_text_len}, {"ln_eps", c.ln_eps}};
}

EncoderConfig config_from_json(const nlohmann::json& j) {
  EncoderConfig c;
  c.image_size = j.at("image_size").get<std::size_t>();
  c.patch = j.at("patch").get<std::size_t>();
  c.width = j.at("width").get<std::size_t>();
  c.blocks = j.at("blocks").get<std::size_t>();
  c.heads = j.at("heads").get<std::size_t>();
  c.mlp_hidden = j.at("mlp_hidden").get<std::size_t>();
  c.embed_dim = j.at("embed_dim").get<std::size_t>();
  c.text_blocks = j.at("text_blocks").get<std::size_t>();
  c.max_text_len = j.at("max_text_len").get<std::size_t>();
  c.ln_eps = j.at("ln_eps").get<double>();
  return c;
}

}  // namespace

void save_encoder(const DualEncoder& enc, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) raise(ErrorCode::Io, "save_encoder: cannot open " + path);
  binio::write_header(out, binio::kKindEncoder);
  for (const auto& [name, p] : enc.params) binio::write_record(out, name, *p);
  if (!out) raise(ErrorCode::Io, "save_encoder: short write to " + path);
  out.close();

  nlohmann::json meta{{"config", config_json(enc.cfg)},
                      {"vocab", enc.vocab.words}};
  std::ofstream mf(path + ".meta.json");
  if (!mf) raise(ErrorCode::Io, "save_encoder: cannot open sidecar for " + path);
  mf << meta.dump(2) << "\n";
  if (!mf) raise(ErrorCode::Io, "save_encoder: short sidecar write for " + path);
}

DualEncoder load_encoder(const std::string& path) {
  std::ifstream mf(path + ".meta.json");
  if (!mf) raise(ErrorCode::Io, "load_encoder: missing sidecar for " + path);
  nlohmann::json meta = nlohmann::json::parse(mf, nullptr, false);
  if (meta.is_discarded())
    raise(ErrorCode::MalformedHeader, "load_encoder: bad sidecar json for " + path);

  Vocabulary vocab;
  try {
    vocab.words = meta.at("vocab").get<std::vector<std::string>>();
  } catch (const nlohmann::json::exception&) {
    raise(ErrorCode::MalformedHeader,
          "load_encoder: sidecar lacks a vocabulary for " + path);
  }
  if (vocab.words.size() < 2 || vocab.words[0] != "<pad>" ||
      vocab.words[1] != "<unk>")
    raise(ErrorCode::MalformedHeader,
          "load_encoder: vocabulary specials are damaged in " + path);
  for (std::size_t i = 0; i < vocab.words.size(); ++i)
    vocab.index[vocab.words[i]] = i;

  EncoderConfig cfg;
  try {
    cfg = config_from_json(meta.at("config"));
  } catch (const nlohmann::json::exception&) {
    raise(ErrorCode::MalformedHeader,
          "load_encoder: sidecar config is damaged for " + path);
  }

  std::ifstream in(path, std::ios::binary);
  if (!in) raise(ErrorCode::Io, "load_encoder: cannot open " + path);
  const std::uint32_t kind = binio::read_header(in, path);
  if (kind != binio::kKindEncoder)
    raise(ErrorCode::MalformedHeader,
          "load_encoder: " + path + " holds payload kind " +
              std::to_string(kind) + ", not an encoder");

  DualEncoder enc = make_encoder(cfg, std::move(vocab), 0);
  std::size_t filled = 0;
  std::string name;
  Tensor t;
  while (binio::read_record(in, path, name, t)) {
    TensorPtr p;
    try {
      p = enc.param(name);
    } catch (const Error&) {
      raise(ErrorCode::MalformedHeader,
            "load_encoder: unexpected record '" + name + "' in " + path);
    }
    if (p->shape != t.shape)
      raise(ErrorCode::MalformedHeader,
            "load_encoder: record '" + name + "' has shape " +
                shape_str(t.shape) + ", expected " + shape_str(p->shape));
    p->data = std::move(t.data);
    ++filled;
  }
  if (filled != enc.params.size())
    raise(ErrorCode::MalformedHeader,
          "load_encoder: " + path + " holds " + std::to_string(filled) +
              " records, expected " + std::to_string(enc.params.size()));
  return enc;
}

}  // namespace fge
