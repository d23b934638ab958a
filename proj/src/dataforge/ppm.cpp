#include "dataforge/ppm.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <vector>

namespace fge {

namespace {

constexpr std::size_t kMaxDim = 1 << 14;

// Reads one whitespace-delimited header token, skipping '#' comments.
std::string next_token(std::istream& in) {
  std::string tok;
  int c;
  while ((c = in.get()) != EOF) {
    if (c == '#') {
      while (c != EOF && c != '\n') c = in.get();
      continue;
    }
    if (std::isspace(c)) {
      if (!tok.empty()) return tok;
      continue;
    }
    tok.push_back(static_cast<char>(c));
  }
  return tok;
}

std::size_t parse_dim(const std::string& tok, const char* what) {
  if (tok.empty()) raise(ErrorCode::MalformedHeader, std::string("missing ") + what);
  std::size_t v = 0;
  for (char ch : tok) {
    if (ch < '0' || ch > '9')
      raise(ErrorCode::MalformedHeader,
            std::string("non-numeric ") + what + ": " + tok);
    v = v * 10 + static_cast<std::size_t>(ch - '0');
    if (v > kMaxDim * kMaxDim)
      raise(ErrorCode::MalformedHeader, std::string(what) + " out of range");
  }
  return v;
}

}  // namespace

void save_ppm(const Tensor& img, const std::string& path) {
  if (img.rank() != 3 || img.shape[2] != 3)
    raise(ErrorCode::ShapeMismatch,
          "save_ppm expects an H,W,3 image, got " + shape_str(img.shape));
  const std::size_t h = img.shape[0], w = img.shape[1];
  std::ofstream out(path, std::ios::binary);
  if (!out) raise(ErrorCode::Io, "save_ppm: cannot open " + path);
  out << "P6\n" << w << " " << h << "\n255\n";
  std::vector<unsigned char> buf(h * w * 3);
  for (std::size_t i = 0; i < h * w * 3; ++i) {
    double v = img.data[i];
    if (v < 0.0) v = 0.0;
    if (v > 1.0) v = 1.0;
    buf[i] = static_cast<unsigned char>(std::lround(v * 255.0));
  }
  out.write(reinterpret_cast<const char*>(buf.data()),
            static_cast<std::streamsize>(buf.size()));
  if (!out) raise(ErrorCode::Io, "save_ppm: short write to " + path);
}

Tensor load_ppm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) raise(ErrorCode::Io, "load_ppm: cannot open " + path);
  const std::string magic = next_token(in);
  if (magic != "P6")
    raise(ErrorCode::MalformedHeader,
          "load_ppm: magic '" + magic + "' is not P6 in " + path);
  const std::size_t w = parse_dim(next_token(in), "width");
  const std::size_t h = parse_dim(next_token(in), "height");
  if (w == 0 || h == 0 || w > kMaxDim || h > kMaxDim)
    raise(ErrorCode::MalformedHeader, "load_ppm: bad dimensions in " + path);
  const std::string maxval = next_token(in);
  if (maxval != "255")
    raise(ErrorCode::MalformedHeader,
          "load_ppm: unsupported maxval '" + maxval + "' in " + path);
  // exactly one whitespace byte separates the header from the payload,
  // and next_token has already consumed it
  std::vector<unsigned char> buf(h * w * 3);
  in.read(reinterpret_cast<char*>(buf.data()),
          static_cast<std::streamsize>(buf.size()));
  if (in.gcount() != static_cast<std::streamsize>(buf.size()))
    raise(ErrorCode::Io, "load_ppm: truncated pixel data in " + path);
  Tensor img({h, w, 3});
  for (std::size_t i = 0; i < buf.size(); ++i)
    img.data[i] = static_cast<double>(buf[i]) / 255.0;
  return img;
}

}  // namespace fge
