#include "harness/distort.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

#include "common/error.hpp"

namespace fge {
namespace {

void require_image(const Tensor& img, const char* who) {
  if (img.rank() != 3 || img.shape[2] < 1)
    raise(ErrorCode::ShapeMismatch,
          std::string(who) + ": expected an (h,w,c) image, got " +
              shape_str(img.shape));
}

// Standard luminance quantization table, row-major zig-zag free layout.
constexpr double kLumaTable[64] = {
    16, 11, 10, 16, 24,  40,  51,  61,   //
    12, 12, 14, 19, 26,  58,  60,  55,   //
    14, 13, 16, 24, 40,  57,  69,  56,   //
    14, 17, 22, 29, 51,  87,  80,  62,   //
    18, 22, 37, 56, 68,  109, 103, 77,   //
    24, 35, 55, 64, 81,  104, 113, 92,   //
    49, 64, 78, 87, 103, 121, 120, 101,  //
    72, 92, 95, 98, 112, 100, 103, 99};

// Orthonormal 8-point DCT-II basis, D[u][x].
struct DctBasis {
  double d[8][8];
  DctBasis() {
    const double pi = 3.14159265358979323846;
    for (int u = 0; u < 8; ++u) {
      const double cu = (u == 0) ? std::sqrt(1.0 / 8.0) : std::sqrt(2.0 / 8.0);
      for (int x = 0; x < 8; ++x)
        d[u][x] = cu * std::cos((2 * x + 1) * u * pi / 16.0);
    }
  }
};

const DctBasis& basis() {
  static const DctBasis b;
  return b;
}

}  // namespace

Tensor jpeg_proxy(const Tensor& img, int quality) {
  require_image(img, "jpeg_proxy");
  if (quality < 1 || quality > 100)
    raise(ErrorCode::BadQuality, "jpeg_proxy: quality " +
                                     std::to_string(quality) +
                                     " outside [1,100]");
  const std::size_t h = img.shape[0], w = img.shape[1], c = img.shape[2];
  const double scale =
      (quality < 50 ? 5000.0 / quality : 200.0 - 2.0 * quality) / 100.0;
  double table[64];
  for (int i = 0; i < 64; ++i) table[i] = std::max(1.0, kLumaTable[i] * scale);

  const std::size_t hp = (h + 7) / 8 * 8, wp = (w + 7) / 8 * 8;
  const DctBasis& B = basis();
  Tensor out(img.shape);
  std::vector<double> plane(hp * wp);
  for (std::size_t ch = 0; ch < c; ++ch) {
    // centered 0..255 scale with edge-replicated padding
    for (std::size_t y = 0; y < hp; ++y) {
      const std::size_t ys = std::min(y, h - 1);
      for (std::size_t x = 0; x < wp; ++x) {
        const std::size_t xs = std::min(x, w - 1);
        plane[y * wp + x] = img.data[(ys * w + xs) * c + ch] * 255.0 - 128.0;
      }
    }
    for (std::size_t by = 0; by < hp; by += 8)
      for (std::size_t bx = 0; bx < wp; bx += 8) {
        double a[8][8], t[8][8], f[8][8];
        for (int y = 0; y < 8; ++y)
          for (int x = 0; x < 8; ++x) a[y][x] = plane[(by + y) * wp + bx + x];
        // F = D * A * D^T, quantize, A' = D^T * F * D
        for (int u = 0; u < 8; ++u)
          for (int x = 0; x < 8; ++x) {
            double s = 0;
            for (int y = 0; y < 8; ++y) s += B.d[u][y] * a[y][x];
            t[u][x] = s;
          }
        for (int u = 0; u < 8; ++u)
          for (int v = 0; v < 8; ++v) {
            double s = 0;
            for (int x = 0; x < 8; ++x) s += t[u][x] * B.d[v][x];
            const double q = table[u * 8 + v];
            f[u][v] = std::round(s / q) * q;
          }
        for (int y = 0; y < 8; ++y)
          for (int v = 0; v < 8; ++v) {
            double s = 0;
            for (int u = 0; u < 8; ++u) s += B.d[u][y] * f[u][v];
            t[y][v] = s;
          }
        for (int y = 0; y < 8; ++y)
          for (int x = 0; x < 8; ++x) {
            double s = 0;
            for (int v = 0; v < 8; ++v) s += t[y][v] * B.d[v][x];
            plane[(by + y) * wp + bx + x] = s;
          }
      }
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x)
        out.data[(y * w + x) * c + ch] = std::clamp(
            (plane[y * wp + x] + 128.0) / 255.0, 0.0, 1.0);
  }
  return out;
}

namespace {

std::size_t reflect_index(long long i, long long n) {
  while (i < 0 || i >= n) {
    if (i < 0) i = -1 - i;
    if (i >= n) i = 2 * n - 1 - i;
  }
  return static_cast<std::size_t>(i);
}

}  // namespace

Tensor gaussian_blur(const Tensor& img, double sigma) {
  require_image(img, "gaussian_blur");
  if (sigma < 0.0)
    raise(ErrorCode::InvalidArg, "gaussian_blur: sigma must be nonnegative");
  if (sigma == 0.0) return img;
  const long long r = static_cast<long long>(std::ceil(3.0 * sigma));
  std::vector<double> kern(2 * r + 1);
  double sum = 0;
  for (long long i = -r; i <= r; ++i) {
    kern[i + r] = std::exp(-0.5 * (double(i) * double(i)) / (sigma * sigma));
    sum += kern[i + r];
  }
  for (auto& v : kern) v /= sum;

  const long long h = static_cast<long long>(img.shape[0]);
  const long long w = static_cast<long long>(img.shape[1]);
  const std::size_t c = img.shape[2];
  Tensor mid(img.shape), out(img.shape);
  for (std::size_t ch = 0; ch < c; ++ch) {
    for (long long y = 0; y < h; ++y)
      for (long long x = 0; x < w; ++x) {
        double s = 0;
        for (long long i = -r; i <= r; ++i)
          s += kern[i + r] *
               img.data[(y * w + static_cast<long long>(reflect_index(x + i, w))) * c + ch];
        mid.data[(y * w + x) * c + ch] = s;
      }
    for (long long y = 0; y < h; ++y)
      for (long long x = 0; x < w; ++x) {
        double s = 0;
        for (long long i = -r; i <= r; ++i)
          s += kern[i + r] *
               mid.data[(static_cast<long long>(reflect_index(y + i, h)) * w + x) * c + ch];
        out.data[(y * w + x) * c + ch] = s;
      }
  }
  return out;
}

}  // namespace fge
