#include "harness/pca.hpp"

#include <cmath>

#include "common/error.hpp"
#include "common/prng.hpp"

namespace fge {

PcaResult pca_project(const Tensor& x, std::size_t k) {
  if (x.rank() != 2)
    raise(ErrorCode::ShapeMismatch,
          "pca_project expects rank-2 input, got " + shape_str(x.shape));
  const std::size_t n = x.shape[0], d = x.shape[1];
  if (n < 3)
    raise(ErrorCode::InvalidArg,
          "pca_project needs at least 3 rows, got " + std::to_string(n));
  const std::size_t rank_cap = std::min(n - 1, d);
  if (k < 1 || k > rank_cap)
    raise(ErrorCode::RankDeficient,
          "pca_project: k=" + std::to_string(k) + " exceeds data rank bound " +
              std::to_string(rank_cap));

  std::vector<double> mean(d, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j) mean[j] += x.data[i * d + j];
  for (auto& m : mean) m /= static_cast<double>(n);
  std::vector<double> xc(n * d);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j)
      xc[i * d + j] = x.data[i * d + j] - mean[j];

  // covariance, unbiased
  std::vector<double> cov(d * d, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t a = 0; a < d; ++a) {
      const double va = xc[i * d + a];
      if (va == 0.0) continue;
      for (std::size_t b = 0; b < d; ++b) cov[a * d + b] += va * xc[i * d + b];
    }
  for (auto& v : cov) v /= static_cast<double>(n - 1);

  PcaResult res;
  res.coords = Tensor({n, k});
  constexpr int kIters = 200;
  constexpr double kTol = 1e-10;
  Rng rng(0x9ca0ull);
  for (std::size_t comp = 0; comp < k; ++comp) {
    std::vector<double> v(d), w(d);
    for (auto& e : v) e = rng.gauss(0.0, 1.0);
    double nv = 0;
    for (auto e : v) nv += e * e;
    nv = std::sqrt(nv);
    for (auto& e : v) e /= nv;
    double lambda = 0.0;
    for (int it = 0; it < kIters; ++it) {
      for (std::size_t a = 0; a < d; ++a) {
        double s = 0;
        for (std::size_t b = 0; b < d; ++b) s += cov[a * d + b] * v[b];
        w[a] = s;
      }
      double nw = 0;
      for (auto e : w) nw += e * e;
      nw = std::sqrt(nw);
      if (nw == 0.0) break;  // remaining spectrum is exactly zero
      double next = 0;
      for (std::size_t a = 0; a < d; ++a) next += v[a] * w[a];
      for (std::size_t a = 0; a < d; ++a) v[a] = w[a] / nw;
      if (std::abs(next - lambda) <= kTol * std::max(1.0, std::abs(next))) {
        lambda = next;
        break;
      }
      lambda = next;
    }
    // sign convention: largest-magnitude entry positive
    std::size_t arg = 0;
    for (std::size_t a = 1; a < d; ++a)
      if (std::abs(v[a]) > std::abs(v[arg])) arg = a;
    if (v[arg] < 0)
      for (auto& e : v) e = -e;
    if (lambda < 0) lambda = 0;
    res.eigenvalues.push_back(lambda);
    res.components.insert(res.components.end(), v.begin(), v.end());
    for (std::size_t i = 0; i < n; ++i) {
      double s = 0;
      for (std::size_t a = 0; a < d; ++a) s += xc[i * d + a] * v[a];
      res.coords.data[i * k + comp] = s;
    }
    // deflate
    for (std::size_t a = 0; a < d; ++a)
      for (std::size_t b = 0; b < d; ++b)
        cov[a * d + b] -= lambda * v[a] * v[b];
  }
  return res;
}

}  // namespace fge
