#pragma once

#include <vector>

#include "numcore/tensor.hpp"

namespace fge {

struct PcaResult {
  Tensor coords;                     // (n, k) projections of centered rows
  std::vector<double> eigenvalues;   // top-k covariance eigenvalues, descending
  std::vector<double> components;    // k rows of length d, row-major
};

// Projects rows of x (n, d) onto the top-k principal axes of their
// covariance. Power iteration with deflation, 200 iterations, tolerance
// 1e-10; sign fixed so each component's largest-magnitude entry is positive.
// Throws RankDeficient when k exceeds min(n-1, d).
PcaResult pca_project(const Tensor& x, std::size_t k);

}  // namespace fge
