#include "numcore/gemm.hpp"

#include <vector>

namespace fge {
namespace {

constexpr std::size_t kTileM = 6;
constexpr std::size_t kTileN = 32;

// MxN tile with compile-time bounds; per-element accumulation stays in k
// order, so the tiling never changes results.
template <std::size_t M, std::size_t N>
void tile_full(const double* __restrict a, std::size_t lda,
               const double* __restrict b, std::size_t ldb,
               double* __restrict c, std::size_t ldc, std::size_t k) {
  double acc[M][N];
  for (std::size_t r = 0; r < M; ++r)
    for (std::size_t j = 0; j < N; ++j) acc[r][j] = c[r * ldc + j];
  for (std::size_t p = 0; p < k; ++p) {
    const double* brow = b + p * ldb;
    for (std::size_t r = 0; r < M; ++r) {
      const double av = a[r * lda + p];
      for (std::size_t j = 0; j < N; ++j) acc[r][j] += av * brow[j];
    }
  }
  for (std::size_t r = 0; r < M; ++r)
    for (std::size_t j = 0; j < N; ++j) c[r * ldc + j] = acc[r][j];
}

#if defined(__GNUC__)
typedef double v4d __attribute__((vector_size(32)));

// 16-wide tile with accumulators held in named vector registers.  The plain
// array form spills under unrolling and crawls on the short-k attention
// products; this one keeps all M*4 accumulators live.
template <std::size_t M>
void tile_n16(const double* __restrict a, std::size_t lda,
              const double* __restrict b, std::size_t ldb,
              double* __restrict c, std::size_t ldc, std::size_t k) {
  v4d acc[M][4];
  for (std::size_t r = 0; r < M; ++r)
    for (std::size_t j = 0; j < 4; ++j)
      acc[r][j] = v4d{c[r * ldc + 4 * j + 0], c[r * ldc + 4 * j + 1],
                      c[r * ldc + 4 * j + 2], c[r * ldc + 4 * j + 3]};
  for (std::size_t p = 0; p < k; ++p) {
    const double* brow = b + p * ldb;
    const v4d b0 = {brow[0], brow[1], brow[2], brow[3]};
    const v4d b1 = {brow[4], brow[5], brow[6], brow[7]};
    const v4d b2 = {brow[8], brow[9], brow[10], brow[11]};
    const v4d b3 = {brow[12], brow[13], brow[14], brow[15]};
    for (std::size_t r = 0; r < M; ++r) {
      const double s = a[r * lda + p];
      const v4d av = {s, s, s, s};
      acc[r][0] += av * b0;
      acc[r][1] += av * b1;
      acc[r][2] += av * b2;
      acc[r][3] += av * b3;
    }
  }
  for (std::size_t r = 0; r < M; ++r)
    for (std::size_t j = 0; j < 4; ++j)
      for (std::size_t l = 0; l < 4; ++l) c[r * ldc + 4 * j + l] = acc[r][j][l];
}
#else
template <std::size_t M>
void tile_n16(const double* a, std::size_t lda, const double* b,
              std::size_t ldb, double* c, std::size_t ldc, std::size_t k) {
  tile_full<M, 16>(a, lda, b, ldb, c, ldc, k);
}
#endif

// Ragged edges not covered by a specialised tile.
void tile_any(const double* __restrict a, std::size_t lda,
              const double* __restrict b, std::size_t ldb,
              double* __restrict c, std::size_t ldc, std::size_t k,
              std::size_t mb, std::size_t nb) {
  double acc[kTileM][kTileN] = {};
  for (std::size_t r = 0; r < mb; ++r)
    for (std::size_t j = 0; j < nb; ++j) acc[r][j] = c[r * ldc + j];
  for (std::size_t p = 0; p < k; ++p) {
    const double* brow = b + p * ldb;
    for (std::size_t r = 0; r < mb; ++r) {
      const double av = a[r * lda + p];
      for (std::size_t j = 0; j < nb; ++j) acc[r][j] += av * brow[j];
    }
  }
  for (std::size_t r = 0; r < mb; ++r)
    for (std::size_t j = 0; j < nb; ++j) c[r * ldc + j] = acc[r][j];
}

template <template <std::size_t> class Tile>
void by_rows(const double* a, std::size_t lda, const double* b,
             std::size_t ldb, double* c, std::size_t ldc, std::size_t k,
             std::size_t mb) {
  switch (mb) {
    case 6: Tile<6>::run(a, lda, b, ldb, c, ldc, k); break;
    case 5: Tile<5>::run(a, lda, b, ldb, c, ldc, k); break;
    case 4: Tile<4>::run(a, lda, b, ldb, c, ldc, k); break;
    case 3: Tile<3>::run(a, lda, b, ldb, c, ldc, k); break;
    case 2: Tile<2>::run(a, lda, b, ldb, c, ldc, k); break;
    default: Tile<1>::run(a, lda, b, ldb, c, ldc, k); break;
  }
}

template <std::size_t M>
struct Wide {
  static void run(const double* a, std::size_t lda, const double* b,
                  std::size_t ldb, double* c, std::size_t ldc, std::size_t k) {
    tile_full<M, kTileN>(a, lda, b, ldb, c, ldc, k);
  }
};

template <std::size_t M>
struct Narrow16 {
  static void run(const double* a, std::size_t lda, const double* b,
                  std::size_t ldb, double* c, std::size_t ldc, std::size_t k) {
    tile_n16<M>(a, lda, b, ldb, c, ldc, k);
  }
};

}  // namespace

void gemm_acc(const double* a, const double* b, double* c, std::size_t m,
              std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; i += kTileM) {
    const std::size_t mb = (m - i < kTileM) ? m - i : kTileM;
    for (std::size_t j = 0; j < n; j += kTileN) {
      const std::size_t nb = (n - j < kTileN) ? n - j : kTileN;
      const double* at = a + i * k;
      double* ct = c + i * n + j;
      if (nb == kTileN)
        by_rows<Wide>(at, k, b + j, n, ct, n, k, mb);
      else if (nb == 16)
        by_rows<Narrow16>(at, k, b + j, n, ct, n, k, mb);
      else
        tile_any(at, k, b + j, n, ct, n, k, mb, nb);
    }
  }
}

void gemm(const double* a, const double* b, double* c, std::size_t m,
          std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m * n; ++i) c[i] = 0.0;
  gemm_acc(a, b, c, m, k, n);
}

namespace {

// Compact transpose so the transposed operands can reuse the tuned kernel;
// the copy is O(m*k) against the O(m*k*n) multiply.
std::vector<double> transposed(const double* a, std::size_t rows,
                               std::size_t cols) {
  std::vector<double> t(rows * cols);
  constexpr std::size_t kB = 32;
  for (std::size_t i0 = 0; i0 < rows; i0 += kB)
    for (std::size_t j0 = 0; j0 < cols; j0 += kB) {
      const std::size_t i1 = (i0 + kB < rows) ? i0 + kB : rows;
      const std::size_t j1 = (j0 + kB < cols) ? j0 + kB : cols;
      for (std::size_t i = i0; i < i1; ++i)
        for (std::size_t j = j0; j < j1; ++j) t[j * rows + i] = a[i * cols + j];
    }
  return t;
}

}  // namespace

void gemm_at_acc(const double* a, const double* b, double* c, std::size_t m,
                 std::size_t k, std::size_t n) {
  const std::vector<double> at = transposed(a, k, m);  // now m x k
  gemm_acc(at.data(), b, c, m, k, n);
}

void gemm_bt_acc(const double* a, const double* b, double* c, std::size_t m,
                 std::size_t k, std::size_t n) {
  const std::vector<double> bt = transposed(b, n, k);  // now k x n
  gemm_acc(a, bt.data(), c, m, k, n);
}

}  // namespace fge
