#pragma once

#include <cstddef>

namespace fge {

// C += A * B for row-major matrices: A is MxK, B is KxN, C is MxN.
// Register-tiled (6 rows x 32 cols per tile); relies on compiler
// autovectorization of the inner column loop.
void gemm_acc(const double* a, const double* b, double* c, std::size_t m,
              std::size_t k, std::size_t n);

// C = A * B (zeroes C first).
void gemm(const double* a, const double* b, double* c, std::size_t m,
          std::size_t k, std::size_t n);

// C += A^T * B where A is KxM (so A^T is MxK), B is KxN.
void gemm_at_acc(const double* a, const double* b, double* c, std::size_t m,
                 std::size_t k, std::size_t n);

// C += A * B^T where A is MxK, B is NxK.
void gemm_bt_acc(const double* a, const double* b, double* c, std::size_t m,
                 std::size_t k, std::size_t n);

}  // namespace fge
