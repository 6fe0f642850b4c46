#pragma once

#include <cstddef>

namespace gcnkit::detail {

// C[m x n] += A[m x k] * B[k x n]; all row-major and densely packed. Each
// output element accumulates over k in ascending order, independent of
// blocking and thread count.
void gemm_acc(int m, int n, int k, const float* a, const float* b, float* c);

// dst[n x m] = src[m x n]^T
void transpose(int m, int n, const float* src, float* dst);

}  // namespace gcnkit::detail
