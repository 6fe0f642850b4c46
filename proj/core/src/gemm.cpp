#include "gemm.hpp"

#include <algorithm>

#include "gcnkit/parallel.hpp"

namespace gcnkit::detail {
namespace {

constexpr int kColBlock = 512;

void rows4(int n, int k, const float* a, int lda, const float* __restrict b, float* c, int ldc) {
  for (int j0 = 0; j0 < n; j0 += kColBlock) {
    const int j1 = std::min(n, j0 + kColBlock);
    float* __restrict c0 = c + j0;
    float* __restrict c1 = c + ldc + j0;
    float* __restrict c2 = c + 2 * ldc + j0;
    float* __restrict c3 = c + 3 * ldc + j0;
    const int len = j1 - j0;
    for (int p = 0; p < k; ++p) {
      const float a0 = a[p];
      const float a1 = a[lda + p];
      const float a2 = a[2 * lda + p];
      const float a3 = a[3 * lda + p];
      const float* __restrict bp = b + static_cast<std::size_t>(p) * n + j0;
      for (int j = 0; j < len; ++j) {
        const float bv = bp[j];
        c0[j] += a0 * bv;
        c1[j] += a1 * bv;
        c2[j] += a2 * bv;
        c3[j] += a3 * bv;
      }
    }
  }
}

void row1(int n, int k, const float* a, const float* __restrict b, float* __restrict c) {
  for (int j0 = 0; j0 < n; j0 += kColBlock) {
    const int j1 = std::min(n, j0 + kColBlock);
    for (int p = 0; p < k; ++p) {
      const float av = a[p];
      const float* __restrict bp = b + static_cast<std::size_t>(p) * n;
      for (int j = j0; j < j1; ++j) c[j] += av * bp[j];
    }
  }
}

}  // namespace

void gemm_acc(int m, int n, int k, const float* a, const float* b, float* c) {
  if (m <= 0 || n <= 0 || k <= 0) return;
  const std::size_t blocks = static_cast<std::size_t>((m + 3) / 4);
  const std::size_t work_per_block = static_cast<std::size_t>(n) * k * 4;
  const std::size_t grain = std::max<std::size_t>(1, (1u << 18) / std::max<std::size_t>(1, work_per_block));
  parallel_for(blocks, grain, [&](std::size_t begin, std::size_t end) {
    for (std::size_t blk = begin; blk < end; ++blk) {
      const int i = static_cast<int>(blk) * 4;
      const float* ai = a + static_cast<std::size_t>(i) * k;
      float* ci = c + static_cast<std::size_t>(i) * n;
      if (i + 4 <= m) {
        rows4(n, k, ai, k, b, ci, n);
      } else {
        for (int r = i; r < m; ++r) {
          row1(n, k, a + static_cast<std::size_t>(r) * k, b, c + static_cast<std::size_t>(r) * n);
        }
      }
    }
  });
}

void transpose(int m, int n, const float* src, float* dst) {
  constexpr int kTile = 32;
  for (int i0 = 0; i0 < m; i0 += kTile) {
    for (int j0 = 0; j0 < n; j0 += kTile) {
      const int i1 = std::min(m, i0 + kTile);
      const int j1 = std::min(n, j0 + kTile);
      for (int i = i0; i < i1; ++i) {
        for (int j = j0; j < j1; ++j) {
          dst[static_cast<std::size_t>(j) * m + i] = src[static_cast<std::size_t>(i) * n + j];
        }
      }
    }
  }
}

}  // namespace gcnkit::detail
