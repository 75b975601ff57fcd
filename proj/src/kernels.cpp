#include "uatmc/kernels.hpp"

#include <algorithm>
#include <atomic>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace uatmc::kernels {

namespace {

std::atomic<Backend> g_backend{Backend::kParallel};

// Work below this many multiply-adds is not worth a parallel region.
constexpr std::size_t kParallelGrain = 1 << 15;

inline double gemm_entry(bool ta, bool tb, std::size_t m, std::size_t n, std::size_t k,
                         std::span<const double> a, std::span<const double> b, std::size_t i,
                         std::size_t j) {
  double s = 0.0;
  for (std::size_t p = 0; p < k; ++p) {
    const double av = ta ? a[p * m + i] : a[i * k + p];
    const double bv = tb ? b[j * k + p] : b[p * n + j];
    s += av * bv;
  }
  return s;
}

inline void gemm_row(bool ta, bool tb, std::size_t m, std::size_t n, std::size_t k,
                     std::span<const double> a, std::span<const double> b, std::span<double> c,
                     std::size_t i) {
  if (!ta && !tb) {
    // Row-major friendly order; per-entry accumulation order still p = 0..k-1.
    double* out = c.data() + i * n;
    std::fill(out, out + n, 0.0);
    for (std::size_t p = 0; p < k; ++p) {
      const double av = a[i * k + p];
      const double* brow = b.data() + p * n;
      for (std::size_t j = 0; j < n; ++j) out[j] += av * brow[j];
    }
    return;
  }
  for (std::size_t j = 0; j < n; ++j) c[i * n + j] = gemm_entry(ta, tb, m, n, k, a, b, i, j);
}

inline void spmm_row(const Csr& s, std::span<const double> x, std::size_t d, std::span<double> y,
                     std::size_t r) {
  double* out = y.data() + r * d;
  std::fill(out, out + d, 0.0);
  for (std::size_t e = s.indptr[r]; e < s.indptr[r + 1]; ++e) {
    const double w = s.values[e];
    const double* xr = x.data() + s.indices[e] * d;
    for (std::size_t c = 0; c < d; ++c) out[c] += w * xr[c];
  }
}

std::vector<ScoredItem> top_row(std::span<const double> row, const std::vector<std::size_t>& excluded,
                                std::size_t keep) {
  // `excluded` is sorted ascending.
  std::vector<ScoredItem> cand;
  cand.reserve(row.size());
  auto ex = excluded.begin();
  for (std::size_t j = 0; j < row.size(); ++j) {
    while (ex != excluded.end() && *ex < j) ++ex;
    if (ex != excluded.end() && *ex == j) continue;
    cand.push_back({row[j], j});
  }
  const std::size_t take = std::min(keep, cand.size());
  std::partial_sort(cand.begin(), cand.begin() + static_cast<std::ptrdiff_t>(take), cand.end(),
                    ranks_before);
  cand.resize(take);
  return cand;
}

}  // namespace

void set_backend(Backend b) { g_backend.store(b); }
Backend backend() { return g_backend.load(); }

int max_threads() {
#ifdef _OPENMP
  return omp_get_max_threads();
#else
  return 1;
#endif
}

namespace serial {

void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k,
          std::span<const double> a, std::span<const double> b, std::span<double> c) {
  for (std::size_t i = 0; i < m; ++i) gemm_row(trans_a, trans_b, m, n, k, a, b, c, i);
}

void spmm(const Csr& s, std::span<const double> x, std::size_t d, std::span<double> y) {
  for (std::size_t r = 0; r < s.rows; ++r) spmm_row(s, x, d, y, r);
}

std::vector<std::vector<ScoredItem>> top_entries(std::span<const double> scores, std::size_t rows,
                                                 std::size_t cols,
                                                 const std::vector<std::vector<std::size_t>>& excluded,
                                                 std::size_t keep) {
  std::vector<std::vector<ScoredItem>> out(rows);
  for (std::size_t r = 0; r < rows; ++r) out[r] = top_row(scores.subspan(r * cols, cols), excluded[r], keep);
  return out;
}

}  // namespace serial

namespace parallel {

void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k,
          std::span<const double> a, std::span<const double> b, std::span<double> c) {
  const bool big = m * n * k >= kParallelGrain;
  const auto rows = static_cast<std::ptrdiff_t>(m);
#pragma omp parallel for schedule(static) if (big)
  for (std::ptrdiff_t i = 0; i < rows; ++i) {
    gemm_row(trans_a, trans_b, m, n, k, a, b, c, static_cast<std::size_t>(i));
  }
}

void spmm(const Csr& s, std::span<const double> x, std::size_t d, std::span<double> y) {
  const bool big = s.nnz() * d >= kParallelGrain;
  const auto rows = static_cast<std::ptrdiff_t>(s.rows);
#pragma omp parallel for schedule(dynamic, 64) if (big)
  for (std::ptrdiff_t r = 0; r < rows; ++r) spmm_row(s, x, d, y, static_cast<std::size_t>(r));
}

std::vector<std::vector<ScoredItem>> top_entries(std::span<const double> scores, std::size_t rows,
                                                 std::size_t cols,
                                                 const std::vector<std::vector<std::size_t>>& excluded,
                                                 std::size_t keep) {
  std::vector<std::vector<ScoredItem>> out(rows);
  const auto n = static_cast<std::ptrdiff_t>(rows);
#pragma omp parallel for schedule(dynamic, 32) if (rows * cols >= kParallelGrain)
  for (std::ptrdiff_t r = 0; r < n; ++r) {
    const auto ur = static_cast<std::size_t>(r);
    out[ur] = top_row(scores.subspan(ur * cols, cols), excluded[ur], keep);
  }
  return out;
}

}  // namespace parallel

void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k,
          std::span<const double> a, std::span<const double> b, std::span<double> c) {
  if (backend() == Backend::kParallel) {
    parallel::gemm(trans_a, trans_b, m, n, k, a, b, c);
  } else {
    serial::gemm(trans_a, trans_b, m, n, k, a, b, c);
  }
}

void spmm(const Csr& s, std::span<const double> x, std::size_t d, std::span<double> y) {
  if (backend() == Backend::kParallel) {
    parallel::spmm(s, x, d, y);
  } else {
    serial::spmm(s, x, d, y);
  }
}

std::vector<std::vector<ScoredItem>> top_entries(std::span<const double> scores, std::size_t rows,
                                                 std::size_t cols,
                                                 const std::vector<std::vector<std::size_t>>& excluded,
                                                 std::size_t keep) {
  if (backend() == Backend::kParallel) return parallel::top_entries(scores, rows, cols, excluded, keep);
  return serial::top_entries(scores, rows, cols, excluded, keep);
}

}  // namespace uatmc::kernels
