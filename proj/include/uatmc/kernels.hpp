#pragma once

// Dense and sparse numeric kernels. Every kernel exists twice: a plain
// serial reference in `serial::` and an OpenMP version in `parallel::`.
// Each output element is produced by exactly one thread with the same
// summation order as the reference, so both variants agree bitwise.

#include <cstddef>
#include <span>
#include <vector>

namespace uatmc::kernels {

enum class Backend { kSerial, kParallel };

void set_backend(Backend b);
Backend backend();
int max_threads();

// Compressed sparse rows with double weights.
struct Csr {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<std::size_t> indptr{0};
  std::vector<std::size_t> indices;
  std::vector<double> values;

  std::size_t nnz() const { return indices.size(); }
};

struct ScoredItem {
  double score;
  std::size_t item;
};

// Ranking order: higher score first, ties broken by ascending item id.
inline bool ranks_before(const ScoredItem& a, const ScoredItem& b) {
  return a.score > b.score || (a.score == b.score && a.item < b.item);
}

namespace serial {
// C[m x n] = op(A) * op(B), op(X) = X or X^T.
void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k,
          std::span<const double> a, std::span<const double> b, std::span<double> c);
// Y[rows x d] = S * X[cols x d]
void spmm(const Csr& s, std::span<const double> x, std::size_t d, std::span<double> y);
// Best `keep` entries of each row of scores[rows x cols], skipping excluded[row].
std::vector<std::vector<ScoredItem>> top_entries(std::span<const double> scores, std::size_t rows,
                                                 std::size_t cols,
                                                 const std::vector<std::vector<std::size_t>>& excluded,
                                                 std::size_t keep);
}  // namespace serial

namespace parallel {
void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k,
          std::span<const double> a, std::span<const double> b, std::span<double> c);
void spmm(const Csr& s, std::span<const double> x, std::size_t d, std::span<double> y);
std::vector<std::vector<ScoredItem>> top_entries(std::span<const double> scores, std::size_t rows,
                                                 std::size_t cols,
                                                 const std::vector<std::vector<std::size_t>>& excluded,
                                                 std::size_t keep);
}  // namespace parallel

// Dispatch on the active backend.
void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k,
          std::span<const double> a, std::span<const double> b, std::span<double> c);
void spmm(const Csr& s, std::span<const double> x, std::size_t d, std::span<double> y);
std::vector<std::vector<ScoredItem>> top_entries(std::span<const double> scores, std::size_t rows,
                                                 std::size_t cols,
                                                 const std::vector<std::vector<std::size_t>>& excluded,
                                                 std::size_t keep);

}  // namespace uatmc::kernels
