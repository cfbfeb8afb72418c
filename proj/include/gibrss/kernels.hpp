#pragma once

#include <cstddef>
#include <span>

// Dense inner loops. Each kernel has a serial reference and an OpenMP
// version; both visit every output element with the same accumulation
// order, so results are bit-identical regardless of thread count.
namespace gibrss::kernels {

enum class Trans { No, Yes };

struct GemmDims {
  std::size_t m, n, k;
};

// C (+)= op(A) * op(B), op(A) m x k, op(B) k x n, all row-major.
// With accumulate == false, C is overwritten.
namespace serial {
void gemm(Trans ta, Trans tb, GemmDims d, std::span<const double> a, std::span<const double> b, std::span<double> c,
          bool accumulate);
// out[i*n + j] = sum_d (x_i[d] - x_j[d])^2 for an n x dim row-major matrix.
void pairwise_sq_dist(std::size_t n, std::size_t dim, std::span<const double> x, std::span<double> out);
}  // namespace serial

namespace omp {
void gemm(Trans ta, Trans tb, GemmDims d, std::span<const double> a, std::span<const double> b, std::span<double> c,
          bool accumulate);
void pairwise_sq_dist(std::size_t n, std::size_t dim, std::span<const double> x, std::span<double> out);
}  // namespace omp

// Dispatchers: pick the OpenMP kernel when the problem is large enough to
// amortize a parallel region and more than one worker is allowed.
void gemm(Trans ta, Trans tb, GemmDims d, std::span<const double> a, std::span<const double> b, std::span<double> c,
          bool accumulate);
void pairwise_sq_dist(std::size_t n, std::size_t dim, std::span<const double> x, std::span<double> out);

// Worker cap: GIBRSS_THREADS if set and positive, else the OpenMP default.
int worker_threads();
// Applies worker_threads() to the OpenMP runtime.
void apply_thread_cap();

}  // namespace gibrss::kernels
