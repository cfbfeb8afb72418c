#include "gibrss/kernels.hpp"

#include <omp.h>

#include <cstdlib>
#include <string>

#include "gibrss/errors.hpp"

namespace gibrss::kernels {

namespace {

void check_gemm(GemmDims d, std::span<const double> a, std::span<const double> b, std::span<double> c) {
  if (a.size() != d.m * d.k || b.size() != d.k * d.n || c.size() != d.m * d.n)
    throw DimensionError("gemm: buffer sizes do not match m=" + std::to_string(d.m) + " n=" + std::to_string(d.n) +
                         " k=" + std::to_string(d.k));
}

// One output row. Shared by both kernels so the accumulation order is the same.
inline void gemm_row(Trans ta, Trans tb, GemmDims d, const double* a, const double* b, double* c, std::size_t i,
                     bool accumulate) {
  double* ci = c + i * d.n;
  if (!accumulate)
    for (std::size_t j = 0; j < d.n; ++j) ci[j] = 0.0;
  if (tb == Trans::No) {
    for (std::size_t p = 0; p < d.k; ++p) {
      const double av = ta == Trans::No ? a[i * d.k + p] : a[p * d.m + i];
      const double* bp = b + p * d.n;
      for (std::size_t j = 0; j < d.n; ++j) ci[j] += av * bp[j];
    }
  } else {
    for (std::size_t j = 0; j < d.n; ++j) {
      const double* bj = b + j * d.k;
      double s = 0.0;
      if (ta == Trans::No) {
        const double* ai = a + i * d.k;
        for (std::size_t p = 0; p < d.k; ++p) s += ai[p] * bj[p];
      } else {
        for (std::size_t p = 0; p < d.k; ++p) s += a[p * d.m + i] * bj[p];
      }
      ci[j] += s;
    }
  }
}

inline void dist_row(std::size_t n, std::size_t dim, const double* x, double* out, std::size_t i) {
  const double* xi = x + i * dim;
  for (std::size_t j = 0; j < n; ++j) {
    const double* xj = x + j * dim;
    double s = 0.0;
    for (std::size_t q = 0; q < dim; ++q) {
      const double diff = xi[q] - xj[q];
      s += diff * diff;
    }
    out[i * n + j] = s;
  }
}

constexpr std::size_t kParallelWork = 1 << 16;

}  // namespace

namespace serial {

void gemm(Trans ta, Trans tb, GemmDims d, std::span<const double> a, std::span<const double> b, std::span<double> c,
          bool accumulate) {
  check_gemm(d, a, b, c);
  for (std::size_t i = 0; i < d.m; ++i) gemm_row(ta, tb, d, a.data(), b.data(), c.data(), i, accumulate);
}

void pairwise_sq_dist(std::size_t n, std::size_t dim, std::span<const double> x, std::span<double> out) {
  if (x.size() != n * dim || out.size() != n * n) throw DimensionError("pairwise_sq_dist: buffer sizes");
  for (std::size_t i = 0; i < n; ++i) dist_row(n, dim, x.data(), out.data(), i);
}

}  // namespace serial

namespace omp {

void gemm(Trans ta, Trans tb, GemmDims d, std::span<const double> a, std::span<const double> b, std::span<double> c,
          bool accumulate) {
  check_gemm(d, a, b, c);
  const auto m = static_cast<std::ptrdiff_t>(d.m);
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t i = 0; i < m; ++i)
    gemm_row(ta, tb, d, a.data(), b.data(), c.data(), static_cast<std::size_t>(i), accumulate);
}

void pairwise_sq_dist(std::size_t n, std::size_t dim, std::span<const double> x, std::span<double> out) {
  if (x.size() != n * dim || out.size() != n * n) throw DimensionError("pairwise_sq_dist: buffer sizes");
  const auto rows = static_cast<std::ptrdiff_t>(n);
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t i = 0; i < rows; ++i) dist_row(n, dim, x.data(), out.data(), static_cast<std::size_t>(i));
}

}  // namespace omp

namespace {
bool use_parallel(std::size_t work) {
  return work >= kParallelWork && !omp_in_parallel() && omp_get_max_threads() > 1;
}
}  // namespace

void gemm(Trans ta, Trans tb, GemmDims d, std::span<const double> a, std::span<const double> b, std::span<double> c,
          bool accumulate) {
  if (use_parallel(d.m * d.n * d.k))
    omp::gemm(ta, tb, d, a, b, c, accumulate);
  else
    serial::gemm(ta, tb, d, a, b, c, accumulate);
}

void pairwise_sq_dist(std::size_t n, std::size_t dim, std::span<const double> x, std::span<double> out) {
  if (use_parallel(n * n * dim))
    omp::pairwise_sq_dist(n, dim, x, out);
  else
    serial::pairwise_sq_dist(n, dim, x, out);
}

int worker_threads() {
  if (const char* env = std::getenv("GIBRSS_THREADS")) {
    char* end = nullptr;
    const long v = std::strtol(env, &end, 10);
    if (end != env && v > 0) return static_cast<int>(v);
  }
  return omp_get_num_procs();
}

void apply_thread_cap() { omp_set_num_threads(worker_threads()); }

}  // namespace gibrss::kernels
