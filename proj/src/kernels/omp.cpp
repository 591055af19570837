#include "peftlab/kernels.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace peftlab::kernels {

namespace {
std::atomic<int> g_max_threads{0};  // 0 = runtime default

int thread_count() {
#ifdef _OPENMP
  const int cap = g_max_threads.load();
  return cap > 0 ? cap : omp_get_max_threads();
#else
  return 1;
#endif
}

// Below this many multiply-adds the fork/join overhead dominates.
constexpr std::size_t kParallelWork = 1 << 15;
}  // namespace

void set_max_threads(int n) { g_max_threads.store(n < 0 ? 0 : n); }
int max_threads() { return thread_count(); }

bool openmp_enabled() {
#ifdef _OPENMP
  return true;
#else
  return false;
#endif
}

namespace omp {

void gemm_nn(std::span<const double> a, std::span<const double> b,
             std::span<double> c, std::size_t m, std::size_t k, std::size_t n,
             bool accumulate) {
  const auto rows = static_cast<std::ptrdiff_t>(m);
#pragma omp parallel for schedule(static) num_threads(thread_count())
  for (std::ptrdiff_t ii = 0; ii < rows; ++ii) {
    const auto i = static_cast<std::size_t>(ii);
    double* ci = c.data() + i * n;
    if (!accumulate) std::fill(ci, ci + n, 0.0);
    const double* ai = a.data() + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = ai[p];
      const double* bp = b.data() + p * n;
      for (std::size_t j = 0; j < n; ++j) ci[j] += aip * bp[j];
    }
  }
}

void gemm_nt(std::span<const double> a, std::span<const double> b,
             std::span<double> c, std::size_t m, std::size_t k, std::size_t n,
             bool accumulate) {
  const auto rows = static_cast<std::ptrdiff_t>(m);
#pragma omp parallel for schedule(static) num_threads(thread_count())
  for (std::ptrdiff_t ii = 0; ii < rows; ++ii) {
    const auto i = static_cast<std::size_t>(ii);
    const double* ai = a.data() + i * k;
    double* ci = c.data() + i * n;
    for (std::size_t j = 0; j < n; ++j) {
      const double* bj = b.data() + j * k;
      double s = 0.0;
      for (std::size_t p = 0; p < k; ++p) s += ai[p] * bj[p];
      ci[j] = accumulate ? ci[j] + s : s;
    }
  }
}

void gemm_tn(std::span<const double> a, std::span<const double> b,
             std::span<double> c, std::size_t m, std::size_t k, std::size_t n,
             bool accumulate) {
  const auto rows = static_cast<std::ptrdiff_t>(m);
#pragma omp parallel for schedule(static) num_threads(thread_count())
  for (std::ptrdiff_t ii = 0; ii < rows; ++ii) {
    const auto i = static_cast<std::size_t>(ii);
    double* ci = c.data() + i * n;
    if (!accumulate) std::fill(ci, ci + n, 0.0);
    for (std::size_t p = 0; p < k; ++p) {
      const double api = a[p * m + i];
      const double* bp = b.data() + p * n;
      for (std::size_t j = 0; j < n; ++j) ci[j] += api * bp[j];
    }
  }
}

void softmax_rows(std::span<const double> x, std::span<double> y,
                  std::size_t rows, std::size_t cols) {
  const auto nrows = static_cast<std::ptrdiff_t>(rows);
#pragma omp parallel for schedule(static) num_threads(thread_count())
  for (std::ptrdiff_t rr = 0; rr < nrows; ++rr) {
    const auto r = static_cast<std::size_t>(rr);
    const double* xr = x.data() + r * cols;
    double* yr = y.data() + r * cols;
    const double mx = *std::max_element(xr, xr + cols);
    double sum = 0.0;
    for (std::size_t j = 0; j < cols; ++j) {
      yr[j] = std::exp(xr[j] - mx);
      sum += yr[j];
    }
    const double inv = 1.0 / sum;
    for (std::size_t j = 0; j < cols; ++j) yr[j] *= inv;
  }
}

}  // namespace omp

namespace {
bool go_parallel(std::size_t work) {
  return work >= kParallelWork && thread_count() > 1;
}
}  // namespace

void gemm_nn(std::span<const double> a, std::span<const double> b,
             std::span<double> c, std::size_t m, std::size_t k, std::size_t n,
             bool accumulate) {
  if (go_parallel(m * k * n)) {
    omp::gemm_nn(a, b, c, m, k, n, accumulate);
  } else {
    serial::gemm_nn(a, b, c, m, k, n, accumulate);
  }
}

void gemm_nt(std::span<const double> a, std::span<const double> b,
             std::span<double> c, std::size_t m, std::size_t k, std::size_t n,
             bool accumulate) {
  if (go_parallel(m * k * n)) {
    omp::gemm_nt(a, b, c, m, k, n, accumulate);
  } else {
    serial::gemm_nt(a, b, c, m, k, n, accumulate);
  }
}

void gemm_tn(std::span<const double> a, std::span<const double> b,
             std::span<double> c, std::size_t m, std::size_t k, std::size_t n,
             bool accumulate) {
  if (go_parallel(m * k * n)) {
    omp::gemm_tn(a, b, c, m, k, n, accumulate);
  } else {
    serial::gemm_tn(a, b, c, m, k, n, accumulate);
  }
}

void softmax_rows(std::span<const double> x, std::span<double> y,
                  std::size_t rows, std::size_t cols) {
  if (go_parallel(rows * cols * 8)) {
    omp::softmax_rows(x, y, rows, cols);
  } else {
    serial::softmax_rows(x, y, rows, cols);
  }
}

}  // namespace peftlab::kernels
