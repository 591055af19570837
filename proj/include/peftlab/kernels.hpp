#pragma once

// Dense row-major kernels behind the autodiff ops.
//
// Every kernel exists twice: a serial reference in `serial::` and an OpenMP
// version in `omp::` that splits work over output rows only. Each output
// element is produced by a single thread with the same inner-loop order as the
// serial version, so both produce bitwise-identical results for any thread
// count. The unqualified entry points dispatch on problem size.

#include <cstddef>
#include <span>

namespace peftlab::kernels {

// c[m,n] (+)= a[m,k] * b[k,n]
// c[m,n] (+)= a[m,k] * b[n,k]^T
// c[m,n] (+)= a[k,m]^T * b[k,n]
// When `accumulate` is false, c is overwritten.
#define PEFTLAB_KERNEL_DECLS                                                  \
  void gemm_nn(std::span<const double> a, std::span<const double> b,          \
               std::span<double> c, std::size_t m, std::size_t k,             \
               std::size_t n, bool accumulate);                               \
  void gemm_nt(std::span<const double> a, std::span<const double> b,          \
               std::span<double> c, std::size_t m, std::size_t k,             \
               std::size_t n, bool accumulate);                               \
  void gemm_tn(std::span<const double> a, std::span<const double> b,          \
               std::span<double> c, std::size_t m, std::size_t k,             \
               std::size_t n, bool accumulate);                               \
  /* Max-subtracted softmax of each row of x[rows, cols] into y. */           \
  void softmax_rows(std::span<const double> x, std::span<double> y,           \
                    std::size_t rows, std::size_t cols);

namespace serial {
PEFTLAB_KERNEL_DECLS
}
namespace omp {
PEFTLAB_KERNEL_DECLS
}
PEFTLAB_KERNEL_DECLS

#undef PEFTLAB_KERNEL_DECLS

// Thread cap for the dispatching kernels; 1 forces the serial path.
void set_max_threads(int n);
int max_threads();

// True when the library was built with OpenMP.
bool openmp_enabled();

}  // namespace peftlab::kernels
