#pragma once

// Inner-loop arithmetic used by the tensor ops. Every kernel has a scalar
// reference implementation; wider variants are picked once at startup from
// what the CPU reports. Set MTL_KERNELS=scalar to force the reference path.

#include <cstddef>
#include <string_view>

namespace mtl::kernels {

enum class Isa { scalar, avx2 };

struct KernelTable {
  Isa isa;
  // sum_i a[i] * b[i]
  double (*dot)(const double* a, const double* b, std::size_t n);
  // y[i] += alpha * x[i]
  void (*axpy)(double alpha, const double* x, double* y, std::size_t n);
  // y[i] += x[i]
  void (*accumulate)(const double* x, double* y, std::size_t n);
  // sum_i x[i]
  double (*sum)(const double* x, std::size_t n);
  // C[m x n] += A[m x k] * B[k x n], all dense row-major.
  void (*gemm)(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b, double* c);
  // C[m x n] += A[m x k] * B[n x k]^T
  void (*gemm_nt)(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b, double* c);
};

const KernelTable& scalar_table();

// nullptr when the variant was not compiled in or the CPU lacks support.
const KernelTable* avx2_table();

// The table used by the ops; resolved on first call.
const KernelTable& active();

// Override the selection (tests and benchmarks). Returns false if the
// requested ISA is unavailable; the active table is then left unchanged.
bool select(Isa isa);

std::string_view name(Isa isa);

}  // namespace mtl::kernels
