#pragma once

#include <string>

namespace emmpd::kernels {

enum class Backend { Scalar, Avx2 };

// Backend selected at load time from CPUID; Avx2 requires AVX2+FMA.
Backend active_backend();
// Override for tests and the --threads/--backend style plumbing.
void force_backend(Backend b);
std::string backend_name(Backend b);

// Row-major double GEMM. When accumulate is false, C is overwritten.
// C(m x n) = A(m x k) * B(k x n)
void gemm_nn(const double* a, const double* b, double* c, int m, int k, int n,
             bool accumulate = false);
// C(m x n) = A(m x k) * B(n x k)^T
void gemm_nt(const double* a, const double* b, double* c, int m, int k, int n,
             bool accumulate = false);
// C(m x n) = A(k x m)^T * B(k x n)
void gemm_tn(const double* a, const double* b, double* c, int m, int k, int n,
             bool accumulate = false);

namespace detail {
// Reference kernels, always available; the SIMD variants are
// equivalence-tested against these.
void gemm_nn_scalar(const double* a, const double* b, double* c, int m, int k,
                    int n, bool accumulate);
void gemm_nt_scalar(const double* a, const double* b, double* c, int m, int k,
                    int n, bool accumulate);
void gemm_tn_scalar(const double* a, const double* b, double* c, int m, int k,
                    int n, bool accumulate);

bool avx2_available();
void gemm_nn_avx2(const double* a, const double* b, double* c, int m, int k,
                  int n, bool accumulate);
void gemm_nt_avx2(const double* a, const double* b, double* c, int m, int k,
                  int n, bool accumulate);
void gemm_tn_avx2(const double* a, const double* b, double* c, int m, int k,
                  int n, bool accumulate);
}  // namespace detail

}  // namespace emmpd::kernels
