// AVX2+FMA variants of the dense kernels. Compiled with -mavx2 -mfma in its
// own translation unit; callers must gate on avx2_available().

#include <cstring>

#include "emmpd/kernels.hpp"

#if defined(__x86_64__) || defined(_M_X64)
#include <immintrin.h>
#define EMMPD_HAVE_AVX2_TU 1
#endif

namespace emmpd::kernels::detail {

bool avx2_available() {
#if defined(EMMPD_HAVE_AVX2_TU)
    return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
    return false;
#endif
}

#if defined(EMMPD_HAVE_AVX2_TU)

void gemm_nn_avx2(const double* a, const double* b, double* c, int m, int k,
                  int n, bool accumulate) {
    if (!accumulate) std::memset(c, 0, sizeof(double) * static_cast<size_t>(m) * n);
    const int n4 = n & ~3;
    for (int i = 0; i < m; ++i) {
        const double* arow = a + static_cast<size_t>(i) * k;
        double* crow = c + static_cast<size_t>(i) * n;
        for (int p = 0; p < k; ++p) {
            const double av = arow[p];
            if (av == 0.0) continue;
            const __m256d va = _mm256_set1_pd(av);
            const double* brow = b + static_cast<size_t>(p) * n;
            int j = 0;
            for (; j < n4; j += 4) {
                __m256d vc = _mm256_loadu_pd(crow + j);
                vc = _mm256_fmadd_pd(va, _mm256_loadu_pd(brow + j), vc);
                _mm256_storeu_pd(crow + j, vc);
            }
            for (; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

namespace {

inline double hsum(__m256d v) {
    __m128d lo = _mm256_castpd256_pd128(v);
    __m128d hi = _mm256_extractf128_pd(v, 1);
    lo = _mm_add_pd(lo, hi);
    return _mm_cvtsd_f64(_mm_add_sd(lo, _mm_unpackhi_pd(lo, lo)));
}

}  // namespace

void gemm_nt_avx2(const double* a, const double* b, double* c, int m, int k,
                  int n, bool accumulate) {
    const int k4 = k & ~3;
    for (int i = 0; i < m; ++i) {
        const double* arow = a + static_cast<size_t>(i) * k;
        double* crow = c + static_cast<size_t>(i) * n;
        for (int j = 0; j < n; ++j) {
            const double* brow = b + static_cast<size_t>(j) * k;
            __m256d vacc = _mm256_setzero_pd();
            int p = 0;
            for (; p < k4; p += 4)
                vacc = _mm256_fmadd_pd(_mm256_loadu_pd(arow + p),
                                       _mm256_loadu_pd(brow + p), vacc);
            double acc = hsum(vacc);
            for (; p < k; ++p) acc += arow[p] * brow[p];
            if (accumulate)
                crow[j] += acc;
            else
                crow[j] = acc;
        }
    }
}

void gemm_tn_avx2(const double* a, const double* b, double* c, int m, int k,
                  int n, bool accumulate) {
    if (!accumulate) std::memset(c, 0, sizeof(double) * static_cast<size_t>(m) * n);
    const int n4 = n & ~3;
    for (int p = 0; p < k; ++p) {
        const double* arow = a + static_cast<size_t>(p) * m;
        const double* brow = b + static_cast<size_t>(p) * n;
        for (int i = 0; i < m; ++i) {
            const double av = arow[i];
            if (av == 0.0) continue;
            const __m256d va = _mm256_set1_pd(av);
            double* crow = c + static_cast<size_t>(i) * n;
            int j = 0;
            for (; j < n4; j += 4) {
                __m256d vc = _mm256_loadu_pd(crow + j);
                vc = _mm256_fmadd_pd(va, _mm256_loadu_pd(brow + j), vc);
                _mm256_storeu_pd(crow + j, vc);
            }
            for (; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

#else  // !EMMPD_HAVE_AVX2_TU

void gemm_nn_avx2(const double* a, const double* b, double* c, int m, int k,
                  int n, bool accumulate) {
    gemm_nn_scalar(a, b, c, m, k, n, accumulate);
}
void gemm_nt_avx2(const double* a, const double* b, double* c, int m, int k,
                  int n, bool accumulate) {
    gemm_nt_scalar(a, b, c, m, k, n, accumulate);
}
void gemm_tn_avx2(const double* a, const double* b, double* c, int m, int k,
                  int n, bool accumulate) {
    gemm_tn_scalar(a, b, c, m, k, n, accumulate);
}

#endif

}  // namespace emmpd::kernels::detail
