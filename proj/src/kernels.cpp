#include "emmpd/kernels.hpp"

#include <cstring>

namespace emmpd::kernels {

namespace detail {

void gemm_nn_scalar(const double* a, const double* b, double* c, int m, int k,
                    int n, bool accumulate) {
    if (!accumulate) std::memset(c, 0, sizeof(double) * static_cast<size_t>(m) * n);
    for (int i = 0; i < m; ++i) {
        const double* arow = a + static_cast<size_t>(i) * k;
        double* crow = c + static_cast<size_t>(i) * n;
        for (int p = 0; p < k; ++p) {
            const double av = arow[p];
            if (av == 0.0) continue;
            const double* brow = b + static_cast<size_t>(p) * n;
            for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

void gemm_nt_scalar(const double* a, const double* b, double* c, int m, int k,
                    int n, bool accumulate) {
    for (int i = 0; i < m; ++i) {
        const double* arow = a + static_cast<size_t>(i) * k;
        double* crow = c + static_cast<size_t>(i) * n;
        for (int j = 0; j < n; ++j) {
            const double* brow = b + static_cast<size_t>(j) * k;
            double acc = 0.0;
            for (int p = 0; p < k; ++p) acc += arow[p] * brow[p];
            if (accumulate)
                crow[j] += acc;
            else
                crow[j] = acc;
        }
    }
}

void gemm_tn_scalar(const double* a, const double* b, double* c, int m, int k,
                    int n, bool accumulate) {
    if (!accumulate) std::memset(c, 0, sizeof(double) * static_cast<size_t>(m) * n);
    for (int p = 0; p < k; ++p) {
        const double* arow = a + static_cast<size_t>(p) * m;
        const double* brow = b + static_cast<size_t>(p) * n;
        for (int i = 0; i < m; ++i) {
            const double av = arow[i];
            if (av == 0.0) continue;
            double* crow = c + static_cast<size_t>(i) * n;
            for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

}  // namespace detail

namespace {

Backend pick_default() {
    return detail::avx2_available() ? Backend::Avx2 : Backend::Scalar;
}

Backend g_backend = pick_default();

}  // namespace

Backend active_backend() { return g_backend; }

void force_backend(Backend b) {
    if (b == Backend::Avx2 && !detail::avx2_available()) b = Backend::Scalar;
    g_backend = b;
}

std::string backend_name(Backend b) {
    return b == Backend::Avx2 ? "avx2" : "scalar";
}

void gemm_nn(const double* a, const double* b, double* c, int m, int k, int n,
             bool accumulate) {
    if (g_backend == Backend::Avx2)
        detail::gemm_nn_avx2(a, b, c, m, k, n, accumulate);
    else
        detail::gemm_nn_scalar(a, b, c, m, k, n, accumulate);
}

void gemm_nt(const double* a, const double* b, double* c, int m, int k, int n,
             bool accumulate) {
    if (g_backend == Backend::Avx2)
        detail::gemm_nt_avx2(a, b, c, m, k, n, accumulate);
    else
        detail::gemm_nt_scalar(a, b, c, m, k, n, accumulate);
}

void gemm_tn(const double* a, const double* b, double* c, int m, int k, int n,
             bool accumulate) {
    if (g_backend == Backend::Avx2)
        detail::gemm_tn_avx2(a, b, c, m, k, n, accumulate);
    else
        detail::gemm_tn_scalar(a, b, c, m, k, n, accumulate);
}

}  // namespace emmpd::kernels
