// AVX2 + FMA variants. This file is compiled with -mavx2 -mfma and must only
// be entered through the dispatcher.
#include "hiervid/kernels.hpp"

#ifdef HIERVID_HAVE_AVX2
#include <immintrin.h>

#include <algorithm>

namespace hiervid::kernels {
namespace {

inline double hsum(__m256d v) {
    const __m128d lo = _mm256_castpd256_pd128(v);
    const __m128d hi = _mm256_extractf128_pd(v, 1);
    const __m128d s = _mm_add_pd(lo, hi);
    return _mm_cvtsd_f64(_mm_add_sd(s, _mm_unpackhi_pd(s, s)));
}

double dot_avx2(const double* a, const double* b, std::size_t n) {
    __m256d acc0 = _mm256_setzero_pd();
    __m256d acc1 = _mm256_setzero_pd();
    std::size_t i = 0;
    for (; i + 8 <= n; i += 8) {
        acc0 = _mm256_fmadd_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i), acc0);
        acc1 = _mm256_fmadd_pd(_mm256_loadu_pd(a + i + 4), _mm256_loadu_pd(b + i + 4), acc1);
    }
    for (; i + 4 <= n; i += 4)
        acc0 = _mm256_fmadd_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i), acc0);
    double acc = hsum(_mm256_add_pd(acc0, acc1));
    for (; i < n; ++i) acc += a[i] * b[i];
    return acc;
}

void axpy_avx2(double alpha, const double* x, double* y, std::size_t n) {
    const __m256d va = _mm256_set1_pd(alpha);
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4)
        _mm256_storeu_pd(y + i, _mm256_fmadd_pd(va, _mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i)));
    for (; i < n; ++i) y[i] += alpha * x[i];
}

// 4x8 register tile: four rows of A broadcast against two vectors of B.
// Rows [0, m) of C += A[:, p0:p1] * B[p0:p1, :].
void gemm_panel(std::size_t m, std::size_t n, std::size_t p0, std::size_t p1, MatrixView a,
                const double* b, double* c) {
    const std::size_t rs = a.row_stride;
    const std::size_t cs = a.col_stride;
    std::size_t i = 0;
    for (; i + 4 <= m; i += 4) {
        std::size_t j = 0;
        for (; j + 8 <= n; j += 8) {
            __m256d c00 = _mm256_loadu_pd(c + (i + 0) * n + j);
            __m256d c01 = _mm256_loadu_pd(c + (i + 0) * n + j + 4);
            __m256d c10 = _mm256_loadu_pd(c + (i + 1) * n + j);
            __m256d c11 = _mm256_loadu_pd(c + (i + 1) * n + j + 4);
            __m256d c20 = _mm256_loadu_pd(c + (i + 2) * n + j);
            __m256d c21 = _mm256_loadu_pd(c + (i + 2) * n + j + 4);
            __m256d c30 = _mm256_loadu_pd(c + (i + 3) * n + j);
            __m256d c31 = _mm256_loadu_pd(c + (i + 3) * n + j + 4);
            for (std::size_t p = p0; p < p1; ++p) {
                const __m256d b0 = _mm256_loadu_pd(b + p * n + j);
                const __m256d b1 = _mm256_loadu_pd(b + p * n + j + 4);
                const double* ap = a.data + p * cs;
                __m256d av = _mm256_broadcast_sd(ap + (i + 0) * rs);
                c00 = _mm256_fmadd_pd(av, b0, c00);
                c01 = _mm256_fmadd_pd(av, b1, c01);
                av = _mm256_broadcast_sd(ap + (i + 1) * rs);
                c10 = _mm256_fmadd_pd(av, b0, c10);
                c11 = _mm256_fmadd_pd(av, b1, c11);
                av = _mm256_broadcast_sd(ap + (i + 2) * rs);
                c20 = _mm256_fmadd_pd(av, b0, c20);
                c21 = _mm256_fmadd_pd(av, b1, c21);
                av = _mm256_broadcast_sd(ap + (i + 3) * rs);
                c30 = _mm256_fmadd_pd(av, b0, c30);
                c31 = _mm256_fmadd_pd(av, b1, c31);
            }
            _mm256_storeu_pd(c + (i + 0) * n + j, c00);
            _mm256_storeu_pd(c + (i + 0) * n + j + 4, c01);
            _mm256_storeu_pd(c + (i + 1) * n + j, c10);
            _mm256_storeu_pd(c + (i + 1) * n + j + 4, c11);
            _mm256_storeu_pd(c + (i + 2) * n + j, c20);
            _mm256_storeu_pd(c + (i + 2) * n + j + 4, c21);
            _mm256_storeu_pd(c + (i + 3) * n + j, c30);
            _mm256_storeu_pd(c + (i + 3) * n + j + 4, c31);
        }
        // column tail
        for (std::size_t r = i; r < i + 4; ++r) {
            for (std::size_t p = p0; p < p1; ++p) {
                const double a_rp = a.data[r * rs + p * cs];
                for (std::size_t jj = j; jj < n; ++jj) c[r * n + jj] += a_rp * b[p * n + jj];
            }
        }
    }
    for (; i < m; ++i) {
        double* c_row = c + i * n;
        for (std::size_t p = p0; p < p1; ++p) axpy_avx2(a.data[i * rs + p * cs], b + p * n, c_row, n);
    }
}

// Blocking over k keeps the B panel cache-resident; every C entry still
// accumulates its products in increasing p order.
void gemm_avx2(std::size_t m, std::size_t n, std::size_t k, MatrixView a,
               const double* b, double* c) {
    constexpr std::size_t kc = 128;
    for (std::size_t p0 = 0; p0 < k; p0 += kc) gemm_panel(m, n, p0, std::min(k, p0 + kc), a, b, c);
}

void sq_dist_rows_avx2(const double* a, const double* b, std::size_t rows, std::size_t d,
                       double* out) {
    for (std::size_t r = 0; r < rows; ++r) {
        const double* row = a + r * d;
        __m256d acc = _mm256_setzero_pd();
        std::size_t j = 0;
        for (; j + 4 <= d; j += 4) {
            const __m256d diff = _mm256_sub_pd(_mm256_loadu_pd(row + j), _mm256_loadu_pd(b + j));
            acc = _mm256_fmadd_pd(diff, diff, acc);
        }
        double s = hsum(acc);
        for (; j < d; ++j) {
            const double diff = row[j] - b[j];
            s += diff * diff;
        }
        out[r] = s;
    }
}

}  // namespace

const KernelTable& avx2_table() {
    static const KernelTable table{dot_avx2, axpy_avx2, gemm_avx2, sq_dist_rows_avx2};
    return table;
}

}  // namespace hiervid::kernels
#endif
