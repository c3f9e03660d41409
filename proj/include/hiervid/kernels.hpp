#pragma once
// Dense double-precision inner loops used by the tensor engine.
//
// Every kernel has a portable scalar reference and, on x86-64, an AVX2+FMA
// variant. The active backend is picked once at startup from CPUID and can be
// overridden with HIERVID_KERNELS=scalar|avx2 or set_backend().

#include <cstddef>
#include <span>
#include <string_view>

namespace hiervid::kernels {

enum class Backend { scalar, avx2 };

/// Strided read-only matrix view: element (r, c) lives at data[r*row_stride + c*col_stride].
struct MatrixView {
    const double* data;
    std::size_t row_stride;
    std::size_t col_stride;
};

struct KernelTable {
    double (*dot)(const double* a, const double* b, std::size_t n);
    void (*axpy)(double alpha, const double* x, double* y, std::size_t n);
    // C[m x n] += A[m x k] * B[k x n]; B and C are row-major and contiguous.
    void (*gemm)(std::size_t m, std::size_t n, std::size_t k, MatrixView a,
                 const double* b, double* c);
    // out[i] = sum_j (a[i*d + j] - b[j])^2 for i < rows
    void (*sq_dist_rows)(const double* a, const double* b, std::size_t rows,
                         std::size_t d, double* out);
};

const KernelTable& scalar_table();
#ifdef HIERVID_HAVE_AVX2
const KernelTable& avx2_table();
#endif

bool cpu_has_avx2();
Backend active_backend();
void set_backend(Backend backend);
std::string_view backend_name(Backend backend);

const KernelTable& active();

inline double dot(std::span<const double> a, std::span<const double> b) {
    return active().dot(a.data(), b.data(), a.size());
}

inline void axpy(double alpha, std::span<const double> x, std::span<double> y) {
    active().axpy(alpha, x.data(), y.data(), x.size());
}

/// C (+)= A * B with A [m x k], B [k x n], all row-major.
void gemm_nn(std::size_t m, std::size_t n, std::size_t k, std::span<const double> a,
             std::span<const double> b, std::span<double> c, bool accumulate);
/// C (+)= A * B^T with A [m x k], B [n x k].
void gemm_nt(std::size_t m, std::size_t n, std::size_t k, std::span<const double> a,
             std::span<const double> b, std::span<double> c, bool accumulate);
/// C (+)= A^T * B with A [k x m], B [k x n].
void gemm_tn(std::size_t m, std::size_t n, std::size_t k, std::span<const double> a,
             std::span<const double> b, std::span<double> c, bool accumulate);

/// Squared Euclidean distance from each row of `rows` (rows x d) to `point` (d).
void sq_dist_rows(std::span<const double> rows, std::span<const double> point,
                  std::span<double> out);

}  // namespace hiervid::kernels
