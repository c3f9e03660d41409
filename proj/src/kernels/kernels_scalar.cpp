#include "hiervid/kernels.hpp"

namespace hiervid::kernels {
namespace {

double dot_scalar(const double* a, const double* b, std::size_t n) {
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) acc += a[i] * b[i];
    return acc;
}

void axpy_scalar(double alpha, const double* x, double* y, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

void gemm_scalar(std::size_t m, std::size_t n, std::size_t k, MatrixView a,
                 const double* b, double* c) {
    for (std::size_t i = 0; i < m; ++i) {
        double* c_row = c + i * n;
        for (std::size_t p = 0; p < k; ++p) {
            const double a_ip = a.data[i * a.row_stride + p * a.col_stride];
            const double* b_row = b + p * n;
            for (std::size_t j = 0; j < n; ++j) c_row[j] += a_ip * b_row[j];
        }
    }
}

void sq_dist_rows_scalar(const double* a, const double* b, std::size_t rows,
                         std::size_t d, double* out) {
    for (std::size_t r = 0; r < rows; ++r) {
        const double* row = a + r * d;
        double acc = 0.0;
        for (std::size_t j = 0; j < d; ++j) {
            const double diff = row[j] - b[j];
            acc += diff * diff;
        }
        out[r] = acc;
    }
}

}  // namespace

const KernelTable& scalar_table() {
    static const KernelTable table{dot_scalar, axpy_scalar, gemm_scalar, sq_dist_rows_scalar};
    return table;
}

}  // namespace hiervid::kernels
