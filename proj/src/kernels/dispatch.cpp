#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <stdexcept>
#include <string>
#include <vector>

#include "hiervid/kernels.hpp"

namespace hiervid::kernels {
namespace {

Backend detect() {
    if (const char* env = std::getenv("HIERVID_KERNELS")) {
        const std::string v(env);
        if (v == "scalar") return Backend::scalar;
        if (v == "avx2" && cpu_has_avx2()) return Backend::avx2;
    }
    return cpu_has_avx2() ? Backend::avx2 : Backend::scalar;
}

std::atomic<Backend>& current() {
    static std::atomic<Backend> backend{detect()};
    return backend;
}

}  // namespace

bool cpu_has_avx2() {
#if defined(HIERVID_HAVE_AVX2) && (defined(__GNUC__) || defined(__clang__))
    return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
    return false;
#endif
}

Backend active_backend() { return current().load(std::memory_order_relaxed); }

void set_backend(Backend backend) {
    if (backend == Backend::avx2 && !cpu_has_avx2())
        throw std::runtime_error("avx2 kernels requested but the CPU lacks AVX2/FMA");
    current().store(backend, std::memory_order_relaxed);
}

std::string_view backend_name(Backend backend) {
    return backend == Backend::avx2 ? "avx2" : "scalar";
}

const KernelTable& active() {
#ifdef HIERVID_HAVE_AVX2
    if (active_backend() == Backend::avx2) return avx2_table();
#endif
    return scalar_table();
}

void gemm_nn(std::size_t m, std::size_t n, std::size_t k, std::span<const double> a,
             std::span<const double> b, std::span<double> c, bool accumulate) {
    if (!accumulate) std::fill(c.begin(), c.end(), 0.0);
    active().gemm(m, n, k, MatrixView{a.data(), k, 1}, b.data(), c.data());
}

void gemm_nt(std::size_t m, std::size_t n, std::size_t k, std::span<const double> a,
             std::span<const double> b, std::span<double> c, bool accumulate) {
    // Materialize B^T (k x n) so the inner loop stays contiguous.
    std::vector<double> bt(k * n);
    for (std::size_t j = 0; j < n; ++j)
        for (std::size_t p = 0; p < k; ++p) bt[p * n + j] = b[j * k + p];
    if (!accumulate) std::fill(c.begin(), c.end(), 0.0);
    active().gemm(m, n, k, MatrixView{a.data(), k, 1}, bt.data(), c.data());
}

void gemm_tn(std::size_t m, std::size_t n, std::size_t k, std::span<const double> a,
             std::span<const double> b, std::span<double> c, bool accumulate) {
    if (!accumulate) std::fill(c.begin(), c.end(), 0.0);
    active().gemm(m, n, k, MatrixView{a.data(), 1, m}, b.data(), c.data());
}

void sq_dist_rows(std::span<const double> rows, std::span<const double> point,
                  std::span<double> out) {
    const std::size_t d = point.size();
    active().sq_dist_rows(rows.data(), point.data(), out.size(), d, out.data());
}

}  // namespace hiervid::kernels
