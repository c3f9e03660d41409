#include <cmath>
#include <numeric>
#include <vector>

#include <gtest/gtest.h>

#include "hiervid/gradcheck.hpp"
#include "hiervid/kernels.hpp"
#include "hiervid/ops.hpp"
#include "hiervid/rng.hpp"
#include "hiervid/tensor.hpp"

using namespace hiervid;

namespace {

Tensor random_tensor(Shape shape, Rng& rng, bool grad = true) {
    std::vector<double> v(shape_numel(shape));
    for (auto& x : v) x = uniform(rng, -1.0, 1.0);
    return Tensor::from(std::move(shape), std::move(v), grad);
}

}  // namespace

TEST(Tensor, MatmulShape) {
    auto a = Tensor::full({2, 3}, 1.0);
    auto b = Tensor::full({3, 1}, 2.0);
    auto c = matmul(a, b);
    EXPECT_EQ(c.shape(), (Shape{2, 1}));
    EXPECT_DOUBLE_EQ(c.at({0, 0}), 6.0);
    EXPECT_THROW(matmul(a, a), ShapeError);
}

TEST(Tensor, ReluAndSum) {
    auto r = relu(Tensor::from({3}, {-1, 0, 2}));
    EXPECT_EQ(std::vector<double>(r.data().begin(), r.data().end()), (std::vector<double>{0, 0, 2}));
    EXPECT_DOUBLE_EQ(sum(Tensor::full({2, 2}, 1.0)).item(), 4.0);
}

TEST(Tensor, BroadcastRules) {
    auto a = Tensor::full({2, 3}, 1.0);
    auto row = Tensor::from({3}, {1, 2, 3});
    auto s = add(a, row);
    EXPECT_DOUBLE_EQ(s.at({1, 2}), 4.0);
    EXPECT_DOUBLE_EQ(mul(a, Tensor::scalar(3.0)).at({0, 1}), 3.0);
    EXPECT_THROW(add(a, Tensor::full({2}, 1.0)), ShapeError);
}

TEST(Tensor, Softmax) {
    auto s = softmax(Tensor::from({2}, {0, 0}), 0);
    EXPECT_DOUBLE_EQ(s.data()[0], 0.5);
    auto t = softmax(Tensor::from({2}, {1, 0}), 0);
    // e / (e + 1) evaluated independently.
    const double e = std::exp(1.0);
    EXPECT_NEAR(t.data()[0], e / (e + 1.0), 1e-12);
    EXPECT_NEAR(t.data()[0], 0.7311, 1e-4);
    EXPECT_NEAR(t.data()[1], 0.2689, 1e-4);
}

TEST(Tensor, LogsumexpIsStable) {
    auto l = logsumexp(Tensor::from({2}, {1000, 1000}), 0);
    EXPECT_TRUE(std::isfinite(l.item()));
    EXPECT_NEAR(l.item(), 1000.0 + std::log(2.0), 1e-9);
}

TEST(Tensor, L2Normalize) {
    auto n = l2_normalize(Tensor::from({2}, {3, 4}), 0);
    EXPECT_NEAR(n.data()[0], 0.6, 1e-15);
    EXPECT_NEAR(n.data()[1], 0.8, 1e-15);
    auto z = l2_normalize(Tensor::from({2}, {0, 0}), 0);
    EXPECT_EQ(z.data()[0], 0.0);
    EXPECT_EQ(z.data()[1], 0.0);
    Rng rng = make_rng(3, "test");
    for (int i = 0; i < 20; ++i) {
        auto v = l2_normalize(random_tensor({4, 7}, rng, false), 1);
        for (std::size_t r = 0; r < 4; ++r) {
            double s = 0;
            for (std::size_t c = 0; c < 7; ++c) s += v.at({r, c}) * v.at({r, c});
            EXPECT_NEAR(std::sqrt(s), 1.0, 1e-9);
        }
    }
}

TEST(Autograd, QuadraticGradient) {
    auto w = Tensor::from({2}, {1, 2}, true);
    backward(sum(mul(w, w)));
    EXPECT_DOUBLE_EQ(w.grad()[0], 2.0);
    EXPECT_DOUBLE_EQ(w.grad()[1], 4.0);
}

TEST(Autograd, ConstantLossHasZeroGrads) {
    auto w = Tensor::from({2}, {1, 2}, true);
    auto loss = add(scale(sum(w), 0.0), Tensor::scalar(3.0));
    backward(loss);
    EXPECT_EQ(w.grad()[0], 0.0);
    EXPECT_EQ(w.grad()[1], 0.0);
}

TEST(Autograd, ReusedNodeAccumulates) {
    auto w = Tensor::from({1}, {3}, true);
    auto y = mul(w, w);
    backward(sum(add(y, y)));  // 2 w^2
    EXPECT_DOUBLE_EQ(w.grad()[0], 12.0);
}

TEST(Autograd, NonScalarBackwardThrows) {
    auto w = Tensor::from({2}, {1, 2}, true);
    EXPECT_ANY_THROW(backward(mul(w, w)));
}

TEST(GradCheck, SquareAtThree) {
    auto w = Tensor::from({1}, {3}, true);
    auto report = finite_diff_check([&] { return sum(mul(w, w)); }, {w});
    EXPECT_TRUE(report.passed());
    EXPECT_NEAR(w.grad()[0], 6.0, 1e-6);
    EXPECT_LT(report.max_rel_error, 1e-6);
}

TEST(GradCheck, DetectsWrongGradient) {
    // exp(w) with a backward that claims 2x the derivative.
    auto w = Tensor::from({2}, {0.3, -0.2}, true);
    auto f = [&] {
        std::vector<double> v{std::exp(w.data()[0]), std::exp(w.data()[1])};
        auto y = make_result("bad_exp", {2}, v, {w}, [](detail::Node& n) {
            auto& in = *n.inputs[0];
            auto g = in.grad_buffer();
            for (std::size_t i = 0; i < 2; ++i) g[i] += 2.0 * n.grad[i] * n.value[i];
        });
        return sum(y);
    };
    auto report = finite_diff_check(f, {w});
    EXPECT_FALSE(report.passed());
    EXPECT_EQ(report.failures.size(), 2u);
}

TEST(GradCheck, EveryPrimitiveOp) {
    Rng rng = make_rng(11, "test");
    for (auto kind : all_op_kinds()) {
        SCOPED_TRACE(op_kind_name(kind));
        std::vector<Tensor> in;
        OpArgs args;
        switch (kind) {
            case OpKind::matmul:
                in = {random_tensor({3, 4}, rng), random_tensor({4, 2}, rng)};
                break;
            case OpKind::add:
            case OpKind::sub:
            case OpKind::mul:
                in = {random_tensor({3, 4}, rng), random_tensor({4}, rng)};
                break;
            case OpKind::log: {
                auto t = random_tensor({3, 4}, rng);
                for (auto& x : t.leaf_data()) x = std::abs(x) + 0.5;
                in = {t};
                break;
            }
            case OpKind::concat:
                in = {random_tensor({2, 3}, rng), random_tensor({1, 3}, rng)};
                args.axis = 0;
                break;
            case OpKind::slice:
                in = {random_tensor({4, 3}, rng)};
                args.axis = 0;
                args.begin = 1;
                args.end = 3;
                break;
            case OpKind::reshape:
                in = {random_tensor({4, 3}, rng)};
                args.shape = {2, 6};
                break;
            case OpKind::sum:
            case OpKind::mean:
            case OpKind::max:
                in = {random_tensor({3, 4}, rng)};
                args.all_axes = false;
                args.axis = 1;
                break;
            default:
                in = {random_tensor({3, 4}, rng)};
        }
        // Weighted sum so every output entry has a distinct sensitivity.
        auto f = [&] {
            auto y = op_apply(kind, in, args);
            std::vector<double> w(y.numel());
            for (std::size_t i = 0; i < w.size(); ++i) w[i] = 0.3 + 0.1 * static_cast<double>(i);
            return sum(mul(y, Tensor::from(y.shape(), w)));
        };
        auto report = finite_diff_check(f, in);
        EXPECT_TRUE(report.passed()) << report.max_rel_error;
        EXPECT_LT(report.max_rel_error, 1e-4);
    }
}

TEST(GradCheck, CompositeOps) {
    Rng rng = make_rng(12, "test");
    auto x = random_tensor({4, 5}, rng);
    std::vector<std::size_t> rows{0, 2, 2, 3};
    std::vector<std::function<Tensor()>> fns{
        [&] { return sum(mul(softmax(x, 1), x)); },
        [&] { return sum(logsumexp(x, 1)); },
        [&] { return sum(mul(l2_normalize(x, 1), x)); },
        [&] { return sum(mul(gather_rows(x, rows), gather_rows(x, rows))); },
        [&] { return sum(mul(transpose(x), transpose(x))); },
        [&] { return sum(mul(neighbor_mean(x, 1, 2, 2), x)); },
        [&] { return sum(mul(tanh(x), sigmoid(x))); },
    };
    for (std::size_t i = 0; i < fns.size(); ++i) {
        SCOPED_TRACE(i);
        auto report = finite_diff_check(fns[i], {x});
        EXPECT_TRUE(report.passed()) << report.max_rel_error;
    }
}

TEST(GradCheck, Patchify) {
    Rng rng = make_rng(13, "test");
    auto img = random_tensor({2, 4, 4, 3}, rng);
    auto p = patchify(img, 2);
    EXPECT_EQ(p.shape(), (Shape{8, 12}));
    auto report = finite_diff_check([&] { return sum(mul(patchify(img, 2), patchify(img, 2))); }, {img});
    EXPECT_TRUE(report.passed());
}

// ---------------------------------------------------------------------------
// Kernel backends

#ifdef HIERVID_TEST_AVX2
class KernelEquivalence : public ::testing::Test {
  protected:
    void SetUp() override {
        if (!kernels::cpu_has_avx2()) GTEST_SKIP() << "CPU lacks AVX2";
    }
    static std::vector<double> random_vec(std::size_t n, Rng& rng) {
        std::vector<double> v(n);
        for (auto& x : v) x = uniform(rng, -1.0, 1.0);
        return v;
    }
};

TEST_F(KernelEquivalence, Dot) {
    Rng rng = make_rng(21, "test");
    const auto& s = kernels::scalar_table();
    const auto& a = kernels::avx2_table();
    for (std::size_t n : {0, 1, 3, 4, 7, 8, 15, 64, 129, 1000}) {
        auto x = random_vec(n, rng), y = random_vec(n, rng);
        const double rs = s.dot(x.data(), y.data(), n), ra = a.dot(x.data(), y.data(), n);
        EXPECT_NEAR(rs, ra, 1e-12 * (1.0 + static_cast<double>(n))) << n;
    }
}

TEST_F(KernelEquivalence, Axpy) {
    Rng rng = make_rng(22, "test");
    for (std::size_t n : {0, 1, 5, 8, 33, 257}) {
        auto x = random_vec(n, rng), y1 = random_vec(n, rng);
        auto y2 = y1;
        kernels::scalar_table().axpy(0.37, x.data(), y1.data(), n);
        kernels::avx2_table().axpy(0.37, x.data(), y2.data(), n);
        for (std::size_t i = 0; i < n; ++i) EXPECT_NEAR(y1[i], y2[i], 1e-15);
    }
}

TEST_F(KernelEquivalence, GemmContiguousAndStrided) {
    Rng rng = make_rng(23, "test");
    struct Dims {
        std::size_t m, n, k;
    };
    for (auto d : {Dims{1, 1, 1}, Dims{3, 5, 7}, Dims{4, 8, 4}, Dims{17, 9, 130}, Dims{64, 64, 64}, Dims{5, 3, 300}}) {
        auto a = random_vec(d.m * d.k, rng), b = random_vec(d.k * d.n, rng);
        auto c0 = random_vec(d.m * d.n, rng);
        for (bool transposed : {false, true}) {
            kernels::MatrixView view = transposed ? kernels::MatrixView{a.data(), 1, d.m}
                                                  : kernels::MatrixView{a.data(), d.k, 1};
            auto cs = c0, ca = c0;
            kernels::scalar_table().gemm(d.m, d.n, d.k, view, b.data(), cs.data());
            kernels::avx2_table().gemm(d.m, d.n, d.k, view, b.data(), ca.data());
            for (std::size_t i = 0; i < cs.size(); ++i)
                EXPECT_NEAR(cs[i], ca[i], 1e-12 * static_cast<double>(d.k)) << d.m << "x" << d.n << "x" << d.k;
        }
    }
}

TEST_F(KernelEquivalence, SqDistRows) {
    Rng rng = make_rng(24, "test");
    for (std::size_t dim : {1, 3, 4, 16, 33}) {
        const std::size_t rows = 11;
        auto a = random_vec(rows * dim, rng), p = random_vec(dim, rng);
        std::vector<double> os(rows), oa(rows);
        kernels::scalar_table().sq_dist_rows(a.data(), p.data(), rows, dim, os.data());
        kernels::avx2_table().sq_dist_rows(a.data(), p.data(), rows, dim, oa.data());
        for (std::size_t i = 0; i < rows; ++i) EXPECT_NEAR(os[i], oa[i], 1e-13);
    }
}

TEST_F(KernelEquivalence, GemmEntryPointsAcrossBackends) {
    Rng rng = make_rng(25, "test");
    const std::size_t m = 7, n = 9, k = 13;
    auto a = random_vec(m * k, rng), b = random_vec(k * n, rng), bt = random_vec(n * k, rng), at = random_vec(k * m, rng);
    auto run = [&](kernels::Backend backend) {
        kernels::set_backend(backend);
        std::vector<double> c1(m * n, 0.5), c2(m * n), c3(m * n);
        kernels::gemm_nn(m, n, k, a, b, c1, true);
        kernels::gemm_nt(m, n, k, a, bt, c2, false);
        kernels::gemm_tn(m, n, k, at, b, c3, false);
        std::vector<double> all = c1;
        all.insert(all.end(), c2.begin(), c2.end());
        all.insert(all.end(), c3.begin(), c3.end());
        return all;
    };
    const auto before = kernels::active_backend();
    auto s = run(kernels::Backend::scalar);
    auto v = run(kernels::Backend::avx2);
    kernels::set_backend(before);
    // Direct triple loops as the reference for the scalar path.
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) {
            double nn = 0.5, nt = 0, tn = 0;
            for (std::size_t p = 0; p < k; ++p) {
                nn += a[i * k + p] * b[p * n + j];
                nt += a[i * k + p] * bt[j * k + p];
                tn += at[p * m + i] * b[p * n + j];
            }
            EXPECT_NEAR(s[i * n + j], nn, 1e-12);
            EXPECT_NEAR(s[m * n + i * n + j], nt, 1e-12);
            EXPECT_NEAR(s[2 * m * n + i * n + j], tn, 1e-12);
        }
    for (std::size_t i = 0; i < s.size(); ++i) EXPECT_NEAR(s[i], v[i], 1e-12);
}

TEST_F(KernelEquivalence, MatmulGradientsAgree) {
    Rng rng = make_rng(26, "test");
    auto x = random_tensor({6, 10}, rng), w = random_tensor({10, 5}, rng);
    auto grads = [&](kernels::Backend backend) {
        kernels::set_backend(backend);
        x.zero_grad();
        w.zero_grad();
        backward(sum(tanh(matmul(x, w))));
        std::vector<double> g(x.grad().begin(), x.grad().end());
        g.insert(g.end(), w.grad().begin(), w.grad().end());
        return g;
    };
    const auto before = kernels::active_backend();
    auto gs = grads(kernels::Backend::scalar);
    auto ga = grads(kernels::Backend::avx2);
    kernels::set_backend(before);
    for (std::size_t i = 0; i < gs.size(); ++i) EXPECT_NEAR(gs[i], ga[i], 1e-12);
}
#endif

TEST(Kernels, BackendNames) {
    EXPECT_EQ(kernels::backend_name(kernels::Backend::scalar), "scalar");
    EXPECT_EQ(kernels::backend_name(kernels::Backend::avx2), "avx2");
}
