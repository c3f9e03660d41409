#include "hiervid/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "hiervid/kernels.hpp"

namespace hiervid {

namespace {

using detail::Node;

void check_finite(const char* op, const std::vector<double>& values) {
    for (double v : values)
        if (!std::isfinite(v)) throw NonFiniteError(op);
}

Tensor result(const char* op, Shape shape, std::vector<double> values, std::vector<Tensor> inputs,
              std::function<void(Node&)> bw) {
    check_finite(op, values);
    return make_result(op, std::move(shape), std::move(values), std::move(inputs), std::move(bw));
}

Node& input(Node& self, std::size_t i) { return *self.inputs[i]; }

bool is_suffix(const Shape& small, const Shape& big) {
    if (small.size() > big.size()) return false;
    return std::equal(small.begin(), small.end(), big.end() - static_cast<std::ptrdiff_t>(small.size()));
}

// Broadcast plan for a binary op: output has the larger shape; the smaller
// operand repeats with period `period_*`.
struct Broadcast {
    Shape out;
    std::size_t n = 0;
    std::size_t period_a = 0;
    std::size_t period_b = 0;
};

Broadcast plan_broadcast(const char* op, const Tensor& a, const Tensor& b) {
    const auto& sa = a.shape();
    const auto& sb = b.shape();
    Broadcast p;
    if (sa == sb || is_suffix(sb, sa)) {
        p.out = sa;
    } else if (is_suffix(sa, sb)) {
        p.out = sb;
    } else {
        throw ShapeError(op, sa, sb);
    }
    p.n = shape_numel(p.out);
    p.period_a = a.numel();
    p.period_b = b.numel();
    return p;
}

// Calls f(i, i % period_a, i % period_b) for i in [0, n) without dividing.
template <class F>
void for_broadcast(const Broadcast& p, F f) {
    std::size_t ia = 0, ib = 0;
    for (std::size_t i = 0; i < p.n; ++i) {
        f(i, ia, ib);
        if (++ia == p.period_a) ia = 0;
        if (++ib == p.period_b) ib = 0;
    }
}

template <class F>
std::vector<double> map_binary(const Broadcast& p, std::span<const double> a, std::span<const double> b, F f) {
    std::vector<double> out(p.n);
    if (p.period_a == p.n && p.period_b == p.n) {
        for (std::size_t i = 0; i < p.n; ++i) out[i] = f(a[i], b[i]);
    } else {
        for_broadcast(p, [&](std::size_t i, std::size_t ia, std::size_t ib) { out[i] = f(a[ia], b[ib]); });
    }
    return out;
}

// Axis decomposition for reductions and axis-wise ops.
struct AxisSplit {
    std::size_t outer = 1;
    std::size_t len = 1;
    std::size_t inner = 1;
    Shape reduced;
};

AxisSplit split_axis(const char* op, const Shape& s, std::size_t axis) {
    if (axis >= s.size())
        throw ShapeError(op, "axis " + std::to_string(axis) + " out of range for " + shape_str(s));
    AxisSplit a;
    for (std::size_t i = 0; i < axis; ++i) a.outer *= s[i];
    a.len = s[axis];
    for (std::size_t i = axis + 1; i < s.size(); ++i) a.inner *= s[i];
    for (std::size_t i = 0; i < s.size(); ++i)
        if (i != axis) a.reduced.push_back(s[i]);
    return a;
}

template <class Fwd, class Deriv>
Tensor unary(const char* op, const Tensor& x, Fwd fwd, Deriv deriv) {
    const auto xs = x.data();
    std::vector<double> out(xs.size());
    for (std::size_t i = 0; i < xs.size(); ++i) out[i] = fwd(xs[i]);
    return result(op, x.shape(), std::move(out), {x}, [deriv](Node& self) {
        Node& in = input(self, 0);
        if (!in.requires_grad) return;
        auto gx = in.grad_buffer();
        for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += self.grad[i] * deriv(in.value[i], self.value[i]);
    });
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
    const auto p = plan_broadcast("add", a, b);
    auto out = map_binary(p, a.data(), b.data(), [](double x, double y) { return x + y; });
    return result("add", p.out, std::move(out), {a, b}, [p](Node& self) {
        for (std::size_t k = 0; k < 2; ++k) {
            Node& in = input(self, k);
            if (!in.requires_grad) continue;
            auto g = in.grad_buffer();
            if (g.size() == p.n) {
                for (std::size_t i = 0; i < p.n; ++i) g[i] += self.grad[i];
                continue;
            }
            for_broadcast(p, [&](std::size_t i, std::size_t ia, std::size_t ib) { g[k == 0 ? ia : ib] += self.grad[i]; });
        }
    });
}

Tensor sub(const Tensor& a, const Tensor& b) {
    const auto p = plan_broadcast("sub", a, b);
    auto out = map_binary(p, a.data(), b.data(), [](double x, double y) { return x - y; });
    return result("sub", p.out, std::move(out), {a, b}, [p](Node& self) {
        for (std::size_t k = 0; k < 2; ++k) {
            Node& in = input(self, k);
            if (!in.requires_grad) continue;
            const double sign = k == 0 ? 1.0 : -1.0;
            auto g = in.grad_buffer();
            for_broadcast(p, [&](std::size_t i, std::size_t ia, std::size_t ib) {
                g[k == 0 ? ia : ib] += sign * self.grad[i];
            });
        }
    });
}

Tensor mul(const Tensor& a, const Tensor& b) {
    const auto p = plan_broadcast("mul", a, b);
    auto out = map_binary(p, a.data(), b.data(), [](double x, double y) { return x * y; });
    return result("mul", p.out, std::move(out), {a, b}, [p](Node& self) {
        Node& na = input(self, 0);
        Node& nb = input(self, 1);
        if (na.requires_grad) {
            auto g = na.grad_buffer();
            for_broadcast(p, [&](std::size_t i, std::size_t ia, std::size_t ib) { g[ia] += self.grad[i] * nb.value[ib]; });
        }
        if (nb.requires_grad) {
            auto g = nb.grad_buffer();
            for_broadcast(p, [&](std::size_t i, std::size_t ia, std::size_t ib) { g[ib] += self.grad[i] * na.value[ia]; });
        }
    });
}

Tensor scale(const Tensor& x, double factor) {
    return unary("scale", x, [factor](double v) { return v * factor; },
                 [factor](double, double) { return factor; });
}

Tensor add_scalar(const Tensor& x, double offset) {
    return unary("add_scalar", x, [offset](double v) { return v + offset; },
                 [](double, double) { return 1.0; });
}

Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) throw ShapeError("matmul", a.shape(), b.shape());
    const std::size_t m = a.dim(0);
    const std::size_t k = a.dim(1);
    const std::size_t n = b.dim(1);
    std::vector<double> out(m * n);
    kernels::gemm_nn(m, n, k, a.data(), b.data(), out, false);
    return result("matmul", {m, n}, std::move(out), {a, b}, [m, k, n](Node& self) {
        Node& na = input(self, 0);
        Node& nb = input(self, 1);
        if (na.requires_grad) kernels::gemm_nt(m, k, n, self.grad, nb.value, na.grad_buffer(), true);
        if (nb.requires_grad) kernels::gemm_tn(k, n, m, na.value, self.grad, nb.grad_buffer(), true);
    });
}

Tensor relu(const Tensor& x) {
    // subgradient 0 at exactly 0
    return unary("relu", x, [](double v) { return v > 0.0 ? v : 0.0; },
                 [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

Tensor tanh(const Tensor& x) {
    return unary("tanh", x, [](double v) { return std::tanh(v); },
                 [](double, double y) { return 1.0 - y * y; });
}

Tensor sigmoid(const Tensor& x) {
    return unary("sigmoid", x,
                 [](double v) {
                     if (v >= 0.0) return 1.0 / (1.0 + std::exp(-v));
                     const double e = std::exp(v);
                     return e / (1.0 + e);
                 },
                 [](double, double y) { return y * (1.0 - y); });
}

Tensor exp(const Tensor& x) {
    return unary("exp", x, [](double v) { return std::exp(v); }, [](double, double y) { return y; });
}

Tensor log(const Tensor& x) {
    for (double v : x.data())
        if (v <= 0.0) throw NonFiniteError("log");
    return unary("log", x, [](double v) { return std::log(v); }, [](double v, double) { return 1.0 / v; });
}

Tensor sum(const Tensor& x) {
    double acc = 0.0;
    for (double v : x.data()) acc += v;
    return result("sum", {}, {acc}, {x}, [](Node& self) {
        Node& in = input(self, 0);
        if (!in.requires_grad) return;
        auto g = in.grad_buffer();
        for (auto& v : g) v += self.grad[0];
    });
}

Tensor sum(const Tensor& x, std::size_t axis) {
    const auto s = split_axis("sum", x.shape(), axis);
    const auto xs = x.data();
    std::vector<double> out(s.outer * s.inner, 0.0);
    for (std::size_t o = 0; o < s.outer; ++o)
        for (std::size_t l = 0; l < s.len; ++l)
            for (std::size_t i = 0; i < s.inner; ++i) out[o * s.inner + i] += xs[(o * s.len + l) * s.inner + i];
    return result("sum", s.reduced, std::move(out), {x}, [s](Node& self) {
        Node& in = input(self, 0);
        if (!in.requires_grad) return;
        auto g = in.grad_buffer();
        for (std::size_t o = 0; o < s.outer; ++o)
            for (std::size_t l = 0; l < s.len; ++l)
                for (std::size_t i = 0; i < s.inner; ++i) g[(o * s.len + l) * s.inner + i] += self.grad[o * s.inner + i];
    });
}

Tensor mean(const Tensor& x) { return scale(sum(x), 1.0 / static_cast<double>(x.numel())); }

Tensor mean(const Tensor& x, std::size_t axis) {
    const auto len = split_axis("mean", x.shape(), axis).len;
    return scale(sum(x, axis), 1.0 / static_cast<double>(len));
}

Tensor max(const Tensor& x) {
    const auto xs = x.data();
    std::size_t arg = 0;
    for (std::size_t i = 1; i < xs.size(); ++i)
        if (xs[i] > xs[arg]) arg = i;
    return result("max", {}, {xs[arg]}, {x}, [arg](Node& self) {
        Node& in = input(self, 0);
        if (in.requires_grad) in.grad_buffer()[arg] += self.grad[0];
    });
}

Tensor max(const Tensor& x, std::size_t axis) {
    const auto s = split_axis("max", x.shape(), axis);
    const auto xs = x.data();
    std::vector<double> out(s.outer * s.inner);
    std::vector<std::size_t> arg(s.outer * s.inner);
    for (std::size_t o = 0; o < s.outer; ++o)
        for (std::size_t i = 0; i < s.inner; ++i) {
            std::size_t best = 0;
            double bv = xs[o * s.len * s.inner + i];
            for (std::size_t l = 1; l < s.len; ++l) {
                const double v = xs[(o * s.len + l) * s.inner + i];
                if (v > bv) {
                    bv = v;
                    best = l;
                }
            }
            out[o * s.inner + i] = bv;
            arg[o * s.inner + i] = (o * s.len + best) * s.inner + i;
        }
    return result("max", s.reduced, std::move(out), {x}, [arg = std::move(arg)](Node& self) {
        Node& in = input(self, 0);
        if (!in.requires_grad) return;
        auto g = in.grad_buffer();
        for (std::size_t j = 0; j < arg.size(); ++j) g[arg[j]] += self.grad[j];
    });
}

Tensor concat(std::span<const Tensor> parts, std::size_t axis) {
    if (parts.empty()) throw ShapeError("concat", "no inputs");
    const Shape& first = parts[0].shape();
    if (axis >= first.size()) throw ShapeError("concat", "axis out of range for " + shape_str(first));
    std::vector<std::size_t> lens;
    Shape out_shape = first;
    out_shape[axis] = 0;
    for (const auto& p : parts) {
        const Shape& s = p.shape();
        if (s.size() != first.size()) throw ShapeError("concat", first, s);
        for (std::size_t i = 0; i < s.size(); ++i)
            if (i != axis && s[i] != first[i]) throw ShapeError("concat", first, s);
        lens.push_back(s[axis]);
        out_shape[axis] += s[axis];
    }
    const auto split = split_axis("concat", out_shape, axis);
    std::vector<double> out(shape_numel(out_shape));
    std::size_t offset = 0;
    for (std::size_t k = 0; k < parts.size(); ++k) {
        const auto src = parts[k].data();
        const std::size_t block = lens[k] * split.inner;
        for (std::size_t o = 0; o < split.outer; ++o)
            std::copy_n(src.begin() + static_cast<std::ptrdiff_t>(o * block), block,
                        out.begin() + static_cast<std::ptrdiff_t>(o * split.len * split.inner + offset * split.inner));
        offset += lens[k];
    }
    std::vector<Tensor> inputs(parts.begin(), parts.end());
    return result("concat", out_shape, std::move(out), std::move(inputs), [split, lens](Node& self) {
        std::size_t offset = 0;
        for (std::size_t k = 0; k < lens.size(); ++k) {
            Node& in = input(self, k);
            const std::size_t block = lens[k] * split.inner;
            if (in.requires_grad) {
                auto g = in.grad_buffer();
                for (std::size_t o = 0; o < split.outer; ++o)
                    for (std::size_t t = 0; t < block; ++t)
                        g[o * block + t] += self.grad[o * split.len * split.inner + offset * split.inner + t];
            }
            offset += lens[k];
        }
    });
}

Tensor slice(const Tensor& x, std::size_t axis, std::size_t begin, std::size_t end) {
    const auto s = split_axis("slice", x.shape(), axis);
    if (begin >= end || end > s.len)
        throw ShapeError("slice", "range [" + std::to_string(begin) + "," + std::to_string(end) +
                                      ") invalid for " + shape_str(x.shape()));
    Shape out_shape = x.shape();
    out_shape[axis] = end - begin;
    const std::size_t block = (end - begin) * s.inner;
    const auto xs = x.data();
    std::vector<double> out(s.outer * block);
    for (std::size_t o = 0; o < s.outer; ++o)
        std::copy_n(xs.begin() + static_cast<std::ptrdiff_t>((o * s.len + begin) * s.inner), block,
                    out.begin() + static_cast<std::ptrdiff_t>(o * block));
    return result("slice", out_shape, std::move(out), {x}, [s, begin, block](Node& self) {
        Node& in = input(self, 0);
        if (!in.requires_grad) return;
        auto g = in.grad_buffer();
        for (std::size_t o = 0; o < s.outer; ++o)
            for (std::size_t t = 0; t < block; ++t) g[(o * s.len + begin) * s.inner + t] += self.grad[o * block + t];
    });
}

Tensor reshape(const Tensor& x, Shape shape) {
    if (shape_numel(shape) != x.numel()) throw ShapeError("reshape", x.shape(), shape);
    for (auto e : shape)
        if (e == 0) throw ShapeError("reshape", x.shape(), shape);
    std::vector<double> out(x.data().begin(), x.data().end());
    return result("reshape", std::move(shape), std::move(out), {x}, [](Node& self) {
        Node& in = input(self, 0);
        if (!in.requires_grad) return;
        auto g = in.grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    });
}

Tensor transpose(const Tensor& x) {
    if (x.rank() != 2) throw ShapeError("transpose", "expects rank 2, got " + shape_str(x.shape()));
    const std::size_t r = x.dim(0);
    const std::size_t c = x.dim(1);
    const auto xs = x.data();
    std::vector<double> out(r * c);
    for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) out[j * r + i] = xs[i * c + j];
    return result("transpose", {c, r}, std::move(out), {x}, [r, c](Node& self) {
        Node& in = input(self, 0);
        if (!in.requires_grad) return;
        auto g = in.grad_buffer();
        for (std::size_t i = 0; i < r; ++i)
            for (std::size_t j = 0; j < c; ++j) g[i * c + j] += self.grad[j * r + i];
    });
}

Tensor softmax(const Tensor& x, std::size_t axis) {
    const auto s = split_axis("softmax", x.shape(), axis);
    const auto xs = x.data();
    std::vector<double> out(xs.size());
    for (std::size_t o = 0; o < s.outer; ++o)
        for (std::size_t i = 0; i < s.inner; ++i) {
            auto at = [&](std::size_t l) { return (o * s.len + l) * s.inner + i; };
            double mx = -std::numeric_limits<double>::infinity();
            for (std::size_t l = 0; l < s.len; ++l) mx = std::max(mx, xs[at(l)]);
            double z = 0.0;
            for (std::size_t l = 0; l < s.len; ++l) {
                out[at(l)] = std::exp(xs[at(l)] - mx);
                z += out[at(l)];
            }
            for (std::size_t l = 0; l < s.len; ++l) out[at(l)] /= z;
        }
    return result("softmax", x.shape(), std::move(out), {x}, [s](Node& self) {
        Node& in = input(self, 0);
        if (!in.requires_grad) return;
        auto g = in.grad_buffer();
        for (std::size_t o = 0; o < s.outer; ++o)
            for (std::size_t i = 0; i < s.inner; ++i) {
                auto at = [&](std::size_t l) { return (o * s.len + l) * s.inner + i; };
                double dotgy = 0.0;
                for (std::size_t l = 0; l < s.len; ++l) dotgy += self.grad[at(l)] * self.value[at(l)];
                for (std::size_t l = 0; l < s.len; ++l)
                    g[at(l)] += self.value[at(l)] * (self.grad[at(l)] - dotgy);
            }
    });
}

Tensor logsumexp(const Tensor& x, std::size_t axis) {
    const auto s = split_axis("logsumexp", x.shape(), axis);
    const auto xs = x.data();
    std::vector<double> out(s.outer * s.inner);
    for (std::size_t o = 0; o < s.outer; ++o)
        for (std::size_t i = 0; i < s.inner; ++i) {
            double mx = -std::numeric_limits<double>::infinity();
            for (std::size_t l = 0; l < s.len; ++l) mx = std::max(mx, xs[(o * s.len + l) * s.inner + i]);
            double z = 0.0;
            for (std::size_t l = 0; l < s.len; ++l) z += std::exp(xs[(o * s.len + l) * s.inner + i] - mx);
            out[o * s.inner + i] = mx + std::log(z);
        }
    return result("logsumexp", s.reduced, std::move(out), {x}, [s](Node& self) {
        Node& in = input(self, 0);
        if (!in.requires_grad) return;
        auto g = in.grad_buffer();
        for (std::size_t o = 0; o < s.outer; ++o)
            for (std::size_t i = 0; i < s.inner; ++i) {
                const double lse = self.value[o * s.inner + i];
                const double go = self.grad[o * s.inner + i];
                for (std::size_t l = 0; l < s.len; ++l) {
                    const std::size_t idx = (o * s.len + l) * s.inner + i;
                    g[idx] += go * std::exp(in.value[idx] - lse);
                }
            }
    });
}

Tensor l2_normalize(const Tensor& x, std::size_t axis, double epsilon) {
    if (!(epsilon > 0.0)) throw ShapeError("l2_normalize", "epsilon must be positive");
    const auto s = split_axis("l2_normalize", x.shape(), axis);
    const auto xs = x.data();
    std::vector<double> out(xs.size());
    std::vector<double> denom(s.outer * s.inner);
    for (std::size_t o = 0; o < s.outer; ++o)
        for (std::size_t i = 0; i < s.inner; ++i) {
            double ss = 0.0;
            for (std::size_t l = 0; l < s.len; ++l) {
                const double v = xs[(o * s.len + l) * s.inner + i];
                ss += v * v;
            }
            const double nrm = std::sqrt(ss);
            const double d = nrm < epsilon ? epsilon : nrm;
            denom[o * s.inner + i] = d;
            for (std::size_t l = 0; l < s.len; ++l) {
                const std::size_t idx = (o * s.len + l) * s.inner + i;
                out[idx] = xs[idx] / d;
            }
        }
    return result("l2_normalize", x.shape(), std::move(out), {x}, [s, epsilon, denom = std::move(denom)](Node& self) {
        Node& in = input(self, 0);
        if (!in.requires_grad) return;
        auto g = in.grad_buffer();
        for (std::size_t o = 0; o < s.outer; ++o)
            for (std::size_t i = 0; i < s.inner; ++i) {
                const double d = denom[o * s.inner + i];
                auto at = [&](std::size_t l) { return (o * s.len + l) * s.inner + i; };
                if (d == epsilon) {
                    // guarded slice: y = x / epsilon is linear
                    for (std::size_t l = 0; l < s.len; ++l) g[at(l)] += self.grad[at(l)] / d;
                    continue;
                }
                double ydotg = 0.0;
                for (std::size_t l = 0; l < s.len; ++l) ydotg += self.value[at(l)] * self.grad[at(l)];
                for (std::size_t l = 0; l < s.len; ++l)
                    g[at(l)] += (self.grad[at(l)] - self.value[at(l)] * ydotg) / d;
            }
    });
}

Tensor gather_rows(const Tensor& x, std::span<const std::size_t> rows) {
    if (x.rank() != 2) throw ShapeError("gather_rows", "expects rank 2, got " + shape_str(x.shape()));
    if (rows.empty()) throw ShapeError("gather_rows", "empty index list");
    const std::size_t n = x.dim(0);
    const std::size_t d = x.dim(1);
    const auto xs = x.data();
    std::vector<double> out(rows.size() * d);
    for (std::size_t r = 0; r < rows.size(); ++r) {
        if (rows[r] >= n)
            throw ShapeError("gather_rows", "row " + std::to_string(rows[r]) + " out of range for " + shape_str(x.shape()));
        std::copy_n(xs.begin() + static_cast<std::ptrdiff_t>(rows[r] * d), d, out.begin() + static_cast<std::ptrdiff_t>(r * d));
    }
    std::vector<std::size_t> idx(rows.begin(), rows.end());
    return result("gather_rows", {rows.size(), d}, std::move(out), {x}, [idx = std::move(idx), d](Node& self) {
        Node& in = input(self, 0);
        if (!in.requires_grad) return;
        auto g = in.grad_buffer();
        for (std::size_t r = 0; r < idx.size(); ++r)
            for (std::size_t j = 0; j < d; ++j) g[idx[r] * d + j] += self.grad[r * d + j];
    });
}

Tensor patchify(const Tensor& images, std::size_t stride) {
    if (images.rank() != 4) throw ShapeError("patchify", "expects [F,H,W,C], got " + shape_str(images.shape()));
    const std::size_t f = images.dim(0), h = images.dim(1), w = images.dim(2), c = images.dim(3);
    if (stride == 0 || h % stride != 0 || w % stride != 0)
        throw ShapeError("patchify", "image " + std::to_string(h) + "x" + std::to_string(w) +
                                         " not divisible by stride " + std::to_string(stride));
    const std::size_t hp = h / stride, wp = w / stride, pd = stride * stride * c;
    const auto xs = images.data();
    std::vector<std::size_t> src(f * hp * wp * pd);
    for (std::size_t fi = 0; fi < f; ++fi)
        for (std::size_t py = 0; py < hp; ++py)
            for (std::size_t px = 0; px < wp; ++px) {
                const std::size_t row = (fi * hp + py) * wp + px;
                for (std::size_t dy = 0; dy < stride; ++dy)
                    for (std::size_t dx = 0; dx < stride; ++dx)
                        for (std::size_t ch = 0; ch < c; ++ch)
                            src[row * pd + (dy * stride + dx) * c + ch] =
                                ((fi * h + py * stride + dy) * w + px * stride + dx) * c + ch;
            }
    std::vector<double> out(src.size());
    for (std::size_t i = 0; i < src.size(); ++i) out[i] = xs[src[i]];
    return result("patchify", {f * hp * wp, pd}, std::move(out), {images}, [src = std::move(src)](Node& self) {
        Node& in = input(self, 0);
        if (!in.requires_grad) return;
        auto g = in.grad_buffer();
        for (std::size_t i = 0; i < src.size(); ++i) g[src[i]] += self.grad[i];
    });
}

Tensor neighbor_mean(const Tensor& x, std::size_t frames, std::size_t height, std::size_t width) {
    if (x.rank() != 2 || x.dim(0) != frames * height * width)
        throw ShapeError("neighbor_mean", "expects [" + std::to_string(frames * height * width) + ",C], got " +
                                              shape_str(x.shape()));
    const std::size_t c = x.dim(1);
    const auto xs = x.data();
    std::vector<double> out(xs.size(), 0.0);
    auto cell = [=](std::size_t f, std::size_t y, std::size_t xx) { return (f * height + y) * width + xx; };
    auto for_neighbors = [=](std::size_t y, std::size_t xx, auto&& fn) {
        const std::size_t y0 = y == 0 ? 0 : y - 1, y1 = std::min(height - 1, y + 1);
        const std::size_t x0 = xx == 0 ? 0 : xx - 1, x1 = std::min(width - 1, xx + 1);
        const double inv = 1.0 / static_cast<double>((y1 - y0 + 1) * (x1 - x0 + 1));
        for (std::size_t ny = y0; ny <= y1; ++ny)
            for (std::size_t nx = x0; nx <= x1; ++nx) fn(ny, nx, inv);
    };
    for (std::size_t f = 0; f < frames; ++f)
        for (std::size_t y = 0; y < height; ++y)
            for (std::size_t xx = 0; xx < width; ++xx) {
                double* o = out.data() + cell(f, y, xx) * c;
                for_neighbors(y, xx, [&](std::size_t ny, std::size_t nx, double inv) {
                    kernels::axpy(inv, xs.subspan(cell(f, ny, nx) * c, c), std::span<double>(o, c));
                });
            }
    return result("neighbor_mean", x.shape(), std::move(out), {x}, [=](Node& self) {
        Node& in = input(self, 0);
        if (!in.requires_grad) return;
        auto g = in.grad_buffer();
        for (std::size_t f = 0; f < frames; ++f)
            for (std::size_t y = 0; y < height; ++y)
                for (std::size_t xx = 0; xx < width; ++xx) {
                    const std::span<const double> go(self.grad.data() + cell(f, y, xx) * c, c);
                    for_neighbors(y, xx, [&](std::size_t ny, std::size_t nx, double inv) {
                        kernels::axpy(inv, go, g.subspan(cell(f, ny, nx) * c, c));
                    });
                }
    });
}

const char* op_kind_name(OpKind kind) {
    switch (kind) {
        case OpKind::add: return "add";
        case OpKind::sub: return "sub";
        case OpKind::mul: return "mul";
        case OpKind::matmul: return "matmul";
        case OpKind::relu: return "relu";
        case OpKind::tanh: return "tanh";
        case OpKind::sigmoid: return "sigmoid";
        case OpKind::exp: return "exp";
        case OpKind::log: return "log";
        case OpKind::sum: return "sum";
        case OpKind::mean: return "mean";
        case OpKind::max: return "max";
        case OpKind::concat: return "concat";
        case OpKind::slice: return "slice";
        case OpKind::reshape: return "reshape";
        case OpKind::transpose: return "transpose";
    }
    return "unknown";
}

std::vector<OpKind> all_op_kinds() {
    return {OpKind::add, OpKind::sub, OpKind::mul, OpKind::matmul, OpKind::relu, OpKind::tanh,
            OpKind::sigmoid, OpKind::exp, OpKind::log, OpKind::sum, OpKind::mean, OpKind::max,
            OpKind::concat, OpKind::slice, OpKind::reshape, OpKind::transpose};
}

Tensor op_apply(OpKind kind, std::span<const Tensor> inputs, const OpArgs& args) {
    auto need = [&](std::size_t n) {
        if (inputs.size() != n)
            throw ShapeError(op_kind_name(kind), "expects " + std::to_string(n) + " inputs, got " +
                                                     std::to_string(inputs.size()));
    };
    switch (kind) {
        case OpKind::add: need(2); return add(inputs[0], inputs[1]);
        case OpKind::sub: need(2); return sub(inputs[0], inputs[1]);
        case OpKind::mul: need(2); return mul(inputs[0], inputs[1]);
        case OpKind::matmul: need(2); return matmul(inputs[0], inputs[1]);
        case OpKind::relu: need(1); return relu(inputs[0]);
        case OpKind::tanh: need(1); return tanh(inputs[0]);
        case OpKind::sigmoid: need(1); return sigmoid(inputs[0]);
        case OpKind::exp: need(1); return exp(inputs[0]);
        case OpKind::log: need(1); return log(inputs[0]);
        case OpKind::sum: need(1); return args.all_axes ? sum(inputs[0]) : sum(inputs[0], args.axis);
        case OpKind::mean: need(1); return args.all_axes ? mean(inputs[0]) : mean(inputs[0], args.axis);
        case OpKind::max: need(1); return args.all_axes ? max(inputs[0]) : max(inputs[0], args.axis);
        case OpKind::concat: return concat(inputs, args.axis);
        case OpKind::slice: need(1); return slice(inputs[0], args.axis, args.begin, args.end);
        case OpKind::reshape: need(1); return reshape(inputs[0], args.shape);
        case OpKind::transpose: need(1); return transpose(inputs[0]);
    }
    throw ShapeError("op_apply", "unknown op kind");
}

}  // namespace hiervid
