#include "oracles/oracles.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace hiervid::oracle {

namespace {

double sq_dist(std::span<const double> e, std::size_t dim, std::size_t i, std::size_t j) {
    double s = 0.0;
    for (std::size_t k = 0; k < dim; ++k) {
        const double d = e[i * dim + k] - e[j * dim + k];
        s += d * d;
    }
    return s;
}

using u128 = unsigned __int128;

u128 choose(std::int64_t n, std::int64_t k) {
    if (k < 0 || k > n) return 0;
    u128 r = 1;
    for (std::int64_t i = 1; i <= k; ++i) r = r * static_cast<u128>(n - k + i) / static_cast<u128>(i);
    return r;
}

}  // namespace

MinedLoss brute_force_semi_hard(std::span<const double> e, std::size_t dim, std::span<const int> labels, double margin) {
    const std::size_t n = labels.size();
    MinedLoss out;
    double total = 0.0;
    for (std::size_t a = 0; a < n; ++a)
        for (std::size_t p = 0; p < n; ++p) {
            if (a == p || labels[a] != labels[p]) continue;
            const double dap = sq_dist(e, dim, a, p);
            // Collect every candidate, then pick per the rule.
            std::vector<std::size_t> semi, all;
            for (std::size_t c = 0; c < n; ++c) {
                if (labels[c] == labels[a]) continue;
                all.push_back(c);
                if (sq_dist(e, dim, a, c) > dap) semi.push_back(c);
            }
            if (all.empty()) {
                ++out.skipped;
                continue;
            }
            std::size_t chosen;
            if (!semi.empty()) {
                chosen = semi[0];
                for (auto c : semi)
                    if (sq_dist(e, dim, a, c) < sq_dist(e, dim, a, chosen)) chosen = c;
            } else {
                chosen = all[0];
                for (auto c : all)
                    if (sq_dist(e, dim, a, c) > sq_dist(e, dim, a, chosen)) chosen = c;
            }
            out.triplets.push_back({a, p, chosen});
            total += std::max(0.0, dap - sq_dist(e, dim, a, chosen) + margin);
        }
    if (!out.triplets.empty()) out.loss = total / static_cast<double>(out.triplets.size());
    return out;
}

double fisher_exact_enumerate(const Table2x2& t) {
    const std::int64_t a = t[0][0], b = t[0][1], c = t[1][0], d = t[1][1];
    if (a < 0 || b < 0 || c < 0 || d < 0) throw std::invalid_argument("negative cell");
    const std::int64_t n = a + b + c + d;
    if (n == 0) throw std::invalid_argument("empty table");
    if (n > 60) throw std::invalid_argument("oracle limited to totals <= 60");
    const std::int64_t r1 = a + b, r2 = c + d, c1 = a + c;
    const u128 observed = choose(r1, a) * choose(r2, c);
    u128 tail = 0;
    for (std::int64_t x = 0; x <= r1; ++x) {
        const std::int64_t y = c1 - x;
        if (y < 0 || y > r2) continue;
        const u128 w = choose(r1, x) * choose(r2, y);
        if (w <= observed) tail += w;
    }
    return static_cast<double>(static_cast<long double>(tail) / static_cast<long double>(choose(n, c1)));
}

double critic(std::span<const double> pred, std::span<const double> target, std::span<const double> b) {
    if (b.size() != pred.size() * target.size()) throw std::invalid_argument("critic: B has the wrong size");
    double s = 0.0;
    for (std::size_t i = 0; i < pred.size(); ++i)
        for (std::size_t j = 0; j < target.size(); ++j) s += pred[i] * b[i * target.size() + j] * target[j];
    return s;
}

double infonce(std::span<const double> scores, std::size_t n) {
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        double denom = 0.0;
        for (std::size_t j = 0; j < n; ++j) denom += std::exp(scores[i * n + j]);
        total += -std::log(std::exp(scores[i * n + i]) / (denom / static_cast<double>(n)));
    }
    return total / static_cast<double>(n);
}

std::vector<std::size_t> nearest_neighbors(std::span<const double> e, std::size_t dim) {
    const std::size_t n = e.size() / dim;
    std::vector<std::size_t> out(n);
    for (std::size_t i = 0; i < n; ++i) {
        std::size_t best = i == 0 ? 1 : 0;
        for (std::size_t j = 0; j < n; ++j)
            if (j != i && sq_dist(e, dim, i, j) < sq_dist(e, dim, i, best)) best = j;
        out[i] = best;
    }
    return out;
}

double nn_match_fraction(std::span<const double> e, std::size_t dim, std::span<const int> labels) {
    const auto nn = nearest_neighbors(e, dim);
    std::size_t hit = 0;
    for (std::size_t i = 0; i < labels.size(); ++i) hit += labels[i] == labels[nn[i]];
    return static_cast<double>(hit) / static_cast<double>(labels.size());
}

}  // namespace hiervid::oracle
