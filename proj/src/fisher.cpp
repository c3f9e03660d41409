#include <cmath>
#include <stdexcept>

#include "hiervid/eval.hpp"

namespace hiervid {

namespace {

double log_choose(std::int64_t n, std::int64_t k) {
    return std::lgamma(static_cast<double>(n + 1)) - std::lgamma(static_cast<double>(k + 1)) -
           std::lgamma(static_cast<double>(n - k + 1));
}

}  // namespace

double fisher_exact_2x2(const Table2x2& t) {
    for (const auto& row : t)
        for (auto v : row)
            if (v < 0) throw std::invalid_argument("fisher_exact_2x2: negative cell");
    const std::int64_t r1 = t[0][0] + t[0][1];
    const std::int64_t r2 = t[1][0] + t[1][1];
    const std::int64_t c1 = t[0][0] + t[1][0];
    const std::int64_t n = r1 + r2;
    if (n == 0) throw std::invalid_argument("fisher_exact_2x2: all margins are zero");

    const double log_denom = log_choose(n, c1);
    auto prob = [&](std::int64_t x) { return std::exp(log_choose(r1, x) + log_choose(r2, c1 - x) - log_denom); };
    const double observed = prob(t[0][0]);
    const double cutoff = observed * (1.0 + 1e-12);
    double p = 0.0;
    for (std::int64_t x = std::max<std::int64_t>(0, c1 - r2); x <= std::min(r1, c1); ++x) {
        const double px = prob(x);
        if (px <= cutoff) p += px;
    }
    return std::min(1.0, p);
}

}  // namespace hiervid
