#pragma once
// Slow, independent reference implementations. They share no arithmetic code
// with the library (no kernels, no autograd) so agreement is meaningful.

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <span>
#include <vector>

#include "hiervid/eval.hpp"
#include "hiervid/losses.hpp"

namespace hiervid::oracle {

struct MinedLoss {
    std::vector<Triplet> triplets;
    std::size_t skipped = 0;
    double loss = 0.0;  // mean hinge; 0 when there are no triplets
};

/// Enumerates every (anchor, positive, negative) index triple and applies the
/// semi-hard rule with a fallback to the farthest negative.
MinedLoss brute_force_semi_hard(std::span<const double> embeddings, std::size_t dim, std::span<const int> labels,
                                double margin);

/// Exact enumeration with 128-bit integer hypergeometric weights (total <= 60).
double fisher_exact_enumerate(const Table2x2& table);

/// pred^T B target by explicit loops; B is [d_pred, d_target] row-major.
double critic(std::span<const double> pred, std::span<const double> target, std::span<const double> b);

/// Mean over rows of -log(exp(S_ii) / ((1/N) sum_j exp(S_ij))) evaluated directly.
double infonce(std::span<const double> scores, std::size_t n);

/// Nearest other row by explicit squared-distance loops (ties to the lowest index).
std::vector<std::size_t> nearest_neighbors(std::span<const double> embeddings, std::size_t dim);
double nn_match_fraction(std::span<const double> embeddings, std::size_t dim, std::span<const int> labels);

}  // namespace hiervid::oracle

namespace hiervid::selfcheck {

struct SuiteResult {
    std::size_t checks = 0;
    std::size_t failures = 0;
    double max_rel_error = 0.0;

    bool passed() const { return failures == 0 && checks > 0; }
};

/// Finite-difference checks of every primitive op, the composite ops, the
/// encoder and heads, and the full combined objective on a 2-video, 2-shot,
/// 3-frame batch with at most 3 boxes per frame. One line per check on `out`.
SuiteResult run_gradcheck_suite(std::ostream& out, std::uint64_t seed = 0);

struct MiningCheck {
    std::size_t pools = 0;
    std::size_t selection_mismatches = 0;
    double max_loss_diff = 0.0;
};
/// Random pools with n <= 32, d <= 16 on the unit sphere.
MiningCheck check_mining_pools(std::size_t pools, std::uint64_t seed);

struct FisherCheck {
    std::size_t tables = 0;
    std::size_t out_of_range = 0;
    double max_diff = 0.0;
};
/// Every 2x2 table with 1 <= total <= max_total.
FisherCheck check_fisher_tables(std::int64_t max_total);

struct InfoNceCheck {
    std::size_t batches = 0;
    double max_uniform_abs = 0.0;
    double min_margin_over_bound = 1e300;  // min over batches of loss + ln N
    double max_shift_diff = 0.0;
    double max_oracle_diff = 0.0;
};
InfoNceCheck check_infonce_algebra(std::size_t batches, std::uint64_t seed);

/// Library routines against the oracles above on randomized inputs.
SuiteResult run_oracle_suite(std::ostream& out, std::uint64_t seed = 0);

}  // namespace hiervid::selfcheck
