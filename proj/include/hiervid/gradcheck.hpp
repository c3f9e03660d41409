#pragma once
// Central finite-difference verification of analytic gradients.

#include <cstddef>
#include <functional>
#include <string>
#include <vector>

#include "hiervid/tensor.hpp"

namespace hiervid {

struct GradCheckOptions {
    double step = 1e-5;
    double tolerance = 1e-4;
    /// Entries whose one-sided differences disagree by more than this fraction
    /// sit on a kink (relu at 0, hinge corner, mining switch) and are skipped.
    double kink_ratio = 0.1;
    /// Check at most this many entries per tensor (evenly strided); 0 = all.
    std::size_t max_entries_per_param = 0;
};

struct GradCheckFailure {
    std::size_t param;
    std::size_t entry;
    double analytic;
    double numeric;
    double rel_error;
};

struct GradCheckReport {
    double max_rel_error = 0.0;
    std::size_t checked = 0;
    std::size_t skipped_kinks = 0;
    std::vector<GradCheckFailure> failures;

    bool passed() const { return failures.empty(); }
};

/// Compares d f / d params from backward() against (f(p+h) - f(p-h)) / 2h,
/// with relative error |a - n| / max(|a|, |n|, floor). The floor is the larger
/// of 1e-8 and the rounding noise of the difference quotient
/// (4 eps max|f| / h) divided by the tolerance. `f` must rebuild its graph
/// from the current leaf values on every call.
GradCheckReport finite_diff_check(const std::function<Tensor()>& f, std::vector<Tensor> params,
                                  const GradCheckOptions& options = {});

}  // namespace hiervid
