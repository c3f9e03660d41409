#include "hiervid/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace hiervid {

GradCheckReport finite_diff_check(const std::function<Tensor()>& f, std::vector<Tensor> params,
                                  const GradCheckOptions& options) {
    for (auto& p : params) p.zero_grad();
    const Tensor loss = f();
    backward(loss);
    std::vector<std::vector<double>> analytic;
    for (const auto& p : params) {
        if (p.has_grad())
            analytic.emplace_back(p.grad().begin(), p.grad().end());
        else
            analytic.emplace_back(p.numel(), 0.0);
    }

    const double f0 = loss.item();
    GradCheckReport report;
    const double h = options.step;
    for (std::size_t pi = 0; pi < params.size(); ++pi) {
        auto values = params[pi].leaf_data();
        std::size_t stride = 1;
        if (options.max_entries_per_param > 0 && values.size() > options.max_entries_per_param)
            stride = (values.size() + options.max_entries_per_param - 1) / options.max_entries_per_param;
        for (std::size_t e = 0; e < values.size(); e += stride) {
            const double original = values[e];
            values[e] = original + h;
            const double fp = f().item();
            values[e] = original - h;
            const double fm = f().item();
            values[e] = original;

            const double numeric = (fp - fm) / (2.0 * h);
            const double a = analytic[pi][e];
            // Differences below the rounding noise of (fp - fm) / 2h are not
            // resolvable, so the denominator never drops under noise / tolerance.
            const double noise = 4.0 * std::numeric_limits<double>::epsilon() *
                                 std::max({std::abs(f0), std::abs(fp), std::abs(fm)}) / h;
            const double floor = std::max(1e-8, noise / options.tolerance);
            const double rel = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), floor});
            const double fwd = (fp - f0) / h;
            const double bwd = (f0 - fm) / h;
            const bool kink = std::abs(fwd - bwd) > options.kink_ratio * std::max(std::abs(fwd), std::abs(bwd)) + 10.0 * h;
            if (kink && rel > options.tolerance) {
                ++report.skipped_kinks;
                continue;
            }
            ++report.checked;
            report.max_rel_error = std::max(report.max_rel_error, rel);
            if (rel > options.tolerance) report.failures.push_back({pi, e, a, numeric, rel});
        }
    }
    for (auto& p : params) p.zero_grad();
    return report;
}

}  // namespace hiervid
