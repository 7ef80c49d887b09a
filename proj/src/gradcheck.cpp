#include "mobcast/gradcheck.hpp"

#include <algorithm>
#include <cmath>

namespace mobcast {

GradCheckReport gradient_check(ParamStore& store, const std::function<double()>& forward,
                               const std::function<void()>& backward, double eps) {
    store.zero_grads();
    backward();
    // Snapshot analytic gradients before finite differences disturb anything.
    std::vector<Matrix> analytic;
    analytic.reserve(store.size());
    for (const Param& p : store.params())
        analytic.push_back(p.grad);

    GradCheckReport report;
    for (std::size_t pi = 0; pi < store.size(); ++pi) {
        Param& p = store.params()[pi];
        GradCheckEntry entry;
        entry.name = p.name;
        for (Index r = 0; r < p.value.rows(); ++r) {
            for (Index c = 0; c < p.value.cols(); ++c) {
                const double saved = p.value(r, c);
                p.value(r, c) = saved + eps;
                const double f_plus = forward();
                p.value(r, c) = saved - eps;
                const double f_minus = forward();
                p.value(r, c) = saved;
                const double numeric = (f_plus - f_minus) / (2.0 * eps);
                const double a = analytic[pi](r, c);
                const double diff = std::abs(a - numeric);
                const double denom = std::max({std::abs(a), std::abs(numeric), 1e-5});
                entry.max_abs_diff = std::max(entry.max_abs_diff, diff);
                entry.max_rel_err = std::max(entry.max_rel_err, diff / denom);
            }
        }
        report.max_rel_err = std::max(report.max_rel_err, entry.max_rel_err);
        report.entries.push_back(std::move(entry));
    }
    return report;
}

}  // namespace mobcast
