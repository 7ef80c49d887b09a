#pragma once

#include "mobcast/param_store.hpp"

#include <functional>
#include <string>
#include <vector>

namespace mobcast {

struct GradCheckEntry {
    std::string name;
    double max_rel_err = 0.0;
    double max_abs_diff = 0.0;
};

struct GradCheckReport {
    std::vector<GradCheckEntry> entries;
    double max_rel_err = 0.0;

    bool within(double tol) const { return max_rel_err < tol; }
};

// Compares analytic gradients against central finite differences for every
// element of every parameter in the store. `forward` must be a deterministic
// function of the current parameter values; `backward` must populate the
// store's gradient buffers for the same point. Report-only: never throws on
// disagreement.
//
// Relative error uses a small floor so that finite-difference noise on
// near-zero gradient entries is not amplified into spurious failures.
GradCheckReport gradient_check(ParamStore& store, const std::function<double()>& forward,
                               const std::function<void()>& backward, double eps = 1e-4);

}  // namespace mobcast
