#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>

#include "macc/errors.hpp"
#include "macc/vec.hpp"

namespace macc {

using ScalarFn = std::function<double(const Vec64&)>;

// Central-difference gradient estimate, the oracle every analytic gradient in
// this project is checked against. Throws NumericError if f evaluates to a
// non-finite value at a probe point.
inline Vec64 finite_diff_grad(const ScalarFn& f, const Vec64& x, double h = 1e-5) {
    Vec64 g(x.size(), 0.0);
    Vec64 probe = x;
    for (std::size_t i = 0; i < x.size(); ++i) {
        probe[i] = x[i] + h;
        double fp = f(probe);
        probe[i] = x[i] - h;
        double fm = f(probe);
        probe[i] = x[i];
        if (!std::isfinite(fp) || !std::isfinite(fm)) {
            throw NumericError("finite_diff_grad: non-finite evaluation at coordinate " +
                               std::to_string(i));
        }
        g[i] = (fp - fm) / (2.0 * h);
    }
    return g;
}

struct GradCheckResult {
    bool ok = false;
    double max_rel_err = 0.0;
};

// Per-coordinate relative error |a-n| / max(1e-12, |a|+|n|), reduced by max.
inline GradCheckResult grad_check(const Vec64& analytic, const Vec64& numeric, double rel_tol) {
    require_same_length(analytic, numeric, "grad_check");
    double worst = 0.0;
    for (std::size_t i = 0; i < analytic.size(); ++i) {
        double denom = std::max(1e-12, std::fabs(analytic[i]) + std::fabs(numeric[i]));
        worst = std::max(worst, std::fabs(analytic[i] - numeric[i]) / denom);
    }
    return GradCheckResult{worst <= rel_tol, worst};
}

}  // namespace macc
