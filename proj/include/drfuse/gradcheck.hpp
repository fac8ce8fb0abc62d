#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "drfuse/tensor.hpp"

namespace drfuse {

struct GradCheckReport {
    double max_rel_err = 0.0;
    double max_abs_err = 0.0;
    long long worst_index = -1;
    long long coords_checked = 0;
    bool pass(double tol) const { return max_rel_err < tol; }
};

inline double rel_err(double analytic, double numeric) {
    double denom = std::max(std::abs(analytic) + std::abs(numeric), 1e-6);
    return std::abs(analytic - numeric) / denom;
}

// Central-difference check of an analytic gradient. `f` evaluates the scalar
// loss at the current value of `x`; `x` is perturbed in place and restored.
// Checks every coordinate unless `max_coords` limits the sweep (coordinates
// are then strided evenly across the tensor).
inline GradCheckReport grad_check(Tensor& x, const std::function<double()>& f,
                                  const Tensor& analytic, double eps = 1e-5,
                                  long long max_coords = -1) {
    require_same_shape(x, analytic, "grad_check");
    GradCheckReport rep;
    const long long n = x.numel();
    long long step = 1;
    if (max_coords > 0 && n > max_coords) step = (n + max_coords - 1) / max_coords;
    for (long long i = 0; i < n; i += step) {
        double saved = x.data[static_cast<std::size_t>(i)];
        x.data[static_cast<std::size_t>(i)] = saved + eps;
        double fp = f();
        x.data[static_cast<std::size_t>(i)] = saved - eps;
        double fm = f();
        x.data[static_cast<std::size_t>(i)] = saved;
        double numeric = (fp - fm) / (2.0 * eps);
        double a = analytic.data[static_cast<std::size_t>(i)];
        double re = rel_err(a, numeric);
        double ae = std::abs(a - numeric);
        if (re > rep.max_rel_err) {
            rep.max_rel_err = re;
            rep.worst_index = i;
        }
        rep.max_abs_err = std::max(rep.max_abs_err, ae);
        ++rep.coords_checked;
    }
    return rep;
}

}  // namespace drfuse
