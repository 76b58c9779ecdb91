#include "mfenkf/ode.hpp"

#include <algorithm>
#include <cmath>

namespace mfenkf {
namespace {

// Zonneveld 4(3) pair: classical RK4 propagated, 5th stage at c=3/4 feeds the
// embedded 3rd-order error estimator.
constexpr double kC[5] = {0.0, 0.5, 0.5, 1.0, 0.75};
constexpr double kA51 = 5.0 / 32.0, kA52 = 7.0 / 32.0, kA53 = 13.0 / 32.0,
                 kA54 = -1.0 / 32.0;
constexpr double kB[5] = {1.0 / 6.0, 1.0 / 3.0, 1.0 / 3.0, 1.0 / 6.0, 0.0};
constexpr double kBhat[5] = {-0.5, 7.0 / 3.0, 7.0 / 3.0, 13.0 / 6.0, -16.0 / 3.0};

struct StepEval {
    Vector y_next;
    Vector err;  // y_next - yhat_next
};

StepEval rk_step(const OdeRhs& f, double t, const Vector& y, double h, const Vector& k1) {
    StepEval out;
    const Vector k2 = f(t + kC[1] * h, y + (0.5 * h) * k1);
    const Vector k3 = f(t + kC[2] * h, y + (0.5 * h) * k2);
    const Vector k4 = f(t + kC[3] * h, y + h * k3);
    const Vector k5 =
        f(t + kC[4] * h, y + h * (kA51 * k1 + kA52 * k2 + kA53 * k3 + kA54 * k4));
    out.y_next = y + h * (kB[0] * k1 + kB[1] * k2 + kB[2] * k3 + kB[3] * k4);
    out.err = h * ((kB[0] - kBhat[0]) * k1 + (kB[1] - kBhat[1]) * k2 +
                   (kB[2] - kBhat[2]) * k3 + (kB[3] - kBhat[3]) * k4 +
                   (kB[4] - kBhat[4]) * k5);
    return out;
}

double error_norm(const Vector& err, const Vector& y0, const Vector& y1,
                  const StepController& ctrl) {
    double sum = 0.0;
    for (Eigen::Index i = 0; i < err.size(); ++i) {
        const double sc =
            ctrl.abs_tol + ctrl.rel_tol * std::max(std::abs(y0(i)), std::abs(y1(i)));
        const double r = err(i) / sc;
        sum += r * r;
    }
    return std::sqrt(sum / static_cast<double>(err.size()));
}

}  // namespace

OdeResult integrate_adaptive(const OdeRhs& f, Vector y0, double t0, double t1,
                             const StepController& ctrl) {
    require(t1 >= t0, "InvalidTimeSpan", "t_end before start time");
    OdeResult res;
    res.y = std::move(y0);
    if (t1 == t0) return res;

    const double span = t1 - t0;
    const double h_min = 1e-14 * std::max(span, std::abs(t1));
    double h = std::min(ctrl.initial_step, span);
    if (ctrl.max_step > 0.0) h = std::min(h, ctrl.max_step);
    double t = t0;
    double prev_err = 1.0;  // PI memory
    // error estimator has order 3 -> local error ~ h^4
    constexpr double kExpI = 0.7 / 4.0, kExpP = 0.4 / 4.0;

    while (t < t1) {
        h = std::min(h, t1 - t);
        const Vector k1 = f(t, res.y);
        const StepEval st = rk_step(f, t, res.y, h, k1);
        if (!st.y_next.allFinite()) {
            ++res.rejected_steps;
            h *= 0.25;
            require(h > h_min, "Blowup", "non-finite state during integration");
            continue;
        }
        const double err = std::max(error_norm(st.err, res.y, st.y_next, ctrl), 1e-16);
        if (err <= 1.0) {
            t += h;
            res.y = st.y_next;
            ++res.accepted_steps;
            double fac = ctrl.safety * std::pow(err, -kExpI) * std::pow(prev_err, kExpP);
            fac = std::clamp(fac, ctrl.min_factor, ctrl.max_factor);
            prev_err = err;
            h *= fac;
        } else {
            ++res.rejected_steps;
            const double fac =
                std::clamp(ctrl.safety * std::pow(err, -0.25), ctrl.min_factor, 1.0);
            h *= fac;
        }
        if (ctrl.max_step > 0.0) h = std::min(h, ctrl.max_step);
        require(h > h_min || t >= t1, "StepSizeCollapse",
                "adaptive step underflow at t=" + std::to_string(t));
    }
    return res;
}

Vector integrate_fixed(const OdeRhs& f, Vector y0, double t0, double t1, int steps) {
    require(steps >= 1, "InvalidTimeSpan", "need at least one step");
    const double h = (t1 - t0) / steps;
    Vector y = std::move(y0);
    for (int i = 0; i < steps; ++i) {
        const double t = t0 + i * h;
        const Vector k1 = f(t, y);
        y = rk_step(f, t, y, h, k1).y_next;
        require(y.allFinite(), "Blowup", "non-finite state during integration");
    }
    return y;
}

}  // namespace mfenkf
