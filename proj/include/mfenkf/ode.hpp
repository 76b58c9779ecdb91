#pragma once

#include <functional>

#include "mfenkf/linalg.hpp"

namespace mfenkf {

using OdeRhs = std::function<Vector(double t, const Vector& y)>;

/// Step-size controller for the embedded 4(3) pair (PI control).
struct StepController {
    double abs_tol = 1e-6;
    double rel_tol = 1e-6;
    double initial_step = 1e-4;
    double max_step = 0.0;  // 0 = no cap
    double safety = 0.9;
    double min_factor = 0.2;
    double max_factor = 5.0;
};

struct OdeResult {
    Vector y;
    int accepted_steps = 0;
    int rejected_steps = 0;
};

/// Advance y0 from t0 to t1 with the Zonneveld 4(3) embedded explicit
/// Runge-Kutta pair; the final step is clipped to land exactly on t1.
/// Errors: StepSizeCollapse, Blowup.
OdeResult integrate_adaptive(const OdeRhs& f, Vector y0, double t0, double t1,
                             const StepController& ctrl = {});

/// Fixed-step drive of the same 4th-order formula (order tests, energy
/// diagnostics).
Vector integrate_fixed(const OdeRhs& f, Vector y0, double t0, double t1, int steps);

}  // namespace mfenkf
