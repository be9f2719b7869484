#pragma once

#include <functional>
#include <vector>

#include "skipdet/layers.hpp"

namespace skipdet {

struct GradCheckReport {
    struct Entry {
        std::string name;
        double max_rel_err;
    };
    std::vector<Entry> per_tensor;
    double max_rel_err = 0.0;
    bool pass(double tol) const { return max_rel_err < tol; }
};

// Scalar loss over the fragment output; writes d(loss)/d(out) into grad_out.
using GradCheckLoss = std::function<double(const TensorD& out, TensorD* grad_out)>;

// Fixed random linear projection of the output, the default check target.
GradCheckLoss projection_loss(Rng rng);

// Cross-entropy against a fixed class index per row (for softmax fragments).
GradCheckLoss cross_entropy_loss(std::vector<int> targets);

// Central finite differences at float64, h = 1e-5, against the analytic
// backward pass. Samples up to `max_per_tensor` coordinates per parameter
// tensor (deterministically) to bound runtime on wide layers.
GradCheckReport gradient_check(const std::vector<Layer<double>*>& fragment, const TensorD& input,
                               GradCheckLoss loss, double h = 1e-5, int max_per_tensor = 150);

// True when no ReLU6 pre-activation in the fragment is within `margin` of a
// kink (0 or 6); callers resample the input until this holds.
bool smooth_at(const std::vector<Layer<double>*>& fragment, const TensorD& input,
               double margin = 1e-3);

}  // namespace skipdet
