#pragma once

#include <functional>
#include <string>
#include <vector>

#include "spdp/tensor.hpp"

namespace spdp {

struct GradCheckOptions {
    double step = 1e-5;
    double tolerance = 1e-4;
    // Denominator floor for the relative error; below it the check is absolute.
    double grad_floor = 1e-5;
    // When nonzero, only this many evenly spaced scalars of each tensor are perturbed.
    std::size_t max_per_param = 0;
};

struct ParamCheck {
    std::string name;
    std::size_t size = 0;
    std::size_t checked = 0;
    double max_rel_error = 0.0;
    std::size_t worst_index = 0;
    double analytic = 0.0;
    double numeric = 0.0;
};

struct GradCheckReport {
    std::vector<ParamCheck> params;
    bool finite = true;
    bool passed = false;
    double max_rel_error = 0.0;
};

// Compares reverse-mode gradients of a scalar loss against central
// differences for every scalar of every named parameter.
// rel = |analytic - numeric| / max(|analytic|, |numeric|, grad_floor)
GradCheckReport grad_check(const std::function<Tensor()>& loss,
                           const std::vector<std::pair<std::string, Tensor>>& params,
                           const GradCheckOptions& options = {});

}  // namespace spdp
