// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <functional>
#include <vector>

#include "dprcnet/tensor.hpp"

namespace dprc {

struct GradCheckResult {
    double max_rel_error = 0.0;
    std::size_t worst_param = 0;
    std::size_t worst_index = 0;
    double analytic = 0.0;
    double numeric = 0.0;
};

// Compares reverse-mode gradients of a scalar function against central
// differences, entry by entry. The error of one entry is
// |analytic - numeric| / max(|analytic|, |numeric|, floor). The floor keeps
// gradients that are zero up to rounding from dominating the report.
// f must be deterministic and rebuild its graph on every call.
GradCheckResult finite_diff_check(const std::function<Tensor()>& f, std::vector<Tensor> params,
                                  double eps = 1e-5, double floor = 1e-8);

}  // namespace dprc
