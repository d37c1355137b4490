// SPDX-License-Identifier: Apache-2.0

#include "dprcnet/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "dprcnet/errors.hpp"

namespace dprc {

GradCheckResult finite_diff_check(const std::function<Tensor()>& f, std::vector<Tensor> params,
                                  double eps, double floor) {
    if (eps <= 0) throw ContractError("finite_diff_check: eps must be positive");
    for (auto& p : params) {
        p.set_requires_grad(true);
        p.zero_grad();
    }
    Tensor loss = f();
    loss.backward();
    std::vector<std::vector<double>> analytic;
    for (auto& p : params) {
        if (p.has_grad())
            analytic.emplace_back(p.grad().begin(), p.grad().end());
        else
            analytic.emplace_back(p.numel(), 0.0);
    }

    GradCheckResult result;
    for (std::size_t k = 0; k < params.size(); ++k) {
        auto values = params[k].mutable_data();
        for (std::size_t i = 0; i < values.size(); ++i) {
            const double saved = values[i];
            values[i] = saved + eps;
            const double up = f().item();
            values[i] = saved - eps;
            const double down = f().item();
            values[i] = saved;
            const double numeric = (up - down) / (2 * eps);
            const double a = analytic[k][i];
            const double err = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), floor});
            if (err > result.max_rel_error || (k == 0 && i == 0)) {
                result = {err, k, i, a, numeric};
            }
        }
    }
    for (auto& p : params) p.zero_grad();
    return result;
}

}  // namespace dprc
