#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>

#include "ctxemo/tensor.hpp"

namespace testutil {

struct GradCheckResult {
    double max_rel_error = 0.0;
    std::string worst;
    std::size_t checked = 0;
};

// Central finite differences over every entry of every tensor of `params`, compared with `analytic`.
// Relative error is |a - n| / max(|a|, |n|, floor); the floor keeps exact zeros from dividing by zero.
template <ctxemo::ParameterSet P>
GradCheckResult finite_difference_check(P& params, const P& analytic, const std::function<double()>& loss, double step = 1e-5,
                                        double floor = 1e-6) {
    GradCheckResult r;
    auto ts = params.tensors();
    const auto gs = analytic.tensors();
    for (std::size_t t = 0; t < ts.size(); ++t) {
        auto values = ts[t].tensor->values();
        const auto grad = gs[t].tensor->values();
        for (std::size_t i = 0; i < values.size(); ++i) {
            const double saved = values[i];
            values[i] = saved + step;
            const double up = loss();
            values[i] = saved - step;
            const double down = loss();
            values[i] = saved;
            const double numeric = (up - down) / (2.0 * step);
            const double a = grad[i];
            const double rel = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), floor});
            ++r.checked;
            if (rel > r.max_rel_error) {
                r.max_rel_error = rel;
                r.worst = ts[t].name + "[" + std::to_string(i) + "] analytic=" + std::to_string(a) + " numeric=" + std::to_string(numeric);
            }
        }
    }
    return r;
}

}  // namespace testutil
