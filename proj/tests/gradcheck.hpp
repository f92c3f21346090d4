#pragma once

#include <functional>
#include <string>

#include "dyadit/nn.hpp"

namespace dyadit::test {

struct GradCheckResult {
    double max_rel_err = 0.0;
    std::string worst_param;
};

// Central-difference check of d(loss)/d(theta) for every element of every parameter
// in the store. make_loss must rebuild the graph from the current parameter values.
// Error metric per element: |analytic - fd| / max(1, |analytic|, |fd|).
inline GradCheckResult grad_check(nn::ParameterStore& params,
                                  const std::function<ad::Var()>& make_loss, double h = 1e-5) {
    params.zero_grad();
    ad::Var loss = make_loss();
    ad::backward(loss);

    GradCheckResult result;
    for (const auto& [name, var] : params.items()) {
        for (std::int64_t i = 0; i < var->value.size(); ++i) {
            const double analytic = var->grad.empty() ? 0.0 : var->grad[i];
            const double saved = var->value[i];
            var->value[i] = saved + h;
            const double up = make_loss()->value[0];
            var->value[i] = saved - h;
            const double down = make_loss()->value[0];
            var->value[i] = saved;
            const double fd = (up - down) / (2.0 * h);
            const double err =
                std::fabs(analytic - fd) / std::max({1.0, std::fabs(analytic), std::fabs(fd)});
            if (err > result.max_rel_err) {
                result.max_rel_err = err;
                result.worst_param = name + "[" + std::to_string(i) + "]";
            }
        }
    }
    return result;
}

}  // namespace dyadit::test
