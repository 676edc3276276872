#pragma once

// Central finite-difference oracle, independent of the reverse-mode path.

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "evlg/nn.hpp"
#include "evlg/rng.hpp"
#include "evlg/tensor.hpp"

namespace evlg::testing {

struct GradCheckResult {
    double max_relative_error = 0.0;
    std::string worst;  // "<name>[index]"
    std::size_t checked = 0;
};

// |a - n| / max(|a|, |n|, floor). The floor keeps entries whose true
// derivative is ~0 from dividing roundoff by roundoff.
inline double relative_error(double analytic, double numeric, double floor = 1e-6) {
    return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

// Compares d(loss)/d(param) from backward() with central differences for
// every entry of every listed tensor (or a strided subset when max_per_tensor
// is smaller than the tensor).
inline GradCheckResult check_gradients(const std::function<Tensor()>& loss_fn, const ParameterList& params,
                                       double step = 1e-5, std::size_t max_per_tensor = SIZE_MAX) {
    for (const auto& [name, t] : params) Tensor(t).zero_grad();
    loss_fn().backward();
    std::vector<std::vector<double>> analytic;
    for (const auto& [name, t] : params) {
        if (t.has_grad()) {
            analytic.emplace_back(t.grad().begin(), t.grad().end());
        } else {
            analytic.emplace_back(t.size(), 0.0);
        }
    }

    GradCheckResult result;
    NoGradGuard no_grad;
    for (std::size_t p = 0; p < params.size(); ++p) {
        Tensor t = params[p].second;
        auto data = t.mutable_data();
        const std::size_t stride = std::max<std::size_t>(1, data.size() / std::min(data.size(), max_per_tensor));
        for (std::size_t i = 0; i < data.size(); i += stride) {
            const double saved = data[i];
            data[i] = saved + step;
            const double up = loss_fn().item();
            data[i] = saved - step;
            const double down = loss_fn().item();
            data[i] = saved;
            const double numeric = (up - down) / (2.0 * step);
            const double err = relative_error(analytic[p][i], numeric);
            ++result.checked;
            if (err > result.max_relative_error) {
                result.max_relative_error = err;
                result.worst = params[p].first + "[" + std::to_string(i) + "]";
            }
        }
    }
    return result;
}

inline Tensor random_tensor(Shape shape, Rng& rng, bool requires_grad = true, double lo = -1.0, double hi = 1.0) {
    std::vector<double> data(shape_size(shape));
    for (auto& v : data) v = rng.uniform(lo, hi);
    return Tensor::from_data(std::move(shape), std::move(data), requires_grad);
}

}  // namespace evlg::testing
