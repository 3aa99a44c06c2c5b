#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "encbridge/random.hpp"
#include "encbridge/tensor.hpp"

namespace encbridge::testing {

template <typename T>
Tensor<T> random_tensor(Rng& rng, Shape shape, double lo = -1, double hi = 1, bool requires_grad = false) {
    std::vector<T> v(shape_numel(shape));
    for (auto& x : v) x = static_cast<T>(rng.uniform(lo, hi));
    return Tensor<T>(std::move(shape), std::move(v), requires_grad);
}

inline double max_rel_diff(std::span<const double> a, std::span<const double> b, double floor = 1e-6) {
    double worst = 0;
    for (std::size_t i = 0; i < a.size(); ++i)
        worst = std::max(worst, std::abs(a[i] - b[i]) / std::max({std::abs(a[i]), std::abs(b[i]), floor}));
    return worst;
}

/// Max relative error between autograd and central differences for a scalar
/// function of the given leaf inputs.
inline double fd_max_rel_err(std::vector<Tensor<double>>& inputs,
                             const std::function<Tensor<double>(const std::vector<Tensor<double>>&)>& f,
                             double step = 1e-5, double floor = 1e-6) {
    for (auto& x : inputs) {
        x.set_requires_grad(true);
        x.zero_grad();
    }
    {
        GraphScope<double> scope;
        scope.graph().backward(f(inputs));
    }
    double worst = 0;
    for (auto& x : inputs) {
        const std::vector<double> analytic(x.grad().begin(), x.grad().end());
        auto data = x.data();
        for (std::size_t i = 0; i < data.size(); ++i) {
            const double orig = data[i];
            NoGradGuard ng;
            data[i] = orig + step;
            const double up = f(inputs).item();
            data[i] = orig - step;
            const double down = f(inputs).item();
            data[i] = orig;
            const double numeric = (up - down) / (2 * step);
            worst = std::max(worst, std::abs(analytic[i] - numeric) /
                                        std::max({std::abs(analytic[i]), std::abs(numeric), floor}));
        }
    }
    return worst;
}

/// Random weighting so every output element contributes a distinct
/// gradient to the scalar loss.
inline Tensor<double> weighted_sum(const Tensor<double>& y, std::uint64_t seed) {
    Rng rng(mix_seed(seed, 99));
    auto w = random_tensor<double>(rng, y.shape());
    return sum(mul(y, w));
}

}  // namespace encbridge::testing
