#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <vector>

#include "gtt/ops.hpp"

namespace gtt::testing {

template <class T>
Tensor<T> random_tensor(Shape shape, std::mt19937_64& rng, double scale = 1.0, bool requires_grad = false)
{
    std::normal_distribution<double> normal(0.0, scale);
    std::vector<T> values(shape_numel(shape));
    for (T& v : values) {
        v = static_cast<T>(normal(rng));
    }
    return Tensor<T>(std::move(shape), std::move(values), requires_grad);
}

/// Plain central differences of a scalar function of x's values. Independent
/// of gtt::grad_check; perturbs a private copy of the values.
inline std::vector<double> central_difference(const std::function<double(const std::vector<double>&)>& f,
                                              std::vector<double> x, double h)
{
    std::vector<double> out(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double orig = x[i];
        x[i] = orig + h;
        const double fp = f(x);
        x[i] = orig - h;
        const double fm = f(x);
        x[i] = orig;
        out[i] = (fp - fm) / (2.0 * h);
    }
    return out;
}

inline double max_rel_diff(const std::vector<double>& a, std::span<const double> b, double floor = 1e-12)
{
    double worst = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double denom = std::max({std::fabs(a[i]), std::fabs(b[i]), floor});
        worst = std::max(worst, std::fabs(a[i] - b[i]) / denom);
    }
    return worst;
}

template <class T>
double max_abs_diff(std::span<const T> a, std::span<const T> b)
{
    double worst = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        worst = std::max(worst, std::fabs(static_cast<double>(a[i]) - static_cast<double>(b[i])));
    }
    return worst;
}

} // namespace gtt::testing
