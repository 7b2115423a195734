#pragma once

#include "protoens/rng.hpp"
#include "protoens/tensor.hpp"

#include <cmath>

namespace protoens {

/// Kaiming-uniform weight of shape {fan_in, fan_out}: U(-b, b), b = sqrt(6 / fan_in).
inline Tensor kaiming_uniform(std::size_t fan_in, std::size_t fan_out, Rng& rng) {
    const double bound = std::sqrt(6.0 / double(fan_in));
    std::vector<double> v(fan_in * fan_out);
    for (double& x : v) x = rng.uniform(-bound, bound);
    return Tensor(Shape{fan_in, fan_out}, std::move(v), true);
}

inline Tensor uniform_tensor(Shape shape, double lo, double hi, Rng& rng) {
    std::vector<double> v(shape_numel(shape));
    for (double& x : v) x = rng.uniform(lo, hi);
    return Tensor(std::move(shape), std::move(v), true);
}

/// Zero bias row vector {1, n}, broadcastable over rows.
inline Tensor zero_bias(std::size_t n) { return Tensor::zeros(Shape{1, n}, true); }

} // namespace protoens
