#pragma once

#include "protoens/tensor.hpp"

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

namespace protoens {

struct GradCheckOptions {
    double step = 1e-5;
    /// A coordinate passes when its absolute or its relative error is within tolerance.
    double abs_tolerance = 1e-6;
    double rel_tolerance = 1e-4;
    std::uint64_t seed = 7;
};

struct GradCheckResult {
    std::string name;
    std::size_t coordinates = 0;
    double max_abs_error = 0.0;
    double max_rel_error = 0.0; // over coordinates failing the absolute test
    std::size_t failures = 0;

    bool passed() const { return failures == 0; }
};

/// Central-difference check of d f / d inputs. `f` must return a scalar
/// (rank 0 or one element) and be deterministic.
GradCheckResult check_gradients(const std::string& name, const std::function<Tensor()>& f,
                                const ParameterList& inputs, const GradCheckOptions& opts = {});

/// Every differentiable op, the embedding lookup, the metric layer, the
/// training losses and all four encoders at reduced sizes.
std::vector<GradCheckResult> run_gradcheck_suite(const GradCheckOptions& opts = {});

} // namespace protoens
