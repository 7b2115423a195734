#pragma once

#include "protoens/tensor.hpp"

#include <span>

namespace protoens {

struct SgdConfig {
    double learning_rate = 0.1;
    double weight_decay = 1e-5;
    /// Rescales the gradient when its global L2 norm exceeds this; 0 disables.
    double max_grad_norm = 0.0;

    /// Throws ValidationError unless learning_rate > 0, weight_decay >= 0 and max_grad_norm >= 0.
    void validate() const;
};

/// Global L2 norm over every gradient present.
double grad_norm(std::span<const Tensor> params);

/// p <- p - lr * (c * grad + weight_decay * p), then clears every grad, where
/// c = min(1, max_grad_norm / grad_norm) when clipping is on and 1 otherwise.
/// Every parameter must carry a gradient.
void sgd_step(std::span<Tensor> params, const SgdConfig& cfg);
void sgd_step(ParameterList& params, const SgdConfig& cfg);

void zero_grads(ParameterList& params);

/// The sgd_step update without config validation; a zero learning rate
/// leaves values untouched. Parameters lacking a gradient are skipped.
void sgd_update(ParameterList& params, double learning_rate, double weight_decay);

} // namespace protoens
