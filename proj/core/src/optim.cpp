#include "protoens/optim.hpp"

#include "protoens/errors.hpp"

#include <cmath>
#include <vector>

namespace protoens {

void SgdConfig::validate() const {
    if (!(learning_rate > 0.0)) throw ValidationError("learning_rate must be positive");
    if (!(weight_decay >= 0.0)) throw ValidationError("weight_decay must be non-negative");
    if (!(max_grad_norm >= 0.0)) throw ValidationError("max_grad_norm must be non-negative");
}

double grad_norm(std::span<const Tensor> params) {
    double total = 0.0;
    for (const Tensor& p : params) {
        if (!p.has_grad()) continue;
        for (double g : p.grad()) total += g * g;
    }
    return std::sqrt(total);
}

void sgd_step(std::span<Tensor> params, const SgdConfig& cfg) {
    cfg.validate();
    for (const Tensor& p : params) {
        if (!p.has_grad()) throw ContractError("sgd_step: parameter without a gradient");
    }
    double c = 1.0;
    if (cfg.max_grad_norm > 0.0) {
        const double norm = grad_norm(params);
        if (norm > cfg.max_grad_norm) c = cfg.max_grad_norm / norm;
    }
    for (Tensor& p : params) {
        auto values = p.mutable_values();
        auto grad = p.grad();
        for (std::size_t i = 0; i < values.size(); ++i) {
            values[i] -= cfg.learning_rate * (c * grad[i] + cfg.weight_decay * values[i]);
        }
        p.clear_grad();
    }
}

void sgd_step(ParameterList& params, const SgdConfig& cfg) {
    std::vector<Tensor> handles;
    handles.reserve(params.size());
    for (auto& p : params) handles.push_back(p.tensor);
    sgd_step(std::span<Tensor>(handles), cfg);
}

void sgd_update(ParameterList& params, double learning_rate, double weight_decay) {
    for (auto& p : params) {
        if (!p.tensor.has_grad()) continue;
        if (learning_rate != 0.0) {
            auto values = p.tensor.mutable_values();
            auto grad = p.tensor.grad();
            for (std::size_t i = 0; i < values.size(); ++i) {
                values[i] -= learning_rate * (grad[i] + weight_decay * values[i]);
            }
        }
        p.tensor.clear_grad();
    }
}

void zero_grads(ParameterList& params) {
    for (auto& p : params) p.tensor.clear_grad();
}

} // namespace protoens
