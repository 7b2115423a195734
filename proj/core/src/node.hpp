#pragma once

#include "protoens/tensor.hpp"

#include <functional>
#include <memory>
#include <vector>

namespace protoens::detail {

struct Node {
    Shape shape;
    std::vector<double> value;
    std::vector<double> grad;
    bool requires_grad = false;
    const char* op = "leaf";
    std::vector<std::shared_ptr<Node>> parents;
    /// Propagates this node's grad into its parents' grads.
    std::function<void(Node&)> backward;

    /// Grad buffer, allocated as zeros on first use.
    std::vector<double>& grad_buffer() {
        if (grad.empty()) grad.assign(value.size(), 0.0);
        return grad;
    }
};

struct TensorAccess {
    static const std::shared_ptr<Node>& node(const Tensor& t) { return t.node_; }
    static Tensor wrap(std::shared_ptr<Node> n) { return Tensor(std::move(n)); }
};

inline const std::shared_ptr<Node>& node_of(const Tensor& t) { return TensorAccess::node(t); }

/// Builds a result node. History is attached only when recording is on and
/// some input requires a gradient; `backward` is dropped otherwise.
Tensor make_result(const char* op, Shape shape, std::vector<double> value,
                   std::vector<std::shared_ptr<Node>> parents,
                   std::function<void(Node&)> backward);

} // namespace protoens::detail
