#pragma once

#include <cstddef>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace protoens {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_string(const Shape& shape);

namespace detail {
struct Node;
struct TensorAccess;
} // namespace detail

/// Dense row-major array of doubles with reverse-mode gradient support.
///
/// A Tensor is a shared handle: copies alias the same storage. Values are
/// fixed once an op has produced them; only leaves (parameters) are
/// mutated in place, and only by optimizers or initializers. Ops record
/// their inputs when any input requires a gradient and gradient
/// recording is enabled on the calling thread.
class Tensor {
public:
    Tensor() = default;
    Tensor(Shape shape, std::vector<double> values, bool requires_grad = false);

    static Tensor zeros(Shape shape, bool requires_grad = false);
    static Tensor full(Shape shape, double value, bool requires_grad = false);
    static Tensor scalar(double value, bool requires_grad = false);
    static Tensor from_rows(std::initializer_list<std::initializer_list<double>> rows,
                            bool requires_grad = false);
    static Tensor from_values(std::initializer_list<double> values, bool requires_grad = false);

    bool defined() const noexcept { return node_ != nullptr; }
    const Shape& shape() const;
    std::size_t rank() const { return shape().size(); }
    std::size_t dim(std::size_t axis) const;
    std::size_t numel() const;

    std::span<const double> values() const;
    /// Writable view of a leaf's storage. Throws ContractError on op results.
    std::span<double> mutable_values();
    double item() const;
    double at(std::initializer_list<std::size_t> index) const;

    bool requires_grad() const;
    void set_requires_grad(bool on);
    bool is_leaf() const;

    bool has_grad() const;
    std::span<const double> grad() const;
    void zero_grad();
    void clear_grad();

    /// Same values, no history, requires_grad off. Shares nothing.
    Tensor detach() const;
    /// Deep copy as a fresh leaf keeping requires_grad.
    Tensor clone() const;

    /// Accumulates d(this)/d(leaf) into every reachable leaf that requires
    /// a gradient. `this` must hold exactly one element.
    void backward() const;

    const detail::Node* node() const noexcept { return node_.get(); }

private:
    explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}
    std::shared_ptr<detail::Node> node_;

    friend struct detail::TensorAccess;
};

bool grad_enabled() noexcept;

/// Disables gradient recording on the current thread for its lifetime.
class NoGradGuard {
public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool previous_;
};

/// Linearised record of the differentiable ops reachable from a root,
/// in execution (topological) order. Leaves appear as "leaf" entries.
struct ComputationTape {
    struct Entry {
        std::string op;
        std::vector<std::size_t> inputs; // indices of earlier entries
    };
    std::vector<Entry> entries;

    static ComputationTape record(const Tensor& root);
};

} // namespace protoens

namespace protoens {

struct NamedTensor {
    std::string name;
    Tensor tensor;
};

/// Ordered name -> tensor handles. Handles alias the model's storage.
using ParameterList = std::vector<NamedTensor>;

} // namespace protoens
