#include "protoens/tensor.hpp"

#include "node.hpp"
#include "protoens/errors.hpp"

#include <algorithm>
#include <numeric>
#include <sstream>
#include <unordered_map>

namespace protoens {

namespace {

thread_local bool g_grad_enabled = true;

std::shared_ptr<detail::Node> new_leaf(Shape shape, std::vector<double> values, bool requires_grad) {
    if (shape_numel(shape) != values.size()) {
        throw DimensionError("tensor shape " + shape_string(shape) + " does not match " +
                             std::to_string(values.size()) + " values");
    }
    auto n = std::make_shared<detail::Node>();
    n->shape = std::move(shape);
    n->value = std::move(values);
    n->requires_grad = requires_grad;
    return n;
}

const detail::Node& checked(const std::shared_ptr<detail::Node>& n) {
    if (!n) throw ContractError("use of an undefined tensor");
    return *n;
}

/// Reverse-postorder over nodes that require a gradient.
std::vector<detail::Node*> topological_order(detail::Node* root) {
    std::vector<detail::Node*> order;
    std::unordered_map<const detail::Node*, bool> visited;
    std::vector<std::pair<detail::Node*, std::size_t>> stack;
    if (!root->requires_grad) return order;
    stack.emplace_back(root, 0);
    visited[root] = true;
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->parents.size()) {
            detail::Node* parent = node->parents[next++].get();
            if (parent->requires_grad && !visited[parent]) {
                visited[parent] = true;
                stack.emplace_back(parent, 0);
            }
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }
    return order;
}

} // namespace

std::size_t shape_numel(const Shape& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_string(const Shape& shape) {
    std::ostringstream out;
    out << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) out << 'x';
        out << shape[i];
    }
    out << ']';
    return out.str();
}

Tensor::Tensor(Shape shape, std::vector<double> values, bool requires_grad)
    : node_(new_leaf(std::move(shape), std::move(values), requires_grad)) {}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
    const std::size_t n = shape_numel(shape);
    return Tensor(std::move(shape), std::vector<double>(n, 0.0), requires_grad);
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
    const std::size_t n = shape_numel(shape);
    return Tensor(std::move(shape), std::vector<double>(n, value), requires_grad);
}

Tensor Tensor::scalar(double value, bool requires_grad) {
    return Tensor(Shape{}, std::vector<double>{value}, requires_grad);
}

Tensor Tensor::from_rows(std::initializer_list<std::initializer_list<double>> rows, bool requires_grad) {
    const std::size_t r = rows.size();
    const std::size_t c = r ? rows.begin()->size() : 0;
    std::vector<double> values;
    values.reserve(r * c);
    for (const auto& row : rows) {
        if (row.size() != c) throw DimensionError("ragged rows in Tensor::from_rows");
        values.insert(values.end(), row.begin(), row.end());
    }
    return Tensor(Shape{r, c}, std::move(values), requires_grad);
}

Tensor Tensor::from_values(std::initializer_list<double> values, bool requires_grad) {
    return Tensor(Shape{values.size()}, std::vector<double>(values), requires_grad);
}

const Shape& Tensor::shape() const { return checked(node_).shape; }

std::size_t Tensor::dim(std::size_t axis) const {
    const Shape& s = shape();
    if (axis >= s.size()) {
        throw DimensionError("axis " + std::to_string(axis) + " out of range for shape " + shape_string(s));
    }
    return s[axis];
}

std::size_t Tensor::numel() const { return checked(node_).value.size(); }

std::span<const double> Tensor::values() const { return checked(node_).value; }

std::span<double> Tensor::mutable_values() {
    checked(node_);
    if (node_->backward) throw ContractError("cannot mutate the output of a recorded op");
    return node_->value;
}

double Tensor::item() const {
    if (numel() != 1) throw ContractError("item() on tensor of shape " + shape_string(shape()));
    return node_->value[0];
}

double Tensor::at(std::initializer_list<std::size_t> index) const {
    const Shape& s = shape();
    if (index.size() != s.size()) throw DimensionError("index rank mismatch");
    std::size_t flat = 0;
    std::size_t axis = 0;
    for (std::size_t i : index) {
        if (i >= s[axis]) throw DimensionError("index out of range");
        flat = flat * s[axis] + i;
        ++axis;
    }
    return node_->value[flat];
}

bool Tensor::requires_grad() const { return checked(node_).requires_grad; }

void Tensor::set_requires_grad(bool on) {
    checked(node_);
    if (node_->backward) throw ContractError("requires_grad can only be set on leaves");
    node_->requires_grad = on;
}

bool Tensor::is_leaf() const { return !checked(node_).backward; }

bool Tensor::has_grad() const { return !checked(node_).grad.empty(); }

std::span<const double> Tensor::grad() const { return checked(node_).grad; }

void Tensor::zero_grad() {
    checked(node_);
    std::fill(node_->grad.begin(), node_->grad.end(), 0.0);
}

void Tensor::clear_grad() {
    checked(node_);
    node_->grad.clear();
    node_->grad.shrink_to_fit();
}

Tensor Tensor::detach() const {
    const auto& n = checked(node_);
    return Tensor(n.shape, n.value, false);
}

Tensor Tensor::clone() const {
    const auto& n = checked(node_);
    return Tensor(n.shape, n.value, n.requires_grad);
}

void Tensor::backward() const {
    const auto& root = checked(node_);
    if (root.value.size() != 1) {
        throw ContractError("backward() needs a scalar loss, got shape " + shape_string(root.shape));
    }
    if (!root.requires_grad) return;

    std::vector<detail::Node*> order = topological_order(node_.get());
    for (detail::Node* n : order) {
        if (n->backward) n->grad.assign(n->value.size(), 0.0);
    }
    node_->grad_buffer()[0] += 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        detail::Node* n = *it;
        if (n->backward) n->backward(*n);
    }
    for (detail::Node* n : order) {
        if (n->backward) {
            n->grad.clear();
            n->grad.shrink_to_fit();
        }
    }
}

bool grad_enabled() noexcept { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }

NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

ComputationTape ComputationTape::record(const Tensor& root) {
    ComputationTape tape;
    const auto& n = detail::node_of(root);
    checked(n);
    std::vector<detail::Node*> order = topological_order(n.get());
    std::unordered_map<const detail::Node*, std::size_t> index;
    for (detail::Node* node : order) {
        Entry e;
        e.op = node->op;
        for (const auto& p : node->parents) {
            auto found = index.find(p.get());
            if (found != index.end()) e.inputs.push_back(found->second);
        }
        index[node] = tape.entries.size();
        tape.entries.push_back(std::move(e));
    }
    return tape;
}

namespace detail {

Tensor make_result(const char* op, Shape shape, std::vector<double> value,
                   std::vector<std::shared_ptr<Node>> parents, std::function<void(Node&)> backward) {
    auto n = std::make_shared<Node>();
    n->shape = std::move(shape);
    n->value = std::move(value);
    n->op = op;
    bool needs = false;
    if (g_grad_enabled) {
        for (const auto& p : parents) needs = needs || p->requires_grad;
    }
    if (needs) {
        n->requires_grad = true;
        n->parents = std::move(parents);
        n->backward = std::move(backward);
    }
    return TensorAccess::wrap(std::move(n));
}

} // namespace detail

} // namespace protoens
