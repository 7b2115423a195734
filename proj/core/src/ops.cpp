#include "protoens/ops.hpp"

#include "node.hpp"
#include "protoens/errors.hpp"

#include <cblas.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

namespace protoens {

using detail::make_result;
using detail::Node;
using detail::node_of;

namespace {

const std::shared_ptr<Node>& need(const Tensor& t, const char* op) {
    const auto& n = node_of(t);
    if (!n) throw ContractError(std::string(op) + ": undefined tensor argument");
    return n;
}

void require_rank(const Tensor& t, std::size_t rank, const char* op) {
    if (t.rank() != rank) {
        throw DimensionError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got shape " +
                             shape_string(t.shape()));
    }
}

struct Broadcast {
    Shape out;
    std::vector<std::size_t> a_strides;
    std::vector<std::size_t> b_strides;
};

std::vector<std::size_t> aligned_strides(const Shape& s, const Shape& out) {
    const std::size_t rank = out.size();
    std::vector<std::size_t> strides(rank, 0);
    std::size_t stride = 1;
    for (std::size_t i = 0; i < s.size(); ++i) {
        const std::size_t axis = s.size() - 1 - i;
        const std::size_t out_axis = rank - 1 - i;
        strides[out_axis] = s[axis] == 1 ? 0 : stride;
        stride *= s[axis];
    }
    return strides;
}

Broadcast broadcast_shapes(const Shape& a, const Shape& b, const char* op) {
    const std::size_t rank = std::max(a.size(), b.size());
    Broadcast bc;
    bc.out.assign(rank, 1);
    for (std::size_t i = 0; i < rank; ++i) {
        const std::size_t da = i < a.size() ? a[a.size() - 1 - i] : 1;
        const std::size_t db = i < b.size() ? b[b.size() - 1 - i] : 1;
        if (da != db && da != 1 && db != 1) {
            throw DimensionError(std::string(op) + ": shapes " + shape_string(a) + " and " + shape_string(b) +
                                 " do not broadcast");
        }
        bc.out[rank - 1 - i] = std::max(da, db);
        if (da == 0 || db == 0) bc.out[rank - 1 - i] = 0;
    }
    bc.a_strides = aligned_strides(a, bc.out);
    bc.b_strides = aligned_strides(b, bc.out);
    return bc;
}

/// Calls f(out_index, a_index, b_index) for every output element.
template <typename F>
void for_each_broadcast(const Broadcast& bc, F&& f) {
    const std::size_t total = shape_numel(bc.out);
    if (total == 0) return;
    const std::size_t rank = bc.out.size();
    if (rank == 0) {
        f(std::size_t{0}, std::size_t{0}, std::size_t{0});
        return;
    }
    const std::size_t inner = bc.out[rank - 1];
    const std::size_t sa = bc.a_strides[rank - 1];
    const std::size_t sb = bc.b_strides[rank - 1];
    std::vector<std::size_t> counter(rank, 0);
    std::size_t ia = 0;
    std::size_t ib = 0;
    for (std::size_t base = 0; base < total; base += inner) {
        for (std::size_t j = 0; j < inner; ++j) f(base + j, ia + j * sa, ib + j * sb);
        // advance the odometer over all but the innermost axis
        for (std::size_t axis = rank - 1; axis-- > 0;) {
            ++counter[axis];
            ia += bc.a_strides[axis];
            ib += bc.b_strides[axis];
            if (counter[axis] < bc.out[axis]) break;
            ia -= counter[axis] * bc.a_strides[axis];
            ib -= counter[axis] * bc.b_strides[axis];
            counter[axis] = 0;
        }
    }
}

/// dfa(x, y, out) and dfb(x, y, out) are partial derivatives.
template <typename Fwd, typename Da, typename Db>
Tensor binary(const char* op, const Tensor& a, const Tensor& b, Fwd fwd, Da dfa, Db dfb) {
    const auto& na = need(a, op);
    const auto& nb = need(b, op);
    Broadcast bc = broadcast_shapes(na->shape, nb->shape, op);
    std::vector<double> out(shape_numel(bc.out));
    const double* pa = na->value.data();
    const double* pb = nb->value.data();
    if (na->shape == nb->shape) {
        for (std::size_t i = 0; i < out.size(); ++i) out[i] = fwd(pa[i], pb[i]);
    } else {
        for_each_broadcast(bc, [&](std::size_t o, std::size_t i, std::size_t j) { out[o] = fwd(pa[i], pb[j]); });
    }
    Shape shape = bc.out;
    return make_result(op, std::move(shape), std::move(out), {na, nb},
                       [bc = std::move(bc), dfa, dfb](Node& self) {
                           Node& A = *self.parents[0];
                           Node& B = *self.parents[1];
                           const double* g = self.grad.data();
                           const double* y = self.value.data();
                           const double* xa = A.value.data();
                           const double* xb = B.value.data();
                           double* ga = A.requires_grad ? A.grad_buffer().data() : nullptr;
                           double* gb = B.requires_grad ? B.grad_buffer().data() : nullptr;
                           for_each_broadcast(bc, [&](std::size_t o, std::size_t i, std::size_t j) {
                               if (ga) ga[i] += g[o] * dfa(xa[i], xb[j], y[o]);
                               if (gb) gb[j] += g[o] * dfb(xa[i], xb[j], y[o]);
                           });
                       });
}

/// df(x, out) is the derivative.
template <typename Fwd, typename Df>
Tensor unary(const char* op, const Tensor& a, Fwd fwd, Df df) {
    const auto& na = need(a, op);
    std::vector<double> out(na->value.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = fwd(na->value[i]);
    return make_result(op, na->shape, std::move(out), {na}, [df](Node& self) {
        Node& A = *self.parents[0];
        auto& ga = A.grad_buffer();
        for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += self.grad[i] * df(A.value[i], self.value[i]);
    });
}

/// Splits a shape around `axis` into (outer, axis length, inner).
struct AxisSplit {
    std::size_t outer = 1;
    std::size_t n = 1;
    std::size_t inner = 1;
};

AxisSplit split_at(const Shape& s, std::size_t axis, const char* op) {
    if (axis >= s.size()) {
        throw DimensionError(std::string(op) + ": axis " + std::to_string(axis) + " out of range for shape " +
                             shape_string(s));
    }
    AxisSplit r;
    for (std::size_t i = 0; i < axis; ++i) r.outer *= s[i];
    r.n = s[axis];
    for (std::size_t i = axis + 1; i < s.size(); ++i) r.inner *= s[i];
    return r;
}

Shape without_axis(const Shape& s, std::size_t axis) {
    Shape out;
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (i != axis) out.push_back(s[i]);
    }
    return out;
}

void check_finite_input(const Node& n, const char* op) {
    for (double v : n.value) {
        if (!std::isfinite(v)) throw DomainError(std::string(op) + ": non-finite input");
    }
}

} // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
    const auto& na = need(a, "matmul");
    const auto& nb = need(b, "matmul");
    require_rank(a, 2, "matmul");
    require_rank(b, 2, "matmul");
    const std::size_t m = na->shape[0];
    const std::size_t k = na->shape[1];
    const std::size_t n = nb->shape[1];
    if (nb->shape[0] != k) {
        throw DimensionError("matmul: inner dimensions differ, " + shape_string(na->shape) + " x " +
                             shape_string(nb->shape));
    }
    std::vector<double> out(m * n, 0.0);
    if (m && n && k) {
        cblas_dgemm(CblasRowMajor, CblasNoTrans, CblasNoTrans, int(m), int(n), int(k), 1.0, na->value.data(),
                    int(k), nb->value.data(), int(n), 0.0, out.data(), int(n));
    }
    return make_result("matmul", Shape{m, n}, std::move(out), {na, nb}, [m, k, n](Node& self) {
        Node& A = *self.parents[0];
        Node& B = *self.parents[1];
        if (!m || !n || !k) return;
        if (A.requires_grad) {
            // dA = dC * B^T
            cblas_dgemm(CblasRowMajor, CblasNoTrans, CblasTrans, int(m), int(k), int(n), 1.0, self.grad.data(),
                        int(n), B.value.data(), int(n), 1.0, A.grad_buffer().data(), int(k));
        }
        if (B.requires_grad) {
            // dB = A^T * dC
            cblas_dgemm(CblasRowMajor, CblasTrans, CblasNoTrans, int(k), int(n), int(m), 1.0, A.value.data(),
                        int(k), self.grad.data(), int(n), 1.0, B.grad_buffer().data(), int(n));
        }
    });
}

Tensor transpose(const Tensor& a) {
    const auto& na = need(a, "transpose");
    require_rank(a, 2, "transpose");
    const std::size_t r = na->shape[0];
    const std::size_t c = na->shape[1];
    std::vector<double> out(r * c);
    for (std::size_t i = 0; i < r; ++i) {
        for (std::size_t j = 0; j < c; ++j) out[j * r + i] = na->value[i * c + j];
    }
    return make_result("transpose", Shape{c, r}, std::move(out), {na}, [r, c](Node& self) {
        auto& ga = self.parents[0]->grad_buffer();
        for (std::size_t i = 0; i < r; ++i) {
            for (std::size_t j = 0; j < c; ++j) ga[i * c + j] += self.grad[j * r + i];
        }
    });
}

Tensor add(const Tensor& a, const Tensor& b) {
    return binary(
        "add", a, b, [](double x, double y) { return x + y; }, [](double, double, double) { return 1.0; },
        [](double, double, double) { return 1.0; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
    return binary(
        "sub", a, b, [](double x, double y) { return x - y; }, [](double, double, double) { return 1.0; },
        [](double, double, double) { return -1.0; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
    return binary(
        "mul", a, b, [](double x, double y) { return x * y; }, [](double, double y, double) { return y; },
        [](double x, double, double) { return x; });
}

Tensor div(const Tensor& a, const Tensor& b) {
    for (double v : need(b, "div")->value) {
        if (v == 0.0) throw DomainError("div: division by zero");
    }
    return binary(
        "div", a, b, [](double x, double y) { return x / y; }, [](double, double y, double) { return 1.0 / y; },
        [](double x, double y, double) { return -x / (y * y); });
}

Tensor neg(const Tensor& a) {
    return unary("neg", a, [](double x) { return -x; }, [](double, double) { return -1.0; });
}

Tensor abs(const Tensor& a) {
    return unary(
        "abs", a, [](double x) { return std::fabs(x); },
        [](double x, double) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); });
}

Tensor log(const Tensor& a) {
    for (double v : need(a, "log")->value) {
        if (!(v > 0.0)) throw DomainError("log: non-positive input " + std::to_string(v));
    }
    return unary("log", a, [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

Tensor exp(const Tensor& a) {
    Tensor out = unary("exp", a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
    for (double v : out.values()) {
        if (!std::isfinite(v)) throw DomainError("exp: overflow");
    }
    return out;
}

Tensor square(const Tensor& a) {
    return unary("square", a, [](double x) { return x * x; }, [](double x, double) { return 2.0 * x; });
}

Tensor sqrt(const Tensor& a) {
    for (double v : need(a, "sqrt")->value) {
        if (v < 0.0) throw DomainError("sqrt: negative input");
    }
    return unary("sqrt", a, [](double x) { return std::sqrt(x); }, [](double, double y) { return 0.5 / y; });
}

Tensor tanh(const Tensor& a) {
    return unary("tanh", a, [](double x) { return std::tanh(x); }, [](double, double y) { return 1.0 - y * y; });
}

Tensor sigmoid(const Tensor& a) {
    return unary(
        "sigmoid", a,
        [](double x) {
            if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
            const double e = std::exp(x);
            return e / (1.0 + e);
        },
        [](double, double y) { return y * (1.0 - y); });
}

Tensor relu(const Tensor& a) {
    return unary(
        "relu", a, [](double x) { return x > 0.0 ? x : 0.0; }, [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Tensor scale(const Tensor& a, double factor) {
    return unary("scale", a, [factor](double x) { return x * factor; }, [factor](double, double) { return factor; });
}

Tensor add_scalar(const Tensor& a, double offset) {
    return unary("add_scalar", a, [offset](double x) { return x + offset; }, [](double, double) { return 1.0; });
}

Tensor elementwise(ElementwiseOp op, const Tensor& a, const Tensor& b) {
    auto need_b = [&] {
        if (!b.defined()) throw ContractError("elementwise: binary op needs a second operand");
    };
    switch (op) {
    case ElementwiseOp::Add: need_b(); return add(a, b);
    case ElementwiseOp::Sub: need_b(); return sub(a, b);
    case ElementwiseOp::Mul: need_b(); return mul(a, b);
    case ElementwiseOp::Div: need_b(); return div(a, b);
    case ElementwiseOp::Abs: return abs(a);
    case ElementwiseOp::Log: return log(a);
    case ElementwiseOp::Exp: return exp(a);
    case ElementwiseOp::Square: return square(a);
    case ElementwiseOp::Negate: return neg(a);
    case ElementwiseOp::Sqrt: return sqrt(a);
    case ElementwiseOp::Tanh: return tanh(a);
    case ElementwiseOp::Sigmoid: return sigmoid(a);
    case ElementwiseOp::Relu: return relu(a);
    }
    throw ContractError("elementwise: unknown op");
}

Tensor reduce(ReduceOp op, const Tensor& a, std::size_t axis) {
    const auto& na = need(a, "reduce");
    const AxisSplit sp = split_at(na->shape, axis, "reduce");
    if (sp.n == 0) throw DomainError("reduce: empty reduction axis");
    std::vector<double> out(sp.outer * sp.inner, 0.0);
    const double* x = na->value.data();
    switch (op) {
    case ReduceOp::Sum:
    case ReduceOp::Mean: {
        const double factor = op == ReduceOp::Mean ? 1.0 / double(sp.n) : 1.0;
        for (std::size_t o = 0; o < sp.outer; ++o) {
            for (std::size_t k = 0; k < sp.n; ++k) {
                const double* row = x + (o * sp.n + k) * sp.inner;
                double* dst = out.data() + o * sp.inner;
                for (std::size_t i = 0; i < sp.inner; ++i) dst[i] += row[i];
            }
        }
        if (factor != 1.0) {
            for (double& v : out) v *= factor;
        }
        return make_result(op == ReduceOp::Mean ? "mean" : "sum", without_axis(na->shape, axis), std::move(out),
                           {na}, [sp, factor](Node& self) {
                               auto& ga = self.parents[0]->grad_buffer();
                               for (std::size_t o = 0; o < sp.outer; ++o) {
                                   const double* g = self.grad.data() + o * sp.inner;
                                   for (std::size_t k = 0; k < sp.n; ++k) {
                                       double* dst = ga.data() + (o * sp.n + k) * sp.inner;
                                       for (std::size_t i = 0; i < sp.inner; ++i) dst[i] += factor * g[i];
                                   }
                               }
                           });
    }
    case ReduceOp::Max: {
        std::vector<std::size_t> arg(out.size(), 0);
        for (std::size_t o = 0; o < sp.outer; ++o) {
            for (std::size_t i = 0; i < sp.inner; ++i) {
                std::size_t best = 0;
                double best_v = x[o * sp.n * sp.inner + i];
                for (std::size_t k = 1; k < sp.n; ++k) {
                    const double v = x[(o * sp.n + k) * sp.inner + i];
                    if (v > best_v) {
                        best_v = v;
                        best = k;
                    }
                }
                out[o * sp.inner + i] = best_v;
                arg[o * sp.inner + i] = best;
            }
        }
        return make_result("max", without_axis(na->shape, axis), std::move(out), {na},
                           [sp, arg = std::move(arg)](Node& self) {
                               auto& ga = self.parents[0]->grad_buffer();
                               for (std::size_t o = 0; o < sp.outer; ++o) {
                                   for (std::size_t i = 0; i < sp.inner; ++i) {
                                       const std::size_t flat = o * sp.inner + i;
                                       ga[(o * sp.n + arg[flat]) * sp.inner + i] += self.grad[flat];
                                   }
                               }
                           });
    }
    }
    throw ContractError("reduce: unknown op");
}

Tensor sum(const Tensor& a, std::size_t axis) { return reduce(ReduceOp::Sum, a, axis); }
Tensor mean(const Tensor& a, std::size_t axis) { return reduce(ReduceOp::Mean, a, axis); }
Tensor max(const Tensor& a, std::size_t axis) { return reduce(ReduceOp::Max, a, axis); }

Tensor sum_all(const Tensor& a) {
    const auto& na = need(a, "sum_all");
    double total = 0.0;
    for (double v : na->value) total += v;
    return make_result("sum_all", Shape{}, {total}, {na}, [](Node& self) {
        auto& ga = self.parents[0]->grad_buffer();
        const double g = self.grad[0];
        for (double& v : ga) v += g;
    });
}

Tensor softmax(const Tensor& a, std::size_t axis) {
    const auto& na = need(a, "softmax");
    check_finite_input(*na, "softmax");
    const AxisSplit sp = split_at(na->shape, axis, "softmax");
    std::vector<double> out(na->value.size());
    for (std::size_t o = 0; o < sp.outer; ++o) {
        for (std::size_t i = 0; i < sp.inner; ++i) {
            const std::size_t base = o * sp.n * sp.inner + i;
            double m = -std::numeric_limits<double>::infinity();
            for (std::size_t k = 0; k < sp.n; ++k) m = std::max(m, na->value[base + k * sp.inner]);
            double z = 0.0;
            for (std::size_t k = 0; k < sp.n; ++k) {
                const double e = std::exp(na->value[base + k * sp.inner] - m);
                out[base + k * sp.inner] = e;
                z += e;
            }
            for (std::size_t k = 0; k < sp.n; ++k) out[base + k * sp.inner] /= z;
        }
    }
    return make_result("softmax", na->shape, std::move(out), {na}, [sp](Node& self) {
        auto& ga = self.parents[0]->grad_buffer();
        for (std::size_t o = 0; o < sp.outer; ++o) {
            for (std::size_t i = 0; i < sp.inner; ++i) {
                const std::size_t base = o * sp.n * sp.inner + i;
                double dot = 0.0;
                for (std::size_t k = 0; k < sp.n; ++k) {
                    dot += self.grad[base + k * sp.inner] * self.value[base + k * sp.inner];
                }
                for (std::size_t k = 0; k < sp.n; ++k) {
                    const std::size_t idx = base + k * sp.inner;
                    ga[idx] += self.value[idx] * (self.grad[idx] - dot);
                }
            }
        }
    });
}

Tensor log_softmax(const Tensor& a, std::size_t axis) {
    const auto& na = need(a, "log_softmax");
    check_finite_input(*na, "log_softmax");
    const AxisSplit sp = split_at(na->shape, axis, "log_softmax");
    std::vector<double> out(na->value.size());
    for (std::size_t o = 0; o < sp.outer; ++o) {
        for (std::size_t i = 0; i < sp.inner; ++i) {
            const std::size_t base = o * sp.n * sp.inner + i;
            double m = -std::numeric_limits<double>::infinity();
            for (std::size_t k = 0; k < sp.n; ++k) m = std::max(m, na->value[base + k * sp.inner]);
            double z = 0.0;
            for (std::size_t k = 0; k < sp.n; ++k) z += std::exp(na->value[base + k * sp.inner] - m);
            const double lz = m + std::log(z);
            for (std::size_t k = 0; k < sp.n; ++k) out[base + k * sp.inner] = na->value[base + k * sp.inner] - lz;
        }
    }
    return make_result("log_softmax", na->shape, std::move(out), {na}, [sp](Node& self) {
        auto& ga = self.parents[0]->grad_buffer();
        for (std::size_t o = 0; o < sp.outer; ++o) {
            for (std::size_t i = 0; i < sp.inner; ++i) {
                const std::size_t base = o * sp.n * sp.inner + i;
                double gsum = 0.0;
                for (std::size_t k = 0; k < sp.n; ++k) gsum += self.grad[base + k * sp.inner];
                for (std::size_t k = 0; k < sp.n; ++k) {
                    const std::size_t idx = base + k * sp.inner;
                    ga[idx] += self.grad[idx] - std::exp(self.value[idx]) * gsum;
                }
            }
        }
    });
}

Tensor masked_softmax(const Tensor& a, const std::vector<bool>& key_mask) {
    const auto& na = need(a, "masked_softmax");
    require_rank(a, 2, "masked_softmax");
    const std::size_t rows = na->shape[0];
    const std::size_t cols = na->shape[1];
    if (key_mask.size() != cols) throw DimensionError("masked_softmax: mask length differs from column count");
    if (std::find(key_mask.begin(), key_mask.end(), true) == key_mask.end()) {
        throw ContractError("masked_softmax: every key is masked");
    }
    check_finite_input(*na, "masked_softmax");
    std::vector<double> out(rows * cols, 0.0);
    for (std::size_t r = 0; r < rows; ++r) {
        const double* x = na->value.data() + r * cols;
        double* y = out.data() + r * cols;
        double m = -std::numeric_limits<double>::infinity();
        for (std::size_t c = 0; c < cols; ++c) {
            if (key_mask[c]) m = std::max(m, x[c]);
        }
        double z = 0.0;
        for (std::size_t c = 0; c < cols; ++c) {
            if (key_mask[c]) {
                y[c] = std::exp(x[c] - m);
                z += y[c];
            }
        }
        for (std::size_t c = 0; c < cols; ++c) y[c] /= z;
    }
    return make_result("masked_softmax", na->shape, std::move(out), {na}, [rows, cols](Node& self) {
        auto& ga = self.parents[0]->grad_buffer();
        for (std::size_t r = 0; r < rows; ++r) {
            const double* y = self.value.data() + r * cols;
            const double* g = self.grad.data() + r * cols;
            double dot = 0.0;
            for (std::size_t c = 0; c < cols; ++c) dot += g[c] * y[c];
            for (std::size_t c = 0; c < cols; ++c) ga[r * cols + c] += y[c] * (g[c] - dot);
        }
    });
}

Tensor reshape(const Tensor& a, Shape shape) {
    const auto& na = need(a, "reshape");
    if (shape_numel(shape) != na->value.size()) {
        throw DimensionError("reshape: cannot view " + shape_string(na->shape) + " as " + shape_string(shape));
    }
    return make_result("reshape", std::move(shape), na->value, {na}, [](Node& self) {
        auto& ga = self.parents[0]->grad_buffer();
        for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += self.grad[i];
    });
}

Tensor concat(std::span<const Tensor> parts, std::size_t axis) {
    if (parts.empty()) throw ContractError("concat: no inputs");
    const Shape& first = need(parts[0], "concat")->shape;
    if (axis >= first.size()) throw DimensionError("concat: axis out of range");
    std::vector<std::shared_ptr<Node>> nodes;
    std::vector<std::size_t> widths; // axis length times inner size, per part
    std::size_t axis_total = 0;
    const AxisSplit sp0 = split_at(first, axis, "concat");
    for (const Tensor& t : parts) {
        const auto& n = need(t, "concat");
        if (n->shape.size() != first.size()) throw DimensionError("concat: rank mismatch");
        for (std::size_t i = 0; i < first.size(); ++i) {
            if (i != axis && n->shape[i] != first[i]) {
                throw DimensionError("concat: shapes " + shape_string(first) + " and " + shape_string(n->shape) +
                                     " differ off the concat axis");
            }
        }
        axis_total += n->shape[axis];
        widths.push_back(n->shape[axis] * sp0.inner);
        nodes.push_back(n);
    }
    Shape shape = first;
    shape[axis] = axis_total;
    const std::size_t row = axis_total * sp0.inner;
    std::vector<double> out(sp0.outer * row);
    std::size_t col = 0;
    for (std::size_t p = 0; p < nodes.size(); ++p) {
        const std::size_t w = widths[p];
        for (std::size_t o = 0; o < sp0.outer; ++o) {
            std::copy_n(nodes[p]->value.data() + o * w, w, out.data() + o * row + col);
        }
        col += w;
    }
    const std::size_t outer = sp0.outer;
    return make_result("concat", std::move(shape), std::move(out), std::move(nodes),
                       [widths = std::move(widths), outer, row](Node& self) {
                           std::size_t col = 0;
                           for (std::size_t p = 0; p < self.parents.size(); ++p) {
                               Node& P = *self.parents[p];
                               const std::size_t w = widths[p];
                               if (P.requires_grad) {
                                   auto& gp = P.grad_buffer();
                                   for (std::size_t o = 0; o < outer; ++o) {
                                       const double* g = self.grad.data() + o * row + col;
                                       double* dst = gp.data() + o * w;
                                       for (std::size_t i = 0; i < w; ++i) dst[i] += g[i];
                                   }
                               }
                               col += w;
                           }
                       });
}

Tensor slice(const Tensor& a, std::size_t axis, std::size_t begin, std::size_t end) {
    const auto& na = need(a, "slice");
    const AxisSplit sp = split_at(na->shape, axis, "slice");
    if (begin > end || end > sp.n) {
        throw DimensionError("slice: range [" + std::to_string(begin) + ", " + std::to_string(end) +
                             ") out of bounds for axis length " + std::to_string(sp.n));
    }
    Shape shape = na->shape;
    shape[axis] = end - begin;
    const std::size_t w = (end - begin) * sp.inner;
    const std::size_t src_row = sp.n * sp.inner;
    const std::size_t start = begin * sp.inner;
    std::vector<double> out(sp.outer * w);
    for (std::size_t o = 0; o < sp.outer; ++o) {
        std::copy_n(na->value.data() + o * src_row + start, w, out.data() + o * w);
    }
    const std::size_t outer = sp.outer;
    return make_result("slice", std::move(shape), std::move(out), {na}, [outer, w, src_row, start](Node& self) {
        auto& ga = self.parents[0]->grad_buffer();
        for (std::size_t o = 0; o < outer; ++o) {
            const double* g = self.grad.data() + o * w;
            double* dst = ga.data() + o * src_row + start;
            for (std::size_t i = 0; i < w; ++i) dst[i] += g[i];
        }
    });
}

Tensor gather_rows(const Tensor& a, std::span<const std::size_t> rows) {
    const auto& na = need(a, "gather_rows");
    if (na->shape.empty()) throw DimensionError("gather_rows: scalar input");
    const std::size_t n_rows = na->shape[0];
    const std::size_t width = n_rows ? na->value.size() / n_rows : 0;
    Shape shape = na->shape;
    shape[0] = rows.size();
    std::vector<double> out(rows.size() * width);
    for (std::size_t i = 0; i < rows.size(); ++i) {
        if (rows[i] >= n_rows) throw DimensionError("gather_rows: row index out of range");
        std::copy_n(na->value.data() + rows[i] * width, width, out.data() + i * width);
    }
    return make_result("gather_rows", std::move(shape), std::move(out), {na},
                       [idx = std::vector<std::size_t>(rows.begin(), rows.end()), width](Node& self) {
                           auto& ga = self.parents[0]->grad_buffer();
                           for (std::size_t i = 0; i < idx.size(); ++i) {
                               const double* g = self.grad.data() + i * width;
                               double* dst = ga.data() + idx[i] * width;
                               for (std::size_t j = 0; j < width; ++j) dst[j] += g[j];
                           }
                       });
}

Tensor pick(const Tensor& a, std::span<const std::size_t> columns) {
    const auto& na = need(a, "pick");
    require_rank(a, 2, "pick");
    const std::size_t rows = na->shape[0];
    const std::size_t cols = na->shape[1];
    if (columns.size() != rows) throw DimensionError("pick: need one column per row");
    std::vector<double> out(rows);
    for (std::size_t r = 0; r < rows; ++r) {
        if (columns[r] >= cols) throw DimensionError("pick: column index out of range");
        out[r] = na->value[r * cols + columns[r]];
    }
    return make_result("pick", Shape{rows}, std::move(out), {na},
                       [idx = std::vector<std::size_t>(columns.begin(), columns.end()), cols](Node& self) {
                           auto& ga = self.parents[0]->grad_buffer();
                           for (std::size_t r = 0; r < idx.size(); ++r) ga[r * cols + idx[r]] += self.grad[r];
                       });
}

namespace {

void check_offsets(std::span<const std::size_t> offsets, std::size_t total, const char* op) {
    if (offsets.empty() || offsets.front() != 0 || offsets.back() != total) {
        throw DimensionError(std::string(op) + ": offsets must run from 0 to the row count");
    }
    for (std::size_t i = 1; i < offsets.size(); ++i) {
        if (offsets[i] < offsets[i - 1]) throw DimensionError(std::string(op) + ": offsets must be sorted");
    }
}

} // namespace

Tensor unfold_sequences(const Tensor& x, std::span<const std::size_t> offsets, std::size_t window) {
    const auto& nx = need(x, "unfold_sequences");
    require_rank(x, 2, "unfold_sequences");
    if (window % 2 == 0) throw ContractError("unfold_sequences: window must be odd");
    const std::size_t total = nx->shape[0];
    const std::size_t c = nx->shape[1];
    check_offsets(offsets, total, "unfold_sequences");
    const std::size_t half = window / 2;
    const std::size_t width = window * c;
    // source row for each (row, tap), or -1 for padding
    std::vector<std::ptrdiff_t> src(total * window, -1);
    for (std::size_t s = 0; s + 1 < offsets.size(); ++s) {
        const auto lo = static_cast<std::ptrdiff_t>(offsets[s]);
        const auto hi = static_cast<std::ptrdiff_t>(offsets[s + 1]);
        for (std::ptrdiff_t r = lo; r < hi; ++r) {
            for (std::size_t k = 0; k < window; ++k) {
                const std::ptrdiff_t from = r - static_cast<std::ptrdiff_t>(half) + static_cast<std::ptrdiff_t>(k);
                if (from >= lo && from < hi) src[std::size_t(r) * window + k] = from;
            }
        }
    }
    std::vector<double> out(total * width, 0.0);
    for (std::size_t r = 0; r < total; ++r) {
        for (std::size_t k = 0; k < window; ++k) {
            const std::ptrdiff_t from = src[r * window + k];
            if (from >= 0) std::copy_n(nx->value.data() + std::size_t(from) * c, c, out.data() + r * width + k * c);
        }
    }
    return make_result("unfold_sequences", Shape{total, width}, std::move(out), {nx},
                       [src = std::move(src), window, c, width](Node& self) {
                           auto& gx = self.parents[0]->grad_buffer();
                           const std::size_t total = src.size() / window;
                           for (std::size_t r = 0; r < total; ++r) {
                               for (std::size_t k = 0; k < window; ++k) {
                                   const std::ptrdiff_t from = src[r * window + k];
                                   if (from < 0) continue;
                                   const double* g = self.grad.data() + r * width + k * c;
                                   double* dst = gx.data() + std::size_t(from) * c;
                                   for (std::size_t j = 0; j < c; ++j) dst[j] += g[j];
                               }
                           }
                       });
}

Tensor segment_max(const Tensor& x, std::span<const std::size_t> offsets) {
    const auto& nx = need(x, "segment_max");
    require_rank(x, 2, "segment_max");
    const std::size_t total = nx->shape[0];
    const std::size_t c = nx->shape[1];
    check_offsets(offsets, total, "segment_max");
    const std::size_t segments = offsets.size() - 1;
    std::vector<double> out(segments * c);
    std::vector<std::size_t> arg(segments * c);
    for (std::size_t s = 0; s < segments; ++s) {
        if (offsets[s + 1] == offsets[s]) throw ContractError("segment_max: empty sequence");
        const double* first = nx->value.data() + offsets[s] * c;
        for (std::size_t j = 0; j < c; ++j) {
            out[s * c + j] = first[j];
            arg[s * c + j] = offsets[s];
        }
        for (std::size_t r = offsets[s] + 1; r < offsets[s + 1]; ++r) {
            const double* row = nx->value.data() + r * c;
            for (std::size_t j = 0; j < c; ++j) {
                if (row[j] > out[s * c + j]) {
                    out[s * c + j] = row[j];
                    arg[s * c + j] = r;
                }
            }
        }
    }
    return make_result("segment_max", Shape{segments, c}, std::move(out), {nx},
                       [arg = std::move(arg), c](Node& self) {
                           auto& gx = self.parents[0]->grad_buffer();
                           for (std::size_t i = 0; i < arg.size(); ++i) gx[arg[i] * c + i % c] += self.grad[i];
                       });
}

} // namespace protoens
