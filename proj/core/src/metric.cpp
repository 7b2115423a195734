#include "protoens/metric.hpp"

#include "protoens/errors.hpp"
#include "protoens/ops.hpp"

#include <cmath>

namespace protoens {

std::string to_string(MetricKind kind) { return kind == MetricKind::Euclidean ? "euclidean" : "cosine"; }

MetricKind parse_metric_kind(const std::string& name) {
    if (name == "euclidean") return MetricKind::Euclidean;
    if (name == "cosine") return MetricKind::Cosine;
    throw ValidationError("unknown metric '" + name + "' (expected euclidean|cosine)");
}

Tensor compute_prototypes(const Tensor& support) {
    if (support.rank() != 3) throw DimensionError("support embeddings must be N x K x D");
    if (support.dim(1) == 0) throw ContractError("compute_prototypes: K must be at least 1");
    return mean(support, 1);
}

FeatureWeights compute_feature_weights(const Tensor& support, double xi) {
    if (support.rank() != 3) throw DimensionError("support embeddings must be N x K x D");
    if (!(xi > 0.0)) throw ValidationError("xi must be positive");
    const std::size_t n = support.dim(0);
    const std::size_t k = support.dim(1);
    const std::size_t d = support.dim(2);
    if (k == 0) throw ContractError("compute_feature_weights: K must be at least 1");
    const auto x = support.values();
    std::vector<double> a(n * d, 0.0);
    std::vector<double> w(n * d);
    const double denom = double(k) * double(k);
    for (std::size_t c = 0; c < n; ++c) {
        const double* cls = x.data() + c * k * d;
        for (std::size_t j = 0; j < d; ++j) {
            double total = 0.0;
            for (std::size_t i = 0; i < k; ++i) {
                for (std::size_t l = 0; l < k; ++l) {
                    if (l != i) total += std::fabs(cls[i * d + j] - cls[l * d + j]);
                }
            }
            a[c * d + j] = total / denom;
            w[c * d + j] = -std::log(a[c * d + j] + xi);
        }
    }
    return {Tensor(Shape{n, d}, std::move(w)), Tensor(Shape{n, d}, std::move(a)), xi};
}

FeatureWeights uniform_feature_weights(std::size_t n_classes, std::size_t dim) {
    return {Tensor::full(Shape{n_classes, dim}, 1.0), Tensor::zeros(Shape{n_classes, dim}), 0.0};
}

namespace {

void check_metric_shapes(const Tensor& q, const Tensor& c, const Tensor& w) {
    if (q.rank() != 2 || c.rank() != 2 || w.rank() != 2 || q.dim(1) != c.dim(1) || w.shape() != c.shape()) {
        throw DimensionError("metric: expected queries Q x D, prototypes N x D, weights N x D");
    }
}

void check_lengths(std::span<const double> q, std::span<const double> c, std::span<const double> w) {
    if (q.size() != c.size() || w.size() != c.size()) throw DimensionError("metric: vector lengths differ");
}

} // namespace

Tensor weighted_euclidean(const Tensor& queries, const Tensor& prototypes, const Tensor& weights) {
    check_metric_shapes(queries, prototypes, weights);
    const std::size_t nq = queries.dim(0);
    const std::size_t d = queries.dim(1);
    const std::size_t nc = prototypes.dim(0);
    const Tensor diff = sub(reshape(queries, Shape{nq, 1, d}), reshape(prototypes, Shape{1, nc, d}));
    return sum(mul(square(diff), weights), 2);
}

Tensor weighted_cosine(const Tensor& queries, const Tensor& prototypes, const Tensor& weights,
                       double norm_eps) {
    check_metric_shapes(queries, prototypes, weights);
    if (!(norm_eps >= 0.0)) throw DomainError("weighted_cosine: norm_eps must be non-negative");
    const std::size_t nq = queries.dim(0);
    const std::size_t nc = prototypes.dim(0);
    const Tensor dots = matmul(queries, transpose(mul(prototypes, weights)));
    auto norms = [norm_eps](const Tensor& x) {
        const Tensor sq = sum(square(x), 1);
        return sqrt(norm_eps > 0.0 ? add_scalar(sq, norm_eps) : sq);
    };
    const Tensor q_norm = reshape(norms(queries), Shape{nq, 1});
    const Tensor c_norm = reshape(norms(prototypes), Shape{1, nc});
    for (double v : q_norm.values()) {
        if (v == 0.0) throw DomainError("weighted_cosine: zero-norm query");
    }
    for (double v : c_norm.values()) {
        if (v == 0.0) throw DomainError("weighted_cosine: zero-norm prototype");
    }
    return div(dots, mul(q_norm, c_norm));
}

double weighted_euclidean(std::span<const double> query, std::span<const double> proto,
                          std::span<const double> weights) {
    check_lengths(query, proto, weights);
    double total = 0.0;
    for (std::size_t j = 0; j < query.size(); ++j) {
        const double diff = query[j] - proto[j];
        total += weights[j] * diff * diff;
    }
    return total;
}

double weighted_cosine(std::span<const double> query, std::span<const double> proto,
                       std::span<const double> weights) {
    check_lengths(query, proto, weights);
    double dot = 0.0;
    double qq = 0.0;
    double cc = 0.0;
    for (std::size_t j = 0; j < query.size(); ++j) {
        dot += weights[j] * query[j] * proto[j];
        qq += query[j] * query[j];
        cc += proto[j] * proto[j];
    }
    if (qq == 0.0 || cc == 0.0) throw DomainError("weighted_cosine: zero-norm input");
    return dot / (std::sqrt(qq) * std::sqrt(cc));
}

Tensor class_logits(const Tensor& scores, MetricKind kind) {
    return kind == MetricKind::Euclidean ? neg(scores) : scores;
}

Tensor class_posterior(const Tensor& scores, MetricKind kind) {
    if (scores.rank() != 2) throw DimensionError("class_posterior: scores must be Q x N");
    return softmax(class_logits(scores, kind), 1);
}

Tensor score_queries(const Tensor& queries, const Tensor& prototypes, const FeatureWeights& weights,
                     MetricKind kind, double cosine_norm_eps) {
    return kind == MetricKind::Euclidean ? weighted_euclidean(queries, prototypes, weights.w)
                                         : weighted_cosine(queries, prototypes, weights.w, cosine_norm_eps);
}

} // namespace protoens
