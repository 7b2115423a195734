#pragma once

#include "protoens/tensor.hpp"

#include <span>
#include <string>
#include <vector>

namespace protoens {

enum class MetricKind { Euclidean, Cosine };

std::string to_string(MetricKind kind);
/// Accepts euclidean | cosine.
MetricKind parse_metric_kind(const std::string& name);

inline constexpr double kDefaultXi = 0.1;

struct PrototypeSet {
    Tensor prototypes; // N x D
    std::vector<std::string> class_ids;
};

/// Per-class, per-dimension dispersion `a` of the support set and the
/// derived weights w = -log(a + xi). Both are constants (no history).
struct FeatureWeights {
    Tensor w; // N x D
    Tensor a; // N x D
    double xi = kDefaultXi;
};

/// Mean over the K support vectors of each class: N x K x D -> N x D.
Tensor compute_prototypes(const Tensor& support);

/// a[k][j] = sum over ordered pairs i != l of |x_i[j] - x_l[j]|, divided by K^2.
FeatureWeights compute_feature_weights(const Tensor& support, double xi = kDefaultXi);

/// Unit weights, for members with feature attention switched off.
FeatureWeights uniform_feature_weights(std::size_t n_classes, std::size_t dim);

/// d[q][k] = sum_j w[k][j] * (query[q][j] - proto[k][j])^2 : Q x N.
Tensor weighted_euclidean(const Tensor& queries, const Tensor& prototypes, const Tensor& weights);

/// s[q][k] = sum_j w[k][j] * query[q][j] * proto[k][j] / (|query[q]| |proto[k]|) : Q x N.
/// Throws DomainError on a zero-norm query or prototype. A positive
/// `norm_eps` instead computes each norm as sqrt(|x|^2 + norm_eps).
Tensor weighted_cosine(const Tensor& queries, const Tensor& prototypes, const Tensor& weights,
                       double norm_eps = 0.0);

double weighted_euclidean(std::span<const double> query, std::span<const double> proto,
                          std::span<const double> weights);
double weighted_cosine(std::span<const double> query, std::span<const double> proto,
                       std::span<const double> weights);

/// Scores as logits: -distance for Euclidean, +similarity for cosine.
Tensor class_logits(const Tensor& scores, MetricKind kind);

/// Row softmax of class_logits: Q x N.
Tensor class_posterior(const Tensor& scores, MetricKind kind);

/// Distances (Euclidean) or similarities (cosine) of every query to every
/// prototype under the given weights. `cosine_norm_eps` is passed to weighted_cosine.
Tensor score_queries(const Tensor& queries, const Tensor& prototypes, const FeatureWeights& weights,
                     MetricKind kind, double cosine_norm_eps = 0.0);

/// Norm floor used by ensemble members: keeps a member whose features died
/// to exact zero trainable instead of aborting the episode.
inline constexpr double kCosineNormEps = 1e-12;

} // namespace protoens
