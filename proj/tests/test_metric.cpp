#include "protoens/errors.hpp"
#include "protoens/metric.hpp"
#include "protoens/ops.hpp"
#include "test_util.hpp"

#include <gtest/gtest.h>

#include <cmath>

using namespace protoens;
using protoens::testing::max_abs_diff;
using protoens::testing::random_tensor;
using protoens::testing::to_vector;

namespace {

struct Sizes {
    std::size_t n, k, d, q;
};

Sizes random_sizes(Rng& rng) { return {1 + rng.below(5), 1 + rng.below(5), 1 + rng.below(8), 1 + rng.below(6)}; }

double get3(const Tensor& t, std::size_t a, std::size_t b, std::size_t c) { return t.at({a, b, c}); }

std::vector<double> brute_prototypes(const Tensor& s) {
    const std::size_t n = s.dim(0), k = s.dim(1), d = s.dim(2);
    std::vector<double> out;
    for (std::size_t c = 0; c < n; ++c)
        for (std::size_t j = 0; j < d; ++j) {
            double total = 0;
            for (std::size_t i = 0; i < k; ++i) total += get3(s, c, i, j);
            out.push_back(total / double(k));
        }
    return out;
}

std::vector<double> brute_dispersion(const Tensor& s) {
    const std::size_t n = s.dim(0), k = s.dim(1), d = s.dim(2);
    std::vector<double> out;
    for (std::size_t c = 0; c < n; ++c)
        for (std::size_t j = 0; j < d; ++j) {
            double total = 0;
            for (std::size_t i = 0; i < k; ++i)
                for (std::size_t l = 0; l < k; ++l)
                    if (l != i) total += std::abs(get3(s, c, i, j) - get3(s, c, l, j));
            out.push_back(total / double(k * k));
        }
    return out;
}

std::vector<double> brute_scores(const Tensor& q, const Tensor& c, const Tensor& w, bool cosine) {
    std::vector<double> out;
    const std::size_t d = q.dim(1);
    for (std::size_t i = 0; i < q.dim(0); ++i)
        for (std::size_t k = 0; k < c.dim(0); ++k) {
            double acc = 0, nq = 0, nc = 0;
            for (std::size_t j = 0; j < d; ++j) {
                const double qi = q.at({i, j}), ck = c.at({k, j}), wk = w.at({k, j});
                acc += cosine ? wk * qi * ck : wk * (qi - ck) * (qi - ck);
                nq += qi * qi;
                nc += ck * ck;
            }
            out.push_back(cosine ? acc / (std::sqrt(nq) * std::sqrt(nc)) : acc);
        }
    return out;
}

} // namespace

TEST(MetricNames, RoundTrip) {
    EXPECT_EQ(parse_metric_kind("euclidean"), MetricKind::Euclidean);
    EXPECT_EQ(parse_metric_kind("cosine"), MetricKind::Cosine);
    EXPECT_EQ(to_string(MetricKind::Cosine), "cosine");
    EXPECT_THROW(parse_metric_kind("manhattan"), ValidationError);
}

TEST(Prototypes, Examples) {
    const Tensor s(Shape{1, 2, 2}, {1, 1, 3, 3});
    EXPECT_EQ(to_vector(compute_prototypes(s)), (std::vector<double>{2, 2}));
    const Tensor one(Shape{2, 1, 3}, {1, 2, 3, -4, 5, 6});
    EXPECT_EQ(to_vector(compute_prototypes(one)), to_vector(one));
    const Tensor same(Shape{3, 2, 2}, {1, 2, 1, 2, 1, 2, 1, 2, 1, 2, 1, 2});
    const Tensor p = compute_prototypes(same);
    EXPECT_EQ(to_vector(p), (std::vector<double>{1, 2, 1, 2, 1, 2}));
    EXPECT_THROW(compute_prototypes(Tensor::zeros(Shape{2, 0, 3})), ContractError);
}

TEST(Prototypes, MatchBruteForce) {
    Rng rng(100);
    double worst = 0;
    for (int trial = 0; trial < 100; ++trial) {
        const Sizes z = random_sizes(rng);
        const Tensor s = random_tensor(Shape{z.n, z.k, z.d}, rng, -3, 3);
        worst = std::max(worst, max_abs_diff(compute_prototypes(s).values(), brute_prototypes(s)));
    }
    EXPECT_LE(worst, 1e-10);
}

TEST(FeatureWeights, SingleShotGivesMinusLogXi) {
    Rng rng(1);
    const FeatureWeights fw = compute_feature_weights(random_tensor(Shape{3, 1, 4}, rng), 0.1);
    for (double a : fw.a.values()) EXPECT_EQ(a, 0.0);
    for (double w : fw.w.values()) EXPECT_NEAR(w, 2.302585, 1e-6);
    for (double w : fw.w.values()) EXPECT_DOUBLE_EQ(w, -std::log(0.1));
}

TEST(FeatureWeights, TwoShotExample) {
    const FeatureWeights fw = compute_feature_weights(Tensor(Shape{1, 2, 2}, {0, 7, 1, 7}), 0.1);
    EXPECT_DOUBLE_EQ(fw.a.at({0, 0}), 0.5);
    EXPECT_NEAR(fw.w.at({0, 0}), 0.5108, 1e-4);
    EXPECT_DOUBLE_EQ(fw.w.at({0, 0}), -std::log(0.6));
    EXPECT_EQ(fw.a.at({0, 1}), 0.0);
}

TEST(FeatureWeights, MatchBruteForce) {
    Rng rng(101);
    double worst_a = 0, worst_w = 0;
    for (int trial = 0; trial < 100; ++trial) {
        const Sizes z = random_sizes(rng);
        const double xi = rng.uniform(0.05, 1.0);
        const Tensor s = random_tensor(Shape{z.n, z.k, z.d}, rng, -3, 3);
        const FeatureWeights fw = compute_feature_weights(s, xi);
        const auto a = brute_dispersion(s);
        std::vector<double> w;
        for (double v : a) w.push_back(-std::log(v + xi));
        worst_a = std::max(worst_a, max_abs_diff(fw.a.values(), a));
        worst_w = std::max(worst_w, max_abs_diff(fw.w.values(), w));
        EXPECT_EQ(fw.xi, xi);
    }
    EXPECT_LE(worst_a, 1e-10);
    EXPECT_LE(worst_w, 1e-10);
}

TEST(FeatureWeights, PermutationInvariantAndDetached) {
    Rng rng(5);
    const Tensor s = random_tensor(Shape{2, 4, 3}, rng, -1, 1, true);
    const Tensor perm = gather_rows(reshape(s, Shape{8, 3}), std::vector<std::size_t>{3, 1, 0, 2, 6, 7, 5, 4});
    const FeatureWeights a = compute_feature_weights(s);
    const FeatureWeights b = compute_feature_weights(reshape(perm, Shape{2, 4, 3}));
    EXPECT_LE(max_abs_diff(a.w.values(), b.w.values()), 1e-12);
    EXPECT_FALSE(a.w.requires_grad());
    EXPECT_TRUE(a.w.is_leaf());
}

TEST(FeatureWeights, RejectsNonPositiveXi) {
    EXPECT_THROW(compute_feature_weights(Tensor::zeros(Shape{1, 2, 2}), 0.0), ValidationError);
}

TEST(WeightedEuclidean, Examples) {
    const std::vector<double> q{1, 0}, c{0, 0}, w{2, 5};
    EXPECT_EQ(weighted_euclidean(q, c, w), 2.0);
    EXPECT_EQ(weighted_euclidean(q, q, w), 0.0);
    const std::vector<double> ones{1, 1}, x{3, -1}, y{0, 1};
    EXPECT_EQ(weighted_euclidean(x, y, ones), 13.0);
    EXPECT_EQ(to_vector(weighted_euclidean(Tensor::from_rows({{1, 0}}), Tensor::from_rows({{0, 0}}),
                                           Tensor::from_rows({{2, 5}}))),
              (std::vector<double>{2}));
}

TEST(WeightedCosine, Examples) {
    const std::vector<double> q{1, 0}, c{1, 1}, w{2, 2}, ones{1, 1}, orth{0, 3};
    EXPECT_DOUBLE_EQ(weighted_cosine(q, c, w), std::sqrt(2.0));
    EXPECT_DOUBLE_EQ(weighted_cosine(c, c, ones), 1.0);
    EXPECT_EQ(weighted_cosine(q, orth, ones), 0.0);
    const std::vector<double> zero{0, 0};
    EXPECT_THROW(weighted_cosine(zero, c, ones), DomainError);
    EXPECT_THROW(weighted_cosine(Tensor::from_rows({{0, 0}}), Tensor::from_rows({{1, 1}}), Tensor::from_rows({{1, 1}})),
                 DomainError);
}

TEST(WeightedCosine, NormFloorKeepsZeroVectorsFinite) {
    const Tensor s = weighted_cosine(Tensor::from_rows({{0, 0}}), Tensor::from_rows({{1, 1}}),
                                     Tensor::from_rows({{1, 1}}), kCosineNormEps);
    EXPECT_EQ(s.item(), 0.0);
    const Tensor t = weighted_cosine(Tensor::from_rows({{3, 4}}), Tensor::from_rows({{3, 4}}),
                                     Tensor::from_rows({{1, 1}}), kCosineNormEps);
    EXPECT_NEAR(t.item(), 1.0, 1e-12);
}

TEST(WeightedScores, MatchBruteForce) {
    Rng rng(102);
    double worst_e = 0, worst_c = 0;
    for (int trial = 0; trial < 100; ++trial) {
        const Sizes z = random_sizes(rng);
        const Tensor q = random_tensor(Shape{z.q, z.d}, rng, -2, 2);
        const Tensor c = random_tensor(Shape{z.n, z.d}, rng, -2, 2);
        const Tensor w = random_tensor(Shape{z.n, z.d}, rng, -1, 3);
        worst_e = std::max(worst_e, max_abs_diff(weighted_euclidean(q, c, w).values(), brute_scores(q, c, w, false)));
        worst_c = std::max(worst_c, max_abs_diff(weighted_cosine(q, c, w).values(), brute_scores(q, c, w, true)));
        const auto qv = q.values(), cv = c.values(), wv = w.values();
        const double single = weighted_euclidean(qv.subspan(0, z.d), cv.subspan(0, z.d), wv.subspan(0, z.d));
        worst_e = std::max(worst_e, std::abs(single - brute_scores(q, c, w, false)[0]));
    }
    EXPECT_LE(worst_e, 1e-10);
    EXPECT_LE(worst_c, 1e-10);
}

TEST(Posterior, Examples) {
    const Tensor p = class_posterior(Tensor::from_rows({{0, std::log(3.0)}}), MetricKind::Euclidean);
    EXPECT_NEAR(p.at({0, 0}), 0.75, 1e-15);
    EXPECT_NEAR(p.at({0, 1}), 0.25, 1e-15);
    const Tensor u = class_posterior(Tensor::from_rows({{2, 2, 2, 2}}), MetricKind::Euclidean);
    for (double v : u.values()) EXPECT_DOUBLE_EQ(v, 0.25);
    const Tensor far = class_posterior(Tensor::from_rows({{0, 1e3}}), MetricKind::Euclidean);
    EXPECT_NEAR(far.at({0, 0}), 1.0, 1e-15);
    const Tensor cos = class_posterior(Tensor::from_rows({{std::log(3.0), 0}}), MetricKind::Cosine);
    EXPECT_NEAR(cos.at({0, 0}), 0.75, 1e-15);
}

TEST(Posterior, RowsSumToOneAndArgmaxIsNearestPrototype) {
    Rng rng(103);
    for (int episode = 0; episode < 1000; ++episode) {
        const std::size_t n = 2 + rng.below(9), k = 1 + rng.below(5), d = 1 + rng.below(10), q = 1 + rng.below(8);
        const Tensor support = random_tensor(Shape{n, k, d}, rng, -2, 2);
        const Tensor queries = random_tensor(Shape{q, d}, rng, -2, 2);
        const Tensor protos = compute_prototypes(support);
        const FeatureWeights fw = compute_feature_weights(support);
        const Tensor dist = score_queries(queries, protos, fw, MetricKind::Euclidean);
        const Tensor post = class_posterior(dist, MetricKind::Euclidean);
        for (std::size_t i = 0; i < q; ++i) {
            double total = 0;
            std::size_t best_p = 0, best_d = 0;
            for (std::size_t c = 0; c < n; ++c) {
                const double p = post.at({i, c});
                EXPECT_GT(p, 0.0);
                total += p;
                if (p > post.at({i, best_p})) best_p = c;
                if (dist.at({i, c}) < dist.at({i, best_d})) best_d = c;
            }
            ASSERT_NEAR(total, 1.0, 1e-9);
            ASSERT_EQ(best_p, best_d) << "episode " << episode;
        }
    }
}

TEST(Posterior, ShiftInvariant) {
    Rng rng(104);
    for (int t = 0; t < 100; ++t) {
        const Tensor s = random_tensor(Shape{3, 5}, rng, -4, 4);
        const Tensor shifted = add_scalar(s, rng.uniform(-50, 50));
        EXPECT_LE(max_abs_diff(class_posterior(s, MetricKind::Euclidean).values(),
                               class_posterior(shifted, MetricKind::Euclidean).values()),
                  1e-9);
    }
}

TEST(Posterior, EqualSupportIsTemperatureScaledPlainPosterior) {
    Rng rng(105);
    const double xi = 0.1;
    for (int t = 0; t < 50; ++t) {
        const std::size_t n = 3, k = 4, d = 5;
        const Tensor base = random_tensor(Shape{n, 1, d}, rng, -1, 1);
        std::vector<double> rep;
        for (std::size_t c = 0; c < n; ++c)
            for (std::size_t i = 0; i < k; ++i)
                for (std::size_t j = 0; j < d; ++j) rep.push_back(base.at({c, 0, j}));
        const Tensor support(Shape{n, k, d}, rep);
        const Tensor queries = random_tensor(Shape{6, d}, rng, -1, 1);
        const FeatureWeights fw = compute_feature_weights(support, xi);
        for (double w : fw.w.values()) EXPECT_DOUBLE_EQ(w, -std::log(xi));
        const Tensor protos = compute_prototypes(support);
        const Tensor weighted = class_posterior(score_queries(queries, protos, fw, MetricKind::Euclidean),
                                                MetricKind::Euclidean);
        const Tensor plain = score_queries(queries, protos, uniform_feature_weights(n, d), MetricKind::Euclidean);
        const Tensor tempered = class_posterior(scale(plain, -std::log(xi)), MetricKind::Euclidean);
        EXPECT_LE(max_abs_diff(weighted.values(), tempered.values()), 1e-9);
    }
}

TEST(Scores, GradientFlowsToQueriesAndPrototypesOnly) {
    Rng rng(6);
    const Tensor support = random_tensor(Shape{2, 3, 4}, rng, -1, 1, true);
    const Tensor queries = random_tensor(Shape{2, 4}, rng, -1, 1, true);
    const FeatureWeights fw = compute_feature_weights(support);
    for (MetricKind kind : {MetricKind::Euclidean, MetricKind::Cosine}) {
        Tensor s = support;
        s.zero_grad();
        Tensor qq = queries;
        qq.zero_grad();
        sum_all(score_queries(queries, compute_prototypes(support), fw, kind)).backward();
        EXPECT_TRUE(support.has_grad());
        EXPECT_TRUE(queries.has_grad());
        double g = 0;
        for (double v : queries.grad()) g += std::abs(v);
        EXPECT_GT(g, 0.0);
    }
}
