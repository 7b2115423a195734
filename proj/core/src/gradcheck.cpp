#include "protoens/gradcheck.hpp"

#include "protoens/embeddings.hpp"
#include "protoens/encoders.hpp"
#include "protoens/ensemble.hpp"
#include "protoens/errors.hpp"
#include "protoens/metric.hpp"
#include "protoens/ops.hpp"
#include "protoens/rng.hpp"

#include <algorithm>
#include <cmath>

namespace protoens {

namespace {

double scalar_of(const Tensor& t) {
    if (t.numel() != 1) throw ContractError("gradcheck: function must return a scalar");
    return t.values()[0];
}

} // namespace

GradCheckResult check_gradients(const std::string& name, const std::function<Tensor()>& f,
                                const ParameterList& inputs, const GradCheckOptions& opts) {
    GradCheckResult result;
    result.name = name;
    for (const auto& in : inputs) {
        if (!in.tensor.is_leaf() || !in.tensor.requires_grad()) {
            throw ContractError("gradcheck: input '" + in.name + "' must be a leaf requiring grad");
        }
        Tensor t = in.tensor;
        t.clear_grad();
    }
    const Tensor out = f();
    scalar_of(out);
    out.backward();

    for (const auto& in : inputs) {
        Tensor t = in.tensor;
        const std::vector<double> analytic = t.has_grad() ? std::vector<double>(t.grad().begin(), t.grad().end())
                                                          : std::vector<double>(t.numel(), 0.0);
        auto values = t.mutable_values();
        for (std::size_t i = 0; i < values.size(); ++i) {
            const double saved = values[i];
            double plus = 0.0;
            double minus = 0.0;
            {
                NoGradGuard no_grad;
                values[i] = saved + opts.step;
                plus = scalar_of(f());
                values[i] = saved - opts.step;
                minus = scalar_of(f());
            }
            values[i] = saved;
            const double numeric = (plus - minus) / (2.0 * opts.step);
            const double abs_err = std::abs(numeric - analytic[i]);
            ++result.coordinates;
            result.max_abs_error = std::max(result.max_abs_error, abs_err);
            if (abs_err <= opts.abs_tolerance) continue;
            const double rel_err = abs_err / std::max(std::abs(numeric), std::abs(analytic[i]));
            result.max_rel_error = std::max(result.max_rel_error, rel_err);
            if (rel_err > opts.rel_tolerance) ++result.failures;
        }
        t.clear_grad();
    }
    return result;
}

namespace {

Tensor random_leaf(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
    std::vector<double> v(shape_numel(shape));
    for (double& x : v) x = rng.uniform(lo, hi);
    return Tensor(std::move(shape), std::move(v), true);
}

/// Values in +-[0.2, 1] so that |x| and relu are evaluated away from their kink.
Tensor away_from_zero(Shape shape, Rng& rng) {
    std::vector<double> v(shape_numel(shape));
    for (double& x : v) x = (rng.uniform() < 0.5 ? -1.0 : 1.0) * rng.uniform(0.2, 1.0);
    return Tensor(std::move(shape), std::move(v), true);
}

/// Distinct values spaced at least 0.05 apart, shuffled: max ties are impossible.
Tensor distinct_values(Shape shape, Rng& rng) {
    const std::size_t n = shape_numel(shape);
    std::vector<double> v(n);
    for (std::size_t i = 0; i < n; ++i) v[i] = -1.0 + 0.05 * double(i) + rng.uniform(0.0, 0.01);
    rng.shuffle(v);
    return Tensor(std::move(shape), std::move(v), true);
}

/// Fixed random projection turning any output into a scalar with a generic gradient.
struct Projector {
    Rng rng;
    std::vector<Tensor> cache;

    Tensor operator()(const Tensor& out, std::size_t slot) {
        while (cache.size() <= slot) cache.emplace_back();
        if (!cache[slot].defined() || cache[slot].shape() != out.shape()) {
            std::vector<double> v(out.numel());
            for (double& x : v) x = rng.uniform(-1.0, 1.0);
            cache[slot] = Tensor(out.shape(), std::move(v));
        }
        return sum_all(mul(out, cache[slot]));
    }
};

ParameterList named(std::initializer_list<Tensor> tensors) {
    ParameterList out;
    std::size_t i = 0;
    for (const Tensor& t : tensors) out.push_back({"x" + std::to_string(i++), t});
    return out;
}

std::vector<Instance> tiny_instances(std::size_t count, std::size_t vocab_words, Rng& rng) {
    std::vector<Instance> out;
    for (std::size_t s = 0; s < count; ++s) {
        Instance inst;
        const std::size_t len = 4 + rng.below(4);
        for (std::size_t i = 0; i < len; ++i) inst.tokens.push_back(synthetic_word(rng.below(vocab_words)));
        inst.head = {0, 1};
        inst.tail = {len - 2, len};
        inst.relation = "R" + std::to_string(s % 2);
        out.push_back(std::move(inst));
    }
    return out;
}

} // namespace

std::vector<GradCheckResult> run_gradcheck_suite(const GradCheckOptions& opts) {
    Rng rng(opts.seed);
    auto proj = std::make_shared<Projector>(Projector{Rng(opts.seed + 1), {}});
    std::vector<GradCheckResult> results;
    auto check = [&](const std::string& name, std::function<Tensor()> f, const ParameterList& inputs) {
        results.push_back(check_gradients(name, f, inputs, opts));
    };
    const std::size_t slot_base = 0;
    std::size_t slot = slot_base;
    auto unary = [&](const std::string& name, Tensor x, Tensor (*op)(const Tensor&)) {
        const std::size_t s = slot++;
        check(name, [=] { return (*proj)(op(x), s); }, named({x}));
    };

    // Matrix and elementwise ops.
    {
        Tensor a = random_leaf({3, 4}, rng);
        Tensor b = random_leaf({4, 2}, rng);
        const std::size_t s = slot++;
        check("matmul", [=] { return (*proj)(matmul(a, b), s); }, named({a, b}));
    }
    unary("transpose", random_leaf({3, 4}, rng), [](const Tensor& x) { return transpose(x); });
    {
        Tensor a = random_leaf({2, 3, 4}, rng);
        Tensor b = random_leaf({3, 4}, rng);
        Tensor c = random_leaf({1, 4}, rng);
        const std::size_t s1 = slot++, s2 = slot++, s3 = slot++;
        check("add_broadcast", [=] { return (*proj)(add(add(a, b), c), s1); }, named({a, b, c}));
        check("sub_broadcast", [=] { return (*proj)(sub(c, a), s2); }, named({a, c}));
        check("mul_broadcast", [=] { return (*proj)(mul(a, b), s3); }, named({a, b}));
    }
    {
        Tensor a = random_leaf({3, 4}, rng);
        Tensor b = random_leaf({3, 1}, rng, 0.5, 2.0);
        const std::size_t s = slot++;
        check("div_broadcast", [=] { return (*proj)(div(a, b), s); }, named({a, b}));
    }
    unary("neg", random_leaf({3, 4}, rng), [](const Tensor& x) { return neg(x); });
    unary("abs", away_from_zero({3, 4}, rng), [](const Tensor& x) { return abs(x); });
    unary("log", random_leaf({3, 4}, rng, 0.3, 2.0), [](const Tensor& x) { return log(x); });
    unary("exp", random_leaf({3, 4}, rng), [](const Tensor& x) { return exp(x); });
    unary("square", random_leaf({3, 4}, rng), [](const Tensor& x) { return square(x); });
    unary("sqrt", random_leaf({3, 4}, rng, 0.3, 2.0), [](const Tensor& x) { return sqrt(x); });
    unary("tanh", random_leaf({3, 4}, rng), [](const Tensor& x) { return tanh(x); });
    unary("sigmoid", random_leaf({3, 4}, rng), [](const Tensor& x) { return sigmoid(x); });
    unary("relu", away_from_zero({3, 4}, rng), [](const Tensor& x) { return relu(x); });
    unary("scale", random_leaf({3, 4}, rng), [](const Tensor& x) { return scale(x, -2.5); });
    unary("add_scalar", random_leaf({3, 4}, rng), [](const Tensor& x) { return add_scalar(x, 0.75); });

    // Reductions and normalisers.
    for (std::size_t axis = 0; axis < 3; ++axis) {
        const std::string suffix = "_axis" + std::to_string(axis);
        Tensor x = random_leaf({2, 3, 4}, rng);
        Tensor y = distinct_values({2, 3, 4}, rng);
        const std::size_t s1 = slot++, s2 = slot++, s3 = slot++, s4 = slot++, s5 = slot++;
        check("sum" + suffix, [=] { return (*proj)(sum(x, axis), s1); }, named({x}));
        check("mean" + suffix, [=] { return (*proj)(mean(x, axis), s2); }, named({x}));
        check("max" + suffix, [=] { return (*proj)(max(y, axis), s3); }, named({y}));
        check("softmax" + suffix, [=] { return (*proj)(softmax(x, axis), s4); }, named({x}));
        check("log_softmax" + suffix, [=] { return (*proj)(log_softmax(x, axis), s5); }, named({x}));
    }
    unary("sum_all", random_leaf({3, 4}, rng), [](const Tensor& x) { return scale(sum_all(x), 1.5); });
    {
        Tensor x = random_leaf({3, 5}, rng);
        const std::vector<bool> mask{true, false, true, true, false};
        const std::size_t s = slot++;
        check("masked_softmax", [=] { return (*proj)(masked_softmax(x, mask), s); }, named({x}));
    }
    {
        Tensor x = random_leaf({4, 6}, rng);
        Tensor g = random_leaf({1, 6}, rng, 0.5, 1.5);
        Tensor b = random_leaf({1, 6}, rng);
        const std::size_t s = slot++;
        check("layer_norm", [=] { return (*proj)(layer_norm(x, g, b, 1e-10), s); }, named({x, g, b}));
    }

    // Shape and indexing ops.
    unary("reshape", random_leaf({3, 4}, rng), [](const Tensor& x) { return reshape(x, Shape{2, 6}); });
    {
        Tensor a = random_leaf({2, 3}, rng);
        Tensor b = random_leaf({2, 2}, rng);
        Tensor c = random_leaf({1, 3}, rng);
        const std::size_t s1 = slot++, s2 = slot++;
        check("concat_axis1", [=] {
            const std::vector<Tensor> parts{a, b};
            return (*proj)(concat(parts, 1), s1);
        }, named({a, b}));
        check("concat_axis0", [=] {
            const std::vector<Tensor> parts{a, c, a};
            return (*proj)(concat(parts, 0), s2);
        }, named({a, c}));
    }
    {
        Tensor x = random_leaf({4, 5}, rng);
        const std::size_t s1 = slot++, s2 = slot++, s3 = slot++, s4 = slot++;
        check("slice_axis0", [=] { return (*proj)(slice(x, 0, 1, 3), s1); }, named({x}));
        check("slice_axis1", [=] { return (*proj)(slice(x, 1, 2, 5), s2); }, named({x}));
        const std::vector<std::size_t> rows{3, 0, 3, 1};
        check("gather_rows", [=] { return (*proj)(gather_rows(x, rows), s3); }, named({x}));
        const std::vector<std::size_t> cols{4, 0, 2, 2};
        check("pick", [=] { return (*proj)(pick(x, cols), s4); }, named({x}));
    }
    {
        Tensor x = random_leaf({9, 3}, rng);
        Tensor y = distinct_values({9, 3}, rng);
        const std::vector<std::size_t> offsets{0, 4, 5, 9};
        const std::size_t s1 = slot++, s2 = slot++, s3 = slot++;
        check("unfold_sequences_w3", [=] { return (*proj)(unfold_sequences(x, offsets, 3), s1); }, named({x}));
        check("unfold_sequences_w5", [=] { return (*proj)(unfold_sequences(x, offsets, 5), s2); }, named({x}));
        check("segment_max", [=] { return (*proj)(segment_max(y, offsets), s3); }, named({y}));
    }

    // Metric layer and losses.
    {
        Tensor support = random_leaf({3, 2, 5}, rng);
        Tensor queries = random_leaf({4, 5}, rng);
        const FeatureWeights fw = compute_feature_weights(support.detach());
        const std::size_t s1 = slot++, s2 = slot++, s3 = slot++, s4 = slot++;
        check("compute_prototypes", [=] { return (*proj)(compute_prototypes(support), s1); }, named({support}));
        check("weighted_euclidean", [=] {
            return (*proj)(weighted_euclidean(queries, compute_prototypes(support), fw.w), s2);
        }, named({queries, support}));
        check("weighted_cosine", [=] {
            return (*proj)(weighted_cosine(queries, compute_prototypes(support), fw.w), s3);
        }, named({queries, support}));
        // The analytic pass derives the weights from the live support tensor;
        // the perturbed passes hold them at their unperturbed value.
        check("score_queries_attention", [=] {
            const FeatureWeights live = grad_enabled() ? compute_feature_weights(support) : fw;
            return (*proj)(score_queries(queries, compute_prototypes(support), live, MetricKind::Euclidean), s4);
        }, named({queries, support}));
    }
    {
        Tensor logits = random_leaf({4, 3}, rng, -2.0, 2.0);
        const std::vector<std::size_t> labels{0, 2, 1, 2};
        check("member_loss", [=] { return member_loss(log_softmax(logits, 1), labels); }, named({logits}));
        check("entropy", [=] { return entropy_from_log_probs(log_softmax(logits, 1)); }, named({logits}));
    }

    // Embeddings and encoders at reduced sizes.
    Vocabulary vocab;
    for (std::size_t i = 0; i < 6; ++i) vocab.add(synthetic_word(i));
    EmbeddingConfig ecfg;
    ecfg.word_dim = 4;
    ecfg.pos_dim = 1;
    ecfg.max_len = 8;
    const std::vector<Instance> sentences = tiny_instances(3, 7, rng); // word 6 maps to UNK
    const EmbeddingTable table = init_embeddings(vocab, ecfg, rng);
    {
        const std::size_t s = slot++;
        check("embed_batch", [=] { return (*proj)(embed_batch(sentences, table).rows, s); }, table.parameters());
    }
    const PackedBatch batch = [&] {
        NoGradGuard no_grad;
        PackedBatch b = embed_batch(sentences, table);
        b.rows = b.rows.detach();
        return b;
    }();
    Tensor inputs = batch.rows.detach();
    inputs.set_requires_grad(true);
    {
        Tensor a = random_leaf({5, 6}, rng);
        const SelfAttentionPool pool = SelfAttentionPool::create(6, rng);
        const std::vector<std::size_t> offsets{0, 2, 5};
        const std::size_t s = slot++;
        check("self_attention_pool", [=] { return (*proj)(pool.pool_packed(a, offsets), s); },
              named({a, pool.weight, pool.bias}));
    }
    for (EncoderKind kind : {EncoderKind::Cnn, EncoderKind::Inception, EncoderKind::Gru, EncoderKind::Transformer}) {
        EncoderConfig cfg;
        cfg.kind = kind;
        cfg.input_dim = ecfg.width();
        cfg.out_dim = 8;
        cfg.heads = 2;
        cfg.ff_dim = 8;
        const std::shared_ptr<const Encoder> enc = make_encoder(cfg, rng);
        ParameterList params = enc->parameters(to_string(kind));
        params.push_back({"input", inputs});
        const std::size_t s = slot++;
        check("encoder_" + to_string(kind), [=] {
            PackedBatch b{inputs, batch.offsets};
            return (*proj)(enc->encode(b), s);
        }, params);
    }
    return results;
}

} // namespace protoens
