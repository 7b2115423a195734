#include "protoens/ensemble.hpp"
#include "protoens/metric.hpp"
#include "protoens/ops.hpp"
#include "protoens/trainer.hpp"

#include <benchmark/benchmark.h>

using namespace protoens;

namespace {

Tensor random_matrix(std::size_t r, std::size_t c, Rng& rng) {
    std::vector<double> v(r * c);
    for (double& x : v) x = rng.uniform(-1, 1);
    return Tensor(Shape{r, c}, std::move(v));
}

const Corpus& corpus() {
    static const Corpus c = make_synthetic_corpus(5, 50, 200, 3, 0);
    return c;
}

Episode episode() {
    Rng rng(1);
    return sample_episode(corpus(), SamplerConfig{}, rng);
}

EncoderKind kind_of(std::int64_t i) { return static_cast<EncoderKind>(i); }

} // namespace

static void BM_Matmul(benchmark::State& state) {
    const auto n = std::size_t(state.range(0));
    Rng rng(0);
    const Tensor a = random_matrix(n, n, rng), b = random_matrix(n, n, rng);
    NoGradGuard guard;
    for (auto _ : state) benchmark::DoNotOptimize(matmul(a, b));
    state.SetItemsProcessed(state.iterations() * std::int64_t(2 * n * n * n));
}
BENCHMARK(BM_Matmul)->Arg(64)->Arg(230);

static void BM_MetricScoring(benchmark::State& state) {
    Rng rng(0);
    std::vector<double> s(5 * 5 * 230);
    for (double& x : s) x = rng.uniform(-1, 1);
    const Tensor support(Shape{5, 5, 230}, s);
    const Tensor queries = random_matrix(20, 230, rng);
    const auto kind = state.range(0) == 0 ? MetricKind::Euclidean : MetricKind::Cosine;
    NoGradGuard guard;
    for (auto _ : state) {
        const Tensor protos = compute_prototypes(support);
        benchmark::DoNotOptimize(class_posterior(score_queries(queries, protos, compute_feature_weights(support), kind), kind));
    }
}
BENCHMARK(BM_MetricScoring)->Arg(0)->Arg(1);

/// Encoding all 45 sentences of a 5-way 5-shot episode with full-size dims.
static void BM_EncodeEpisode(benchmark::State& state) {
    ModelConfig cfg;
    cfg.members = {MemberSpec{kind_of(state.range(0)), MetricKind::Euclidean, true}};
    const EnsembleModel model(cfg, corpus().vocab, 0);
    const Episode e = episode();
    const PackedBatch batch = embed_episode(e, model.table(0));
    NoGradGuard guard;
    for (auto _ : state) benchmark::DoNotOptimize(model.encoder(0).encode(batch));
    state.SetLabel(to_string(kind_of(state.range(0))));
}
BENCHMARK(BM_EncodeEpisode)->DenseRange(0, 3)->Unit(benchmark::kMillisecond);

/// Forward plus backward of the joint loss for the default 8-member ensemble.
static void BM_JointLossStep(benchmark::State& state) {
    EnsembleModel model(ModelConfig{}, corpus().vocab, 0);
    const Episode e = episode();
    for (auto _ : state) {
        Tensor loss = joint_loss(model, e);
        loss.backward();
        for (auto& p : model.parameters()) p.tensor.clear_grad();
    }
}
BENCHMARK(BM_JointLossStep)->Unit(benchmark::kMillisecond);

static void BM_EvaluateUniform(benchmark::State& state) {
    EvalConfig cfg;
    cfg.episodes = 200;
    cfg.threads = 1;
    for (auto _ : state) benchmark::DoNotOptimize(evaluate(UniformRandomClassifier{}, corpus(), cfg));
}
BENCHMARK(BM_EvaluateUniform)->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
