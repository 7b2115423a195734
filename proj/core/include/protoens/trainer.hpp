#pragma once

#include "protoens/data.hpp"
#include "protoens/ensemble.hpp"
#include "protoens/finetune.hpp"

#include <array>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace protoens {

struct TrainConfig {
    std::size_t n_way = 5;
    std::size_t k_shot = 5;
    std::size_t query_size = 20;
    std::size_t batch_size = 4;
    std::size_t train_iterations = 30000;
    std::size_t val_step = 2000;
    std::size_t val_episodes = 1000;
    double learning_rate = 0.1;
    double weight_decay = 1e-5;
    /// Global gradient-norm clip per step; 0 disables.
    double max_grad_norm = 5.0;
    std::uint64_t seed = 0;

    void validate() const;
};

struct TrainLogRow {
    std::size_t iteration = 0; // 1-based
    double loss = 0.0;         // joint loss averaged over the batch
    double train_accuracy = 0.0;
    std::optional<double> val_accuracy;
};

struct TrainResult {
    std::vector<TrainLogRow> log;
    std::optional<double> best_val_accuracy;
    std::size_t best_iteration = 0;
};

/// Episodic training: each iteration averages the joint loss over
/// batch_size sampled episodes and takes one SGD step. With a validation
/// corpus, accuracy is measured every val_step iterations and the model
/// ends holding the best-scoring parameters.
TrainResult train(EnsembleModel& model, const Corpus& train_corpus, const Corpus* val_corpus,
                  const TrainConfig& cfg);

std::string training_log_csv(const TrainResult& result);

/// A model scored by evaluate(). predict() must be safe to call
/// concurrently from several threads.
class EpisodeClassifier {
public:
    virtual ~EpisodeClassifier() = default;
    /// Q x N posterior for the episode's queries. `episode_seed` is unique per
    /// evaluated episode, for classifiers that need randomness.
    virtual Tensor predict(const Episode& episode, std::uint64_t episode_seed) const = 0;
};

/// Whole ensemble, one member of it, optionally with per-episode fine-tuning.
class EnsembleClassifier final : public EpisodeClassifier {
public:
    explicit EnsembleClassifier(const EnsembleModel& model, std::optional<FineTuneConfig> finetune = std::nullopt,
                                std::optional<std::size_t> member = std::nullopt);
    Tensor predict(const Episode& episode, std::uint64_t episode_seed) const override;

private:
    const EnsembleModel& model_;
    std::optional<FineTuneConfig> finetune_;
    std::optional<std::size_t> member_;
};

/// Rows drawn as normalised U(0,1) draws.
class UniformRandomClassifier final : public EpisodeClassifier {
public:
    Tensor predict(const Episode& episode, std::uint64_t episode_seed) const override;
};

/// One-hot on the true labels.
class OracleClassifier final : public EpisodeClassifier {
public:
    Tensor predict(const Episode& episode, std::uint64_t episode_seed) const override;
};

struct EvalConfig {
    std::size_t n_way = 5;
    std::size_t k_shot = 5;
    std::size_t query_size = 20;
    std::size_t episodes = 2000;
    std::uint64_t seed = 0;
    /// 0: PROTOENS_THREADS if set, else hardware concurrency.
    std::size_t threads = 0;

    void validate() const;
    std::string fingerprint() const;
};

struct EvalReport {
    double overall_accuracy = 0.0;
    std::map<std::string, double> per_relation_accuracy;
    std::map<std::string, std::size_t> per_relation_queries;
    std::map<std::string, std::size_t> per_relation_correct;
    std::size_t episodes_evaluated = 0;
    std::size_t queries_evaluated = 0;
    std::string config_fingerprint;
    std::uint64_t seed = 0;
    std::map<std::string, std::string> metadata;

    std::string to_json() const;
    /// metric,value rows.
    std::string to_csv() const;
    /// relation,queries,correct,accuracy rows.
    std::string per_relation_csv() const;
};

/// Episode i is sampled with Rng(seed + i); predictions are argmax rows
/// with ties to the lowest class index.
EvalReport evaluate(const EpisodeClassifier& model, const Corpus& corpus, const EvalConfig& cfg);

std::size_t resolve_threads(std::size_t requested);

struct VarianceReport {
    std::vector<double> accuracies;
    std::vector<std::uint64_t> split_seeds;
    double mean = 0.0;
    double std_dev = 0.0; // population
    double fluctuation_ratio = 0.0;

    std::string to_json() const;
    std::string to_csv() const;
};

/// Mean, population standard deviation and (max - min) / mean.
VarianceReport summarize_splits(std::span<const double> accuracies);

/// Trains on split[0] (validating on split[1]) and returns accuracy on split[2].
using SplitRunner = std::function<double(const std::array<Corpus, 3>& split, std::uint64_t split_seed)>;

/// One relation-level resplit per seed, each scored by `runner`.
VarianceReport variance_study(const Corpus& corpus, const std::array<std::size_t, 3>& counts,
                              std::span<const std::uint64_t> split_seeds, const SplitRunner& runner);
/// Seeds base_seed, base_seed + 1, ..., base_seed + repeats - 1. Needs repeats >= 2.
VarianceReport variance_study(const Corpus& corpus, const std::array<std::size_t, 3>& counts, std::size_t repeats,
                              std::uint64_t base_seed, const SplitRunner& runner);

/// Runner that builds a fresh model per split and trains it with `train_cfg`.
SplitRunner make_training_runner(const ModelConfig& model_cfg, const TrainConfig& train_cfg,
                                 const EvalConfig& eval_cfg, std::optional<FineTuneConfig> finetune = std::nullopt,
                                 const GloveVectors* glove = nullptr);

} // namespace protoens
