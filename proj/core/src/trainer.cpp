#include "protoens/trainer.hpp"

#include "protoens/checkpoint.hpp"
#include "protoens/errors.hpp"
#include "protoens/ops.hpp"
#include "protoens/optim.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdlib>
#include <exception>
#include <mutex>
#include <sstream>
#include <thread>

namespace protoens {

namespace {

std::string format_double(double v) {
    // Shortest round-trip form, matching the JSON writer.
    nlohmann::json j = v;
    return j.dump();
}

std::size_t correct_count(const Tensor& posterior, std::span<const std::size_t> labels) {
    const auto pred = argmax_rows(posterior);
    std::size_t c = 0;
    for (std::size_t i = 0; i < labels.size(); ++i) c += pred[i] == labels[i] ? 1 : 0;
    return c;
}

} // namespace

void TrainConfig::validate() const {
    if (n_way < 1 || k_shot < 1 || query_size < 1 || batch_size < 1) {
        throw ValidationError("n_way, k_shot, query_size and batch_size must be positive");
    }
    if (train_iterations < 1) throw ValidationError("train_iterations must be positive");
    if (val_step < 1 || val_step > train_iterations) {
        throw ValidationError("val_step must be in [1, train_iterations]");
    }
    if (val_episodes < 1) throw ValidationError("val_episodes must be positive");
    SgdConfig{learning_rate, weight_decay, max_grad_norm}.validate();
}

TrainResult train(EnsembleModel& model, const Corpus& train_corpus, const Corpus* val_corpus,
                  const TrainConfig& cfg) {
    cfg.validate();
    const SgdConfig sgd{cfg.learning_rate, cfg.weight_decay, cfg.max_grad_norm};
    const SamplerConfig sampler{cfg.n_way, cfg.k_shot, cfg.query_size, cfg.batch_size, cfg.seed};
    Rng rng(cfg.seed);
    ParameterList params = model.parameters();

    EvalConfig val_cfg;
    val_cfg.n_way = cfg.n_way;
    val_cfg.k_shot = cfg.k_shot;
    val_cfg.query_size = cfg.query_size;
    val_cfg.episodes = cfg.val_episodes;
    val_cfg.seed = cfg.seed + 0x9e3779b97f4a7c15ULL;

    TrainResult result;
    ParameterList best;
    for (std::size_t it = 1; it <= cfg.train_iterations; ++it) {
        Tensor total;
        std::size_t correct = 0;
        std::size_t queries = 0;
        for (std::size_t b = 0; b < cfg.batch_size; ++b) {
            const Episode episode = sample_episode(train_corpus, sampler, rng);
            const auto outputs = model.forward(episode);
            const Tensor loss = joint_loss(outputs, episode.query_labels, model.config().entropy_coeff);
            total = total.defined() ? add(total, loss) : loss;

            std::vector<Tensor> posteriors;
            for (const auto& o : outputs) posteriors.push_back(exp(o.log_probs.detach()));
            correct += correct_count(combine_posteriors(posteriors, model.config().combine), episode.query_labels);
            queries += episode.query_labels.size();
        }
        total = scale(total, 1.0 / double(cfg.batch_size));
        total.backward();
        sgd_step(params, sgd);

        TrainLogRow row;
        row.iteration = it;
        row.loss = total.item();
        row.train_accuracy = double(correct) / double(queries);
        if (val_corpus != nullptr && it % cfg.val_step == 0) {
            const double acc = evaluate(EnsembleClassifier(model), *val_corpus, val_cfg).overall_accuracy;
            row.val_accuracy = acc;
            if (!result.best_val_accuracy || acc > *result.best_val_accuracy) {
                result.best_val_accuracy = acc;
                result.best_iteration = it;
                best = snapshot(params);
            }
        }
        result.log.push_back(row);
    }
    if (!best.empty()) assign_parameters(best, params);
    return result;
}

std::string training_log_csv(const TrainResult& result) {
    std::ostringstream out;
    out << "iteration,loss,train_accuracy,val_accuracy\n";
    for (const auto& r : result.log) {
        out << r.iteration << ',' << format_double(r.loss) << ',' << format_double(r.train_accuracy) << ',';
        if (r.val_accuracy) out << format_double(*r.val_accuracy);
        out << '\n';
    }
    return out.str();
}

EnsembleClassifier::EnsembleClassifier(const EnsembleModel& model, std::optional<FineTuneConfig> finetune,
                                       std::optional<std::size_t> member)
    : model_(model), finetune_(std::move(finetune)), member_(member) {
    if (member_ && *member_ >= model_.size()) throw ValidationError("member index out of range");
    if (finetune_) finetune_->validate();
}

Tensor EnsembleClassifier::predict(const Episode& episode, std::uint64_t) const {
    if (finetune_) {
        if (member_) return predict_finetuned(finetune_member(model_, *member_, episode, *finetune_), episode.query);
        return predict_finetuned(finetune_episode(model_, episode, *finetune_), episode.query);
    }
    NoGradGuard no_grad;
    if (member_) return exp(model_.forward_member(*member_, episode).log_probs);
    return model_.predict(episode);
}

Tensor UniformRandomClassifier::predict(const Episode& episode, std::uint64_t episode_seed) const {
    Rng rng(episode_seed ^ 0x5851f42d4c957f2dULL);
    const std::size_t rows = episode.query.size();
    const std::size_t cols = episode.n_way;
    std::vector<double> v(rows * cols);
    for (std::size_t r = 0; r < rows; ++r) {
        double z = 0.0;
        for (std::size_t c = 0; c < cols; ++c) z += (v[r * cols + c] = rng.uniform());
        for (std::size_t c = 0; c < cols; ++c) v[r * cols + c] /= z;
    }
    return Tensor(Shape{rows, cols}, std::move(v));
}

Tensor OracleClassifier::predict(const Episode& episode, std::uint64_t) const {
    const std::size_t rows = episode.query.size();
    const std::size_t cols = episode.n_way;
    std::vector<double> v(rows * cols, 0.0);
    for (std::size_t r = 0; r < rows; ++r) v[r * cols + episode.query_labels[r]] = 1.0;
    return Tensor(Shape{rows, cols}, std::move(v));
}

void EvalConfig::validate() const {
    if (n_way < 1 || k_shot < 1 || query_size < 1) throw ValidationError("n_way, k_shot and query_size must be positive");
    if (episodes < 1) throw ValidationError("episodes must be positive");
}

std::string EvalConfig::fingerprint() const {
    std::ostringstream out;
    out << "n_way=" << n_way << ";k_shot=" << k_shot << ";query_size=" << query_size << ";episodes=" << episodes
        << ";seed=" << seed;
    return out.str();
}

std::size_t resolve_threads(std::size_t requested) {
    std::size_t n = requested;
    if (n == 0) n = std::max<std::size_t>(1, std::thread::hardware_concurrency());
    if (const char* env = std::getenv("PROTOENS_THREADS")) {
        char* end = nullptr;
        const long cap = std::strtol(env, &end, 10);
        if (end != env && cap > 0) n = std::min<std::size_t>(n, std::size_t(cap));
    }
    return n;
}

EvalReport evaluate(const EpisodeClassifier& model, const Corpus& corpus, const EvalConfig& cfg) {
    cfg.validate();
    if (corpus.relations.size() < cfg.n_way) {
        throw ValidationError("corpus has " + std::to_string(corpus.relations.size()) + " relations; " +
                              std::to_string(cfg.n_way) + "-way evaluation needs at least that many");
    }
    struct EpisodeResult {
        std::vector<std::string> relations; // true relation of each query
        std::vector<bool> correct;
    };
    std::vector<EpisodeResult> results(cfg.episodes);
    const SamplerConfig sampler{cfg.n_way, cfg.k_shot, cfg.query_size, 1, cfg.seed};

    auto run_one = [&](std::size_t i) {
        Rng rng(cfg.seed + i);
        const Episode episode = sample_episode(corpus, sampler, rng);
        const Tensor posterior = model.predict(episode, cfg.seed + i);
        if (posterior.rank() != 2 || posterior.dim(0) != episode.query.size() || posterior.dim(1) != cfg.n_way) {
            throw ContractError("classifier returned a posterior of shape " + shape_string(posterior.shape()));
        }
        const auto pred = argmax_rows(posterior);
        EpisodeResult& r = results[i];
        for (std::size_t q = 0; q < pred.size(); ++q) {
            r.relations.push_back(episode.class_ids[episode.query_labels[q]]);
            r.correct.push_back(pred[q] == episode.query_labels[q]);
        }
    };

    const std::size_t threads = std::min(resolve_threads(cfg.threads), cfg.episodes);
    if (threads <= 1) {
        for (std::size_t i = 0; i < cfg.episodes; ++i) run_one(i);
    } else {
        std::atomic<std::size_t> next{0};
        std::exception_ptr failure;
        std::mutex failure_mutex;
        std::vector<std::thread> pool;
        for (std::size_t t = 0; t < threads; ++t) {
            pool.emplace_back([&] {
                for (;;) {
                    const std::size_t i = next.fetch_add(1);
                    if (i >= cfg.episodes) return;
                    try {
                        run_one(i);
                    } catch (...) {
                        std::lock_guard<std::mutex> lock(failure_mutex);
                        if (!failure) failure = std::current_exception();
                        next = cfg.episodes;
                        return;
                    }
                }
            });
        }
        for (auto& th : pool) th.join();
        if (failure) std::rethrow_exception(failure);
    }

    EvalReport report;
    std::size_t correct = 0;
    for (const auto& r : results) {
        for (std::size_t q = 0; q < r.relations.size(); ++q) {
            ++report.per_relation_queries[r.relations[q]];
            report.per_relation_correct[r.relations[q]] += r.correct[q] ? 1 : 0;
            correct += r.correct[q] ? 1 : 0;
            ++report.queries_evaluated;
        }
    }
    for (const auto& [rel, n] : report.per_relation_queries) {
        report.per_relation_accuracy[rel] = double(report.per_relation_correct[rel]) / double(n);
    }
    report.overall_accuracy = double(correct) / double(report.queries_evaluated);
    report.episodes_evaluated = cfg.episodes;
    report.config_fingerprint = cfg.fingerprint();
    report.seed = cfg.seed;
    report.metadata["episodes"] = std::to_string(cfg.episodes);
    report.metadata["default_episodes"] = std::to_string(EvalConfig{}.episodes);
    return report;
}

std::string EvalReport::to_json() const {
    nlohmann::json j;
    j["overall_accuracy"] = overall_accuracy;
    j["episodes_evaluated"] = episodes_evaluated;
    j["queries_evaluated"] = queries_evaluated;
    j["config_fingerprint"] = config_fingerprint;
    j["seed"] = seed;
    j["metadata"] = metadata;
    nlohmann::json rel = nlohmann::json::object();
    for (const auto& [id, acc] : per_relation_accuracy) {
        rel[id] = {{"accuracy", acc},
                   {"queries", per_relation_queries.at(id)},
                   {"correct", per_relation_correct.at(id)}};
    }
    j["per_relation"] = rel;
    return j.dump(2) + "\n";
}

std::string EvalReport::to_csv() const {
    std::ostringstream out;
    out << "metric,value\n";
    out << "overall_accuracy," << format_double(overall_accuracy) << '\n';
    out << "episodes_evaluated," << episodes_evaluated << '\n';
    out << "queries_evaluated," << queries_evaluated << '\n';
    out << "seed," << seed << '\n';
    out << "config_fingerprint," << config_fingerprint << '\n';
    return out.str();
}

std::string EvalReport::per_relation_csv() const {
    std::ostringstream out;
    out << "relation,queries,correct,accuracy\n";
    for (const auto& [id, acc] : per_relation_accuracy) {
        out << id << ',' << per_relation_queries.at(id) << ',' << per_relation_correct.at(id) << ','
            << format_double(acc) << '\n';
    }
    return out.str();
}

VarianceReport summarize_splits(std::span<const double> accuracies) {
    if (accuracies.empty()) throw ValidationError("summarize_splits: no accuracies");
    VarianceReport r;
    r.accuracies.assign(accuracies.begin(), accuracies.end());
    double sum = 0.0;
    for (double a : accuracies) sum += a;
    r.mean = sum / double(accuracies.size());
    double sq = 0.0;
    for (double a : accuracies) sq += (a - r.mean) * (a - r.mean);
    r.std_dev = std::sqrt(sq / double(accuracies.size()));
    const auto [lo, hi] = std::minmax_element(accuracies.begin(), accuracies.end());
    if (r.mean == 0.0) throw DomainError("summarize_splits: fluctuation ratio undefined for zero mean accuracy");
    r.fluctuation_ratio = (*hi - *lo) / r.mean;
    return r;
}

std::string VarianceReport::to_json() const {
    nlohmann::json j;
    j["accuracies"] = accuracies;
    j["split_seeds"] = split_seeds;
    j["mean"] = mean;
    j["std"] = std_dev;
    j["fluctuation_ratio"] = fluctuation_ratio;
    j["splits"] = accuracies.size();
    return j.dump(2) + "\n";
}

std::string VarianceReport::to_csv() const {
    std::ostringstream out;
    out << "split,seed,accuracy\n";
    for (std::size_t i = 0; i < accuracies.size(); ++i) {
        out << i << ',' << (i < split_seeds.size() ? std::to_string(split_seeds[i]) : std::string()) << ','
            << format_double(accuracies[i]) << '\n';
    }
    out << "mean,," << format_double(mean) << '\n';
    out << "std,," << format_double(std_dev) << '\n';
    out << "fluctuation_ratio,," << format_double(fluctuation_ratio) << '\n';
    return out.str();
}

VarianceReport variance_study(const Corpus& corpus, const std::array<std::size_t, 3>& counts,
                              std::span<const std::uint64_t> split_seeds, const SplitRunner& runner) {
    if (split_seeds.size() < 2) throw ValidationError("variance_study needs at least 2 splits");
    std::vector<double> accuracies;
    for (std::uint64_t s : split_seeds) accuracies.push_back(runner(random_split(corpus, counts, s), s));
    VarianceReport r = summarize_splits(accuracies);
    r.split_seeds.assign(split_seeds.begin(), split_seeds.end());
    return r;
}

VarianceReport variance_study(const Corpus& corpus, const std::array<std::size_t, 3>& counts, std::size_t repeats,
                              std::uint64_t base_seed, const SplitRunner& runner) {
    if (repeats < 2) throw ValidationError("variance_study needs at least 2 splits");
    std::vector<std::uint64_t> seeds;
    for (std::size_t r = 0; r < repeats; ++r) seeds.push_back(base_seed + r);
    return variance_study(corpus, counts, seeds, runner);
}

SplitRunner make_training_runner(const ModelConfig& model_cfg, const TrainConfig& train_cfg,
                                 const EvalConfig& eval_cfg, std::optional<FineTuneConfig> finetune,
                                 const GloveVectors* glove) {
    return [=](const std::array<Corpus, 3>& split, std::uint64_t) {
        EnsembleModel model(model_cfg, split[0].vocab, train_cfg.seed, glove);
        train(model, split[0], &split[1], train_cfg);
        return evaluate(EnsembleClassifier(model, finetune), split[2], eval_cfg).overall_accuracy;
    };
}

} // namespace protoens
