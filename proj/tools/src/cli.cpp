#include "protoens_cli/cli.hpp"

#include "protoens/checkpoint.hpp"
#include "protoens/config.hpp"
#include "protoens/data.hpp"
#include "protoens/errors.hpp"
#include "protoens/gradcheck.hpp"
#include "protoens/trainer.hpp"

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

namespace protoens {

namespace fs = std::filesystem;

namespace {

struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

std::array<std::size_t, 3> parse_split(const std::string& text) {
    std::array<std::size_t, 3> out{};
    std::stringstream in(text);
    std::string field;
    std::size_t i = 0;
    while (std::getline(in, field, ',')) {
        if (i == 3) throw UsageError("--split takes three counts, e.g. 64,16,20");
        try {
            std::size_t used = 0;
            const unsigned long v = std::stoul(field, &used);
            if (used != field.size()) throw std::invalid_argument(field);
            out[i++] = v;
        } catch (const std::logic_error&) {
            throw UsageError("--split: bad count '" + field + "'");
        }
    }
    if (i != 3) throw UsageError("--split takes three counts, e.g. 64,16,20");
    return out;
}

void write_file(const fs::path& path, const std::string& text) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << text;
}

std::string vocab_json(const Vocabulary& vocab) {
    nlohmann::json j = nlohmann::json::array();
    for (std::size_t i = 2; i < vocab.size(); ++i) j.push_back(vocab.word(i));
    return j.dump();
}

Vocabulary vocab_from_json(const std::string& text) {
    Vocabulary v;
    for (const auto& w : nlohmann::json::parse(text)) v.add(w.get<std::string>());
    return v;
}

/// Flags shared by the subcommands that build a model.
struct ModelFlags {
    std::string config_path;
    std::optional<std::uint64_t> seed;
    std::string combine;
    std::string glove;

    void add_to(CLI::App& cmd) {
        cmd.add_option("--config", config_path, "key=value run config file");
        cmd.add_option("--seed", seed, "seed for model init, sampling and evaluation");
        cmd.add_option("--combine", combine, "ensemble combination: average|vote")
            ->check(CLI::IsMember({"average", "vote"}));
        cmd.add_option("--glove", glove, "GloVe text file for word vectors");
    }

    RunConfig load(std::optional<RunConfig> base = std::nullopt) const {
        RunConfig cfg = config_path.empty() ? (base ? *base : RunConfig{}) : load_run_config(config_path);
        if (seed) {
            cfg.train.seed = *seed;
            cfg.eval.seed = *seed;
        }
        if (!combine.empty()) cfg.model.combine = parse_combine_scheme(combine);
        return cfg;
    }

    std::optional<GloveVectors> glove_vectors(const RunConfig& cfg) const {
        if (glove.empty()) return std::nullopt;
        return read_glove(glove, cfg.model.embedding.word_dim);
    }
};

struct FineTuneFlags {
    bool enabled = false;
    std::optional<std::size_t> iterations;
    std::optional<double> learning_rate;
    std::string scope;

    void add_to(CLI::App& cmd) {
        cmd.add_flag("--finetune", enabled, "fine-tune on each episode's support set before predicting");
        cmd.add_option("--finetune-iters", iterations, "fine-tuning iterations");
        cmd.add_option("--finetune-lr", learning_rate, "fine-tuning learning rate");
        cmd.add_option("--finetune-scope", scope, "head_only|head_plus_encoder")
            ->check(CLI::IsMember({"head_only", "head_plus_encoder"}));
    }

    void apply(RunConfig& cfg) const {
        if (enabled && !cfg.finetune) cfg.finetune = FineTuneConfig{};
        if (!cfg.finetune) {
            if (iterations || learning_rate || !scope.empty()) {
                throw UsageError("--finetune-* options need --finetune");
            }
            return;
        }
        if (iterations) cfg.finetune->iterations = *iterations;
        if (learning_rate) cfg.finetune->learning_rate = *learning_rate;
        if (!scope.empty()) cfg.finetune->scope = parse_finetune_scope(scope);
        cfg.finetune->validate();
    }
};

struct SplitFlags {
    std::string split;
    std::uint64_t split_seed = 0;

    void add_to(CLI::App& cmd, const std::string& help) {
        cmd.add_option("--split", split, help);
        cmd.add_option("--split-seed", split_seed, "seed of the relation split");
    }
};

} // namespace

int cli_main(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Ensemble prototypical networks for few-shot relation classification", "protoens"};
    app.require_subcommand(1);

    // synth-data
    auto* synth = app.add_subcommand("synth-data", "write a separable synthetic corpus in FewRel JSON");
    std::size_t synth_relations = 5, synth_per = 50, synth_vocab = 200, synth_signal = 3;
    std::uint64_t synth_seed = 0;
    std::string synth_out;
    synth->add_option("--relations", synth_relations, "number of relations")->capture_default_str();
    synth->add_option("--per-relation", synth_per, "instances per relation")->capture_default_str();
    synth->add_option("--vocab", synth_vocab, "vocabulary size")->capture_default_str();
    synth->add_option("--signal", synth_signal, "signal words per relation")->capture_default_str();
    synth->add_option("--seed", synth_seed, "generator seed")->capture_default_str();
    synth->add_option("--out", synth_out, "output JSON file")->required();

    // train
    auto* train_cmd = app.add_subcommand("train", "episodic training; writes training_log.csv and a checkpoint");
    std::string train_data, train_val_data, train_out = ".", train_ckpt;
    std::optional<std::size_t> train_iters;
    ModelFlags train_model;
    SplitFlags train_split;
    train_cmd->add_option("--data", train_data, "FewRel-format training corpus")->required();
    train_cmd->add_option("--val-data", train_val_data, "validation corpus (default: none, or the split's second part)");
    train_split.add_to(*train_cmd, "relation counts train,val,test; trains on the first part, validates on the second");
    train_model.add_to(*train_cmd);
    train_cmd->add_option("--iterations", train_iters, "training iterations");
    train_cmd->add_option("--out", train_out, "output directory")->capture_default_str();
    train_cmd->add_option("--checkpoint", train_ckpt, "checkpoint path (default: <out>/checkpoint.json)");

    // eval
    auto* eval_cmd = app.add_subcommand("eval", "evaluate on sampled episodes; writes report.json/csv");
    std::string eval_data, eval_out = ".", eval_ckpt;
    std::optional<std::size_t> eval_n, eval_k, eval_episodes, eval_member, eval_threads;
    ModelFlags eval_model;
    FineTuneFlags eval_ft;
    SplitFlags eval_split;
    eval_cmd->add_option("--data", eval_data, "FewRel-format corpus")->required();
    eval_split.add_to(*eval_cmd, "relation counts train,val,test; evaluates on the third part");
    eval_model.add_to(*eval_cmd);
    eval_ft.add_to(*eval_cmd);
    eval_cmd->add_option("--checkpoint", eval_ckpt, "trained checkpoint (default: freshly initialised model)");
    eval_cmd->add_option("--n-way", eval_n, "classes per episode");
    eval_cmd->add_option("--k-shot", eval_k, "support instances per class");
    eval_cmd->add_option("--episodes", eval_episodes, "evaluation episodes");
    eval_cmd->add_option("--member", eval_member, "score a single ensemble member");
    eval_cmd->add_option("--threads", eval_threads, "worker threads (PROTOENS_THREADS caps this)");
    eval_cmd->add_option("--out", eval_out, "output directory")->capture_default_str();

    // variance
    auto* var_cmd = app.add_subcommand("variance", "train and evaluate on several random relation splits");
    std::string var_data, var_out = ".";
    std::size_t var_repeats = 4;
    std::optional<std::size_t> var_iters, var_episodes;
    ModelFlags var_model;
    FineTuneFlags var_ft;
    SplitFlags var_split;
    var_split.split = "64,16,20";
    var_cmd->add_option("--data", var_data, "FewRel-format corpus")->required();
    var_split.add_to(*var_cmd, "relation counts train,val,test");
    var_cmd->add_option("--repeats", var_repeats, "number of splits (seeds split-seed, split-seed+1, ...)")
        ->capture_default_str();
    var_model.add_to(*var_cmd);
    var_ft.add_to(*var_cmd);
    var_cmd->add_option("--iterations", var_iters, "training iterations per split");
    var_cmd->add_option("--episodes", var_episodes, "evaluation episodes per split");
    var_cmd->add_option("--out", var_out, "output directory")->capture_default_str();

    // gradcheck
    auto* grad_cmd = app.add_subcommand("gradcheck", "finite-difference check of every gradient");
    std::uint64_t grad_seed = GradCheckOptions{}.seed;
    grad_cmd->add_option("--seed", grad_seed, "input seed")->capture_default_str();

    std::vector<const char*> argv{"protoens"};
    for (const auto& a : args) argv.push_back(a.c_str());
    try {
        app.parse(int(argv.size()), argv.data());
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) {
            app.exit(e, out, err);
            return 0;
        }
        app.exit(e, out, err);
        return 2;
    }

    try {
        if (*synth) {
            const Corpus c = make_synthetic_corpus(synth_relations, synth_per, synth_vocab, synth_signal, synth_seed);
            write_file(synth_out, to_fewrel_json(c));
            out << "wrote " << c.instance_count() << " instances over " << c.relations.size() << " relations to "
                << synth_out << '\n';
            return 0;
        }

        if (*train_cmd) {
            RunConfig cfg = train_model.load();
            if (train_iters) {
                cfg.train.train_iterations = *train_iters;
                cfg.train.val_step = std::min(cfg.train.val_step, *train_iters);
            }
            cfg.validate();
            const Corpus full = load_fewrel_json(train_data);
            Corpus train_corpus;
            std::optional<Corpus> val_corpus;
            if (!train_split.split.empty()) {
                if (!train_val_data.empty()) throw UsageError("--split and --val-data are exclusive");
                auto parts = random_split(full, parse_split(train_split.split), train_split.split_seed);
                train_corpus = std::move(parts[0]);
                val_corpus = std::move(parts[1]);
            } else {
                train_corpus = full;
                if (!train_val_data.empty()) {
                    val_corpus = load_fewrel_json(train_val_data);
                    // Validation sentences are embedded with the training vocabulary.
                    val_corpus->vocab = train_corpus.vocab;
                }
            }
            const auto glove = train_model.glove_vectors(cfg);
            EnsembleModel model(cfg.model, train_corpus.vocab, cfg.train.seed, glove ? &*glove : nullptr);
            const TrainResult result = train(model, train_corpus, val_corpus ? &*val_corpus : nullptr, cfg.train);

            Checkpoint ckpt;
            ckpt.tensors = model.parameters();
            ckpt.metadata["config"] = cfg.to_text();
            ckpt.metadata["vocab"] = vocab_json(train_corpus.vocab);
            ckpt.metadata["iterations"] = std::to_string(cfg.train.train_iterations);
            if (result.best_val_accuracy) {
                ckpt.metadata["best_iteration"] = std::to_string(result.best_iteration);
                ckpt.metadata["best_val_accuracy"] = nlohmann::json(*result.best_val_accuracy).dump();
            }
            const fs::path ckpt_path = train_ckpt.empty() ? fs::path(train_out) / "checkpoint.json" : fs::path(train_ckpt);
            write_file(fs::path(train_out) / "training_log.csv", training_log_csv(result));
            if (ckpt_path.has_parent_path()) fs::create_directories(ckpt_path.parent_path());
            save_checkpoint(ckpt_path, ckpt);
            out << "trained " << cfg.train.train_iterations << " iterations; final loss " << result.log.back().loss;
            if (result.best_val_accuracy) {
                out << "; best validation accuracy " << *result.best_val_accuracy << " at iteration "
                    << result.best_iteration;
            }
            out << "\ncheckpoint: " << ckpt_path.string() << '\n';
            return 0;
        }

        if (*eval_cmd) {
            std::optional<Checkpoint> ckpt;
            std::optional<RunConfig> base;
            if (!eval_ckpt.empty()) {
                ckpt = load_checkpoint(eval_ckpt);
                if (ckpt->metadata.count("config")) base = parse_run_config(ckpt->metadata.at("config"));
            }
            RunConfig cfg = eval_model.load(base);
            eval_ft.apply(cfg);
            if (eval_n) cfg.eval.n_way = *eval_n;
            if (eval_k) cfg.eval.k_shot = *eval_k;
            if (eval_episodes) cfg.eval.episodes = *eval_episodes;
            if (eval_threads) cfg.eval.threads = *eval_threads;
            cfg.eval.validate();

            Corpus corpus = load_fewrel_json(eval_data);
            if (!eval_split.split.empty()) {
                corpus = std::move(random_split(corpus, parse_split(eval_split.split), eval_split.split_seed)[2]);
            }
            const Vocabulary vocab =
                ckpt && ckpt->metadata.count("vocab") ? vocab_from_json(ckpt->metadata.at("vocab")) : corpus.vocab;
            const auto glove = eval_model.glove_vectors(cfg);
            EnsembleModel model(cfg.model, vocab, cfg.train.seed, glove ? &*glove : nullptr);
            if (ckpt) {
                ParameterList params = model.parameters();
                assign_parameters(ckpt->tensors, params);
            }
            const EnsembleClassifier classifier(model, cfg.finetune, eval_member);
            EvalReport report = evaluate(classifier, corpus, cfg.eval);
            report.metadata["combine"] = to_string(cfg.model.combine);
            std::string members;
            for (std::size_t m = 0; m < model.size(); ++m) members += (m ? ";" : "") + model.spec(m).label();
            report.metadata["members"] = members;
            report.metadata["scored"] = eval_member ? model.spec(*eval_member).label() : std::string("ensemble");
            report.metadata["finetune"] =
                cfg.finetune ? to_string(cfg.finetune->scope) + ",iterations=" + std::to_string(cfg.finetune->iterations)
                             : std::string("off");
            report.metadata["trained"] = ckpt ? "true" : "false";
            const fs::path dir(eval_out);
            write_file(dir / "report.json", report.to_json());
            write_file(dir / "report.csv", report.to_csv());
            write_file(dir / "per_relation.csv", report.per_relation_csv());
            out << cfg.eval.n_way << "-way " << cfg.eval.k_shot << "-shot accuracy " << report.overall_accuracy
                << " over " << report.episodes_evaluated << " episodes\n";
            return 0;
        }

        if (*var_cmd) {
            RunConfig cfg = var_model.load();
            var_ft.apply(cfg);
            if (var_iters) {
                cfg.train.train_iterations = *var_iters;
                cfg.train.val_step = std::min(cfg.train.val_step, *var_iters);
            }
            if (var_episodes) cfg.eval.episodes = *var_episodes;
            cfg.validate();
            const Corpus corpus = load_fewrel_json(var_data);
            const auto glove = var_model.glove_vectors(cfg);
            const SplitRunner runner =
                make_training_runner(cfg.model, cfg.train, cfg.eval, cfg.finetune, glove ? &*glove : nullptr);
            const VarianceReport report =
                variance_study(corpus, parse_split(var_split.split), var_repeats, var_split.split_seed, runner);
            const fs::path dir(var_out);
            write_file(dir / "report.json", report.to_json());
            write_file(dir / "report.csv", report.to_csv());
            out << "mean " << report.mean << ", std " << report.std_dev << ", fluctuation ratio "
                << report.fluctuation_ratio << " over " << report.accuracies.size() << " splits\n";
            return 0;
        }

        if (*grad_cmd) {
            GradCheckOptions opts;
            opts.seed = grad_seed;
            bool ok = true;
            for (const auto& r : run_gradcheck_suite(opts)) {
                ok = ok && r.passed();
                out << (r.passed() ? "PASS " : "FAIL ") << r.name << "  coords=" << r.coordinates
                    << "  max_abs=" << r.max_abs_error << "  max_rel=" << r.max_rel_error << '\n';
            }
            out << (ok ? "all gradients match\n" : "gradient mismatch\n");
            return ok ? 0 : 1;
        }
    } catch (const UsageError& e) {
        err << "usage error: " << e.what() << '\n';
        return 2;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
        return 1;
    }
    return 2;
}

int cli_main(int argc, const char* const* argv) {
    std::vector<std::string> args;
    for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
    return cli_main(args, std::cout, std::cerr);
}

} // namespace protoens
