#include "protoens/finetune.hpp"

#include "protoens/errors.hpp"
#include "protoens/ops.hpp"
#include "protoens/optim.hpp"

namespace protoens {

std::string to_string(FineTuneScope scope) {
    return scope == FineTuneScope::HeadOnly ? "head_only" : "head_plus_encoder";
}

FineTuneScope parse_finetune_scope(const std::string& name) {
    if (name == "head_only") return FineTuneScope::HeadOnly;
    if (name == "head_plus_encoder") return FineTuneScope::HeadPlusEncoder;
    throw ValidationError("unknown fine-tune scope '" + name + "' (expected head_only|head_plus_encoder)");
}

void FineTuneConfig::validate() const {
    if (iterations < 1) throw ValidationError("fine-tune iterations must be at least 1");
    if (!(learning_rate >= 0.0)) throw ValidationError("fine-tune learning_rate must be non-negative");
    if (!(weight_decay >= 0.0)) throw ValidationError("fine-tune weight_decay must be non-negative");
}

Tensor FineTuneHead::logits(const Tensor& features) const { return add(matmul(features, transpose(weight)), bias); }

FineTuneHead init_head(const Tensor& prototypes) {
    if (prototypes.rank() != 2) throw DimensionError("init_head: prototypes must be N x D");
    Tensor w = prototypes.detach();
    w.set_requires_grad(true);
    return {w, Tensor::zeros(Shape{1, prototypes.dim(0)}, true)};
}

namespace {

std::vector<std::size_t> support_labels(const Episode& episode) {
    std::vector<std::size_t> labels;
    for (std::size_t k = 0; k < episode.n_way; ++k) {
        for (std::size_t s = 0; s < episode.k_shot; ++s) labels.push_back(k);
    }
    return labels;
}

} // namespace

AdaptedMember finetune_member(const EnsembleModel& model, std::size_t member, const Episode& episode,
                              const FineTuneConfig& cfg) {
    cfg.validate();
    if (episode.k_shot < 2) {
        throw UnsupportedConfigurationError("fine-tuning needs K > 1; one-shot episodes are not supported");
    }
    AdaptedMember out;
    out.table = model.table(member).clone();
    out.encoder = model.encoder(member).clone();

    const std::vector<std::size_t> labels = support_labels(episode);
    const std::size_t n = episode.n_way;
    const std::size_t k = episode.k_shot;

    Tensor fixed_features;
    {
        NoGradGuard no_grad;
        fixed_features = out.encoder->encode(embed_batch(episode.support, out.table));
    }
    const std::size_t d = fixed_features.dim(1);
    out.head = init_head(compute_prototypes(reshape(fixed_features, Shape{n, k, d})));

    ParameterList trainable{{"head.weight", out.head.weight}, {"head.bias", out.head.bias}};
    const bool full = cfg.scope == FineTuneScope::HeadPlusEncoder;
    if (full) {
        for (auto& p : out.table.parameters()) trainable.push_back(p);
        for (auto& p : out.encoder->parameters("encoder")) trainable.push_back(p);
    }

    auto support_features = [&]() {
        return full ? out.encoder->encode(embed_batch(episode.support, out.table)) : fixed_features;
    };
    for (std::size_t it = 0; it < cfg.iterations; ++it) {
        const Tensor loss = member_loss(log_softmax(out.head.logits(support_features()), 1), labels);
        out.support_losses.push_back(loss.item());
        loss.backward();
        sgd_update(trainable, cfg.learning_rate, cfg.weight_decay);
    }
    {
        NoGradGuard no_grad;
        const Tensor loss = member_loss(log_softmax(out.head.logits(support_features()), 1), labels);
        out.support_losses.push_back(loss.item());
    }
    return out;
}

AdaptedEnsemble finetune_episode(const EnsembleModel& model, const Episode& episode, const FineTuneConfig& cfg) {
    AdaptedEnsemble out;
    out.combine = model.config().combine;
    for (std::size_t m = 0; m < model.size(); ++m) out.members.push_back(finetune_member(model, m, episode, cfg));
    return out;
}

Tensor predict_finetuned(const AdaptedMember& adapted, std::span<const Instance> instances) {
    NoGradGuard no_grad;
    const Tensor features = adapted.encoder->encode(embed_batch(instances, adapted.table));
    return softmax(adapted.head.logits(features), 1);
}

Tensor predict_finetuned(const AdaptedEnsemble& adapted, std::span<const Instance> instances) {
    if (adapted.members.empty()) throw ContractError("predict_finetuned: no members");
    std::vector<Tensor> posteriors;
    for (const auto& m : adapted.members) posteriors.push_back(predict_finetuned(m, instances));
    return combine_posteriors(posteriors, adapted.combine);
}

} // namespace protoens
