#pragma once

#include "protoens/ensemble.hpp"

#include <memory>
#include <span>
#include <string>
#include <vector>

namespace protoens {

enum class FineTuneScope { HeadOnly, HeadPlusEncoder };

std::string to_string(FineTuneScope scope);
/// Accepts head_only | head_plus_encoder.
FineTuneScope parse_finetune_scope(const std::string& name);

struct FineTuneConfig {
    std::size_t iterations = 60;
    double learning_rate = 0.1;
    /// Fine-tuning runs unregularised by default.
    double weight_decay = 0.0;
    FineTuneScope scope = FineTuneScope::HeadPlusEncoder;

    /// iterations >= 1, learning_rate >= 0, weight_decay >= 0.
    void validate() const;
};

/// Linear softmax classifier p = softmax(M x + b).
struct FineTuneHead {
    Tensor weight; // N x D, row k starts as prototype k
    Tensor bias;   // 1 x N, starts at zero

    /// features (rows x D) -> rows x N.
    Tensor logits(const Tensor& features) const;
};

FineTuneHead init_head(const Tensor& prototypes);

/// One member adapted to one episode. Owns copies of everything it trains.
struct AdaptedMember {
    EmbeddingTable table;
    std::unique_ptr<Encoder> encoder;
    FineTuneHead head;
    /// Support cross-entropy before each update, then after the last one.
    std::vector<double> support_losses;
};

struct AdaptedEnsemble {
    std::vector<AdaptedMember> members;
    CombineScheme combine = CombineScheme::Average;
};

/// Trains a prototype-initialised head (and the encoder, in
/// head_plus_encoder scope) on the episode's support set with full-batch
/// SGD. The model is not modified. Throws UnsupportedConfigurationError for
/// one-shot episodes.
AdaptedMember finetune_member(const EnsembleModel& model, std::size_t member, const Episode& episode,
                              const FineTuneConfig& cfg);
AdaptedEnsemble finetune_episode(const EnsembleModel& model, const Episode& episode, const FineTuneConfig& cfg);

/// Head posterior for the given instances: rows x N.
Tensor predict_finetuned(const AdaptedMember& adapted, std::span<const Instance> instances);
/// Member posteriors combined under the ensemble's scheme.
Tensor predict_finetuned(const AdaptedEnsemble& adapted, std::span<const Instance> instances);

} // namespace protoens
