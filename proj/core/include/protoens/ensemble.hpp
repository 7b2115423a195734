#pragma once

#include "protoens/data.hpp"
#include "protoens/embeddings.hpp"
#include "protoens/encoders.hpp"
#include "protoens/metric.hpp"
#include "protoens/tensor.hpp"

#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace protoens {

enum class CombineScheme { Average, Vote };

std::string to_string(CombineScheme scheme);
/// Accepts average | vote.
CombineScheme parse_combine_scheme(const std::string& name);

struct MemberSpec {
    EncoderKind encoder = EncoderKind::Cnn;
    MetricKind metric = MetricKind::Euclidean;
    bool feature_attention = true;

    /// "cnn,euclidean,attention" or "cnn,euclidean,plain".
    std::string label() const;
    static MemberSpec parse(const std::string& text);

    bool operator==(const MemberSpec&) const = default;
};

/// {CNN, Inception, GRU, Transformer} x {Euclidean, cosine}, attention on.
std::vector<MemberSpec> default_members();

struct ModelConfig {
    std::vector<MemberSpec> members = default_members();
    EmbeddingConfig embedding;
    std::size_t out_dim = 230;
    std::size_t cnn_window = 3;
    std::size_t heads = 4;
    std::size_t ff_dim = 240;
    double xi = kDefaultXi;
    double entropy_coeff = 1.0;
    CombineScheme combine = CombineScheme::Average;
    /// One embedding table for all members, or one per member.
    bool shared_embeddings = true;

    void validate() const;
    EncoderConfig encoder_config(EncoderKind kind) const;
};

/// Member outputs over one episode's queries.
struct MemberOutput {
    Tensor logits;    // Q x N
    Tensor log_probs; // Q x N
};

/// E prototypical members trained under one objective.
class EnsembleModel {
public:
    EnsembleModel(const ModelConfig& cfg, const Vocabulary& vocab, std::uint64_t seed,
                  const GloveVectors* glove = nullptr);

    EnsembleModel(const EnsembleModel& other);
    EnsembleModel& operator=(const EnsembleModel& other);
    EnsembleModel(EnsembleModel&&) noexcept = default;
    EnsembleModel& operator=(EnsembleModel&&) noexcept = default;

    const ModelConfig& config() const { return config_; }
    std::size_t size() const { return encoders_.size(); }
    const MemberSpec& spec(std::size_t m) const { return config_.members.at(m); }
    const Encoder& encoder(std::size_t m) const { return *encoders_.at(m); }
    const EmbeddingTable& table(std::size_t m) const;

    /// Every learnable tensor, named and in a fixed order.
    ParameterList parameters() const;
    /// Parameters that member m depends on (its table included).
    ParameterList member_parameters(std::size_t m) const;

    std::vector<MemberOutput> forward(const Episode& episode) const;
    MemberOutput forward_member(std::size_t m, const Episode& episode) const;

    /// Per-member query posteriors, computed without recording gradients.
    std::vector<Tensor> member_posteriors(const Episode& episode) const;
    /// Combined query posterior under config().combine.
    Tensor predict(const Episode& episode) const;

private:
    ModelConfig config_;
    std::vector<EmbeddingTable> tables_;
    std::vector<std::unique_ptr<Encoder>> encoders_;
};

/// Support instances followed by queries, embedded by `table`.
PackedBatch embed_episode(const Episode& episode, const EmbeddingTable& table);

/// Prototype-network logits of one member for a pre-embedded episode.
MemberOutput member_forward(const Encoder& encoder, const MemberSpec& spec, const PackedBatch& batch,
                            const Episode& episode, double xi);

/// Mean cross-entropy of the query log-posteriors against labels.
Tensor member_loss(const Tensor& log_probs, std::span<const std::size_t> labels);

/// Mean over rows of -sum_k p log p, from log-probabilities.
Tensor entropy_from_log_probs(const Tensor& log_probs);

/// Mean row entropy of a posterior, with 0 log 0 taken as 0.
double entropy_term(const Tensor& posterior);

struct JointLossParts {
    std::vector<double> cross_entropy;
    std::vector<double> entropy;
};

/// sum_e CE_e + entropy_coeff * sum_e H_e. Weight decay is left to the optimizer.
Tensor joint_loss(const EnsembleModel& model, const Episode& episode, JointLossParts* parts = nullptr);
Tensor joint_loss(std::span<const MemberOutput> outputs, std::span<const std::size_t> labels, double entropy_coeff,
                  JointLossParts* parts = nullptr);

/// Average: renormalised mean of member rows. Vote: plurality of member
/// argmaxes, ties settled by the averaged probabilities; the row returned is
/// (votes + averaged probabilities) / (E + 1), whose argmax is that winner.
/// A single member is returned unchanged under either scheme.
Tensor combine_posteriors(std::span<const Tensor> member_posteriors, CombineScheme scheme);

/// Row argmax with ties going to the lowest index.
std::vector<std::size_t> argmax_rows(const Tensor& m);

} // namespace protoens
