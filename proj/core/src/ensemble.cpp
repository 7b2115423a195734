#include "protoens/ensemble.hpp"

#include "protoens/errors.hpp"
#include "protoens/ops.hpp"

#include <cmath>
#include <sstream>

namespace protoens {

std::string to_string(CombineScheme scheme) { return scheme == CombineScheme::Average ? "average" : "vote"; }

CombineScheme parse_combine_scheme(const std::string& name) {
    if (name == "average") return CombineScheme::Average;
    if (name == "vote") return CombineScheme::Vote;
    throw ValidationError("unknown combine scheme '" + name + "' (expected average|vote)");
}

std::string MemberSpec::label() const {
    return to_string(encoder) + "," + to_string(metric) + "," + (feature_attention ? "attention" : "plain");
}

MemberSpec MemberSpec::parse(const std::string& text) {
    std::vector<std::string> fields;
    std::stringstream in(text);
    std::string field;
    while (std::getline(in, field, ',')) {
        const auto b = field.find_first_not_of(" \t");
        const auto e = field.find_last_not_of(" \t");
        fields.push_back(b == std::string::npos ? "" : field.substr(b, e - b + 1));
    }
    if (fields.size() < 2 || fields.size() > 3) {
        throw ValidationError("member '" + text + "' must be encoder,metric[,attention|plain]");
    }
    MemberSpec spec;
    spec.encoder = parse_encoder_kind(fields[0]);
    spec.metric = parse_metric_kind(fields[1]);
    if (fields.size() == 3) {
        if (fields[2] == "attention") {
            spec.feature_attention = true;
        } else if (fields[2] == "plain") {
            spec.feature_attention = false;
        } else {
            throw ValidationError("member '" + text + "': third field must be attention or plain");
        }
    }
    return spec;
}

std::vector<MemberSpec> default_members() {
    std::vector<MemberSpec> out;
    for (EncoderKind e : {EncoderKind::Cnn, EncoderKind::Inception, EncoderKind::Gru, EncoderKind::Transformer}) {
        for (MetricKind m : {MetricKind::Euclidean, MetricKind::Cosine}) out.push_back({e, m, true});
    }
    return out;
}

void ModelConfig::validate() const {
    if (members.empty()) throw ValidationError("an ensemble needs at least one member");
    if (!(xi > 0.0)) throw ValidationError("xi must be positive");
    if (!(entropy_coeff >= 0.0)) throw ValidationError("entropy_coeff must be non-negative");
    for (const auto& m : members) encoder_config(m.encoder).validate();
}

EncoderConfig ModelConfig::encoder_config(EncoderKind kind) const {
    EncoderConfig c;
    c.kind = kind;
    c.input_dim = embedding.width();
    c.out_dim = out_dim;
    c.cnn_window = cnn_window;
    c.heads = heads;
    c.ff_dim = ff_dim;
    return c;
}

EnsembleModel::EnsembleModel(const ModelConfig& cfg, const Vocabulary& vocab, std::uint64_t seed,
                             const GloveVectors* glove)
    : config_(cfg) {
    config_.validate();
    Rng rng(seed);
    const std::size_t n_tables = config_.shared_embeddings ? 1 : config_.members.size();
    for (std::size_t t = 0; t < n_tables; ++t) tables_.push_back(init_embeddings(vocab, config_.embedding, rng, glove));
    for (const auto& m : config_.members) encoders_.push_back(make_encoder(config_.encoder_config(m.encoder), rng));
}

EnsembleModel::EnsembleModel(const EnsembleModel& other) : config_(other.config_) {
    for (const auto& t : other.tables_) tables_.push_back(t.clone());
    for (const auto& e : other.encoders_) encoders_.push_back(e->clone());
}

EnsembleModel& EnsembleModel::operator=(const EnsembleModel& other) {
    if (this != &other) {
        EnsembleModel copy(other);
        *this = std::move(copy);
    }
    return *this;
}

const EmbeddingTable& EnsembleModel::table(std::size_t m) const {
    if (m >= size()) throw ContractError("member index out of range");
    return tables_[config_.shared_embeddings ? 0 : m];
}

ParameterList EnsembleModel::parameters() const {
    ParameterList out;
    if (config_.shared_embeddings) {
        out = tables_[0].parameters("embedding");
    }
    for (std::size_t m = 0; m < size(); ++m) {
        const std::string prefix = "member" + std::to_string(m);
        if (!config_.shared_embeddings) {
            for (auto& p : tables_[m].parameters(prefix + ".embedding")) out.push_back(std::move(p));
        }
        for (auto& p : encoders_[m]->parameters(prefix + "." + to_string(spec(m).encoder))) out.push_back(std::move(p));
    }
    return out;
}

ParameterList EnsembleModel::member_parameters(std::size_t m) const {
    const std::string prefix = "member" + std::to_string(m);
    ParameterList out =
        table(m).parameters(config_.shared_embeddings ? std::string("embedding") : prefix + ".embedding");
    for (auto& p : encoders_.at(m)->parameters(prefix + "." + to_string(spec(m).encoder))) out.push_back(std::move(p));
    return out;
}

PackedBatch embed_episode(const Episode& episode, const EmbeddingTable& table) {
    std::vector<Instance> all = episode.support;
    all.insert(all.end(), episode.query.begin(), episode.query.end());
    return embed_batch(all, table);
}

MemberOutput member_forward(const Encoder& encoder, const MemberSpec& spec, const PackedBatch& batch,
                            const Episode& episode, double xi) {
    const std::size_t n = episode.n_way;
    const std::size_t k = episode.k_shot;
    const std::size_t n_support = n * k;
    if (episode.support.size() != n_support) throw ContractError("episode support size differs from N*K");
    const Tensor features = encoder.encode(batch);
    const std::size_t d = features.dim(1);
    const Tensor support = reshape(slice(features, 0, 0, n_support), Shape{n, k, d});
    const Tensor queries = slice(features, 0, n_support, features.dim(0));
    const Tensor prototypes = compute_prototypes(support);
    const FeatureWeights weights =
        spec.feature_attention ? compute_feature_weights(support, xi) : uniform_feature_weights(n, d);
    const Tensor logits = class_logits(score_queries(queries, prototypes, weights, spec.metric, kCosineNormEps), spec.metric);
    return {logits, log_softmax(logits, 1)};
}

std::vector<MemberOutput> EnsembleModel::forward(const Episode& episode) const {
    std::vector<MemberOutput> out;
    out.reserve(size());
    std::optional<PackedBatch> shared;
    if (config_.shared_embeddings) shared = embed_episode(episode, tables_[0]);
    for (std::size_t m = 0; m < size(); ++m) {
        const PackedBatch batch = shared ? *shared : embed_episode(episode, tables_[m]);
        out.push_back(member_forward(*encoders_[m], spec(m), batch, episode, config_.xi));
    }
    return out;
}

MemberOutput EnsembleModel::forward_member(std::size_t m, const Episode& episode) const {
    return member_forward(encoder(m), spec(m), embed_episode(episode, table(m)), episode, config_.xi);
}

std::vector<Tensor> EnsembleModel::member_posteriors(const Episode& episode) const {
    NoGradGuard no_grad;
    std::vector<Tensor> out;
    for (const auto& o : forward(episode)) out.push_back(exp(o.log_probs));
    return out;
}

Tensor EnsembleModel::predict(const Episode& episode) const {
    const auto posteriors = member_posteriors(episode);
    return combine_posteriors(posteriors, config_.combine);
}

Tensor member_loss(const Tensor& log_probs, std::span<const std::size_t> labels) {
    if (log_probs.rank() != 2 || log_probs.dim(0) != labels.size()) {
        throw DimensionError("member_loss: need one label per query row");
    }
    return scale(sum_all(pick(log_probs, labels)), -1.0 / double(labels.size()));
}

Tensor entropy_from_log_probs(const Tensor& log_probs) {
    if (log_probs.rank() != 2) throw DimensionError("entropy: expected Q x N");
    const Tensor plogp = mul(exp(log_probs), log_probs);
    return scale(sum_all(plogp), -1.0 / double(log_probs.dim(0)));
}

double entropy_term(const Tensor& posterior) {
    if (posterior.rank() != 2) throw DimensionError("entropy: expected Q x N");
    const auto p = posterior.values();
    double total = 0.0;
    for (double v : p) {
        if (v > 0.0) total -= v * std::log(v);
    }
    return total / double(posterior.dim(0));
}

Tensor joint_loss(std::span<const MemberOutput> outputs, std::span<const std::size_t> labels, double entropy_coeff,
                  JointLossParts* parts) {
    if (outputs.empty()) throw ContractError("joint_loss: no members");
    Tensor total;
    for (const MemberOutput& o : outputs) {
        const Tensor ce = member_loss(o.log_probs, labels);
        const Tensor h = entropy_from_log_probs(o.log_probs);
        if (parts) {
            parts->cross_entropy.push_back(ce.item());
            parts->entropy.push_back(h.item());
        }
        Tensor term = entropy_coeff == 0.0 ? ce : add(ce, scale(h, entropy_coeff));
        total = total.defined() ? add(total, term) : term;
    }
    return total;
}

Tensor joint_loss(const EnsembleModel& model, const Episode& episode, JointLossParts* parts) {
    const auto outputs = model.forward(episode);
    return joint_loss(outputs, episode.query_labels, model.config().entropy_coeff, parts);
}

std::vector<std::size_t> argmax_rows(const Tensor& m) {
    if (m.rank() != 2) throw DimensionError("argmax_rows: expected a matrix");
    const std::size_t rows = m.dim(0);
    const std::size_t cols = m.dim(1);
    const auto v = m.values();
    std::vector<std::size_t> out(rows, 0);
    for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t c = 1; c < cols; ++c) {
            if (v[r * cols + c] > v[r * cols + out[r]]) out[r] = c;
        }
    }
    return out;
}

Tensor combine_posteriors(std::span<const Tensor> member_posteriors, CombineScheme scheme) {
    if (member_posteriors.empty()) throw ContractError("combine_posteriors: no members");
    const Shape shape = member_posteriors[0].shape();
    if (shape.size() != 2) throw DimensionError("combine_posteriors: posteriors must be Q x N");
    for (const Tensor& p : member_posteriors) {
        if (p.shape() != shape) throw DimensionError("combine_posteriors: member shapes differ");
    }
    if (member_posteriors.size() == 1) return member_posteriors[0].detach();

    const std::size_t rows = shape[0];
    const std::size_t cols = shape[1];
    const double e = double(member_posteriors.size());
    std::vector<double> avg(rows * cols, 0.0);
    for (const Tensor& p : member_posteriors) {
        const auto v = p.values();
        for (std::size_t i = 0; i < avg.size(); ++i) avg[i] += v[i];
    }
    for (std::size_t r = 0; r < rows; ++r) {
        double z = 0.0;
        for (std::size_t c = 0; c < cols; ++c) z += avg[r * cols + c];
        for (std::size_t c = 0; c < cols; ++c) avg[r * cols + c] /= z;
    }
    if (scheme == CombineScheme::Average) return Tensor(shape, std::move(avg));

    std::vector<double> votes(rows * cols, 0.0);
    for (const Tensor& p : member_posteriors) {
        const auto winners = argmax_rows(p);
        for (std::size_t r = 0; r < rows; ++r) votes[r * cols + winners[r]] += 1.0;
    }
    for (std::size_t i = 0; i < votes.size(); ++i) votes[i] = (votes[i] + avg[i]) / (e + 1.0);
    return Tensor(shape, std::move(votes));
}

} // namespace protoens
