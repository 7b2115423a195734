#pragma once

#include "protoens/embeddings.hpp"
#include "protoens/rng.hpp"
#include "protoens/tensor.hpp"

#include <memory>
#include <string>
#include <utility>
#include <vector>

namespace protoens {

enum class EncoderKind { Cnn, Inception, Gru, Transformer };

std::string to_string(EncoderKind kind);
/// Accepts cnn | inception | gru | transformer; throws ValidationError otherwise.
EncoderKind parse_encoder_kind(const std::string& name);

struct EncoderConfig {
    EncoderKind kind = EncoderKind::Cnn;
    std::size_t input_dim = 60;
    std::size_t out_dim = 230;
    std::size_t cnn_window = 3;
    std::size_t heads = 4;
    std::size_t ff_dim = 240;
    double layer_norm_eps = 1e-10;

    void validate() const;
};

/// Maps packed sentences to one out_dim row each. Encoding is a pure
/// function of the parameters, so const encoders may be shared across
/// threads as long as no gradient is recorded concurrently.
class Encoder {
public:
    explicit Encoder(EncoderConfig cfg) : config_(std::move(cfg)) {}
    virtual ~Encoder() = default;

    const EncoderConfig& config() const { return config_; }
    EncoderKind kind() const { return config_.kind; }

    /// batch.size() x out_dim.
    virtual Tensor encode(const PackedBatch& batch) const = 0;
    /// 1 x out_dim.
    Tensor encode(const EncodedInput& input) const;

    virtual ParameterList parameters(const std::string& prefix) const = 0;
    virtual std::unique_ptr<Encoder> clone() const = 0;

protected:
    EncoderConfig config_;
};

std::unique_ptr<Encoder> make_encoder(const EncoderConfig& cfg, Rng& rng);

/// Self-attentive pooling shared by the GRU and Transformer encoders:
/// G = tanh(H Wg + bg), a = row_softmax(G G^T), output = sum of the rows of a H.
struct SelfAttentionPool {
    Tensor weight; // d x d
    Tensor bias;   // 1 x d

    static SelfAttentionPool create(std::size_t dim, Rng& rng);
    SelfAttentionPool clone() const;

    /// L x L attention matrix of one sentence.
    Tensor attention(const Tensor& hidden) const;
    /// 1 x d pooled vector of one sentence.
    Tensor pool(const Tensor& hidden) const;
    /// Pools each packed sentence: offsets.size()-1 x d.
    Tensor pool_packed(const Tensor& hidden, std::span<const std::size_t> offsets) const;
};

/// Row-wise (x - mean) / sqrt(var + eps) * gamma + beta for rank-2 x.
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps);

/// Sinusoidal encoding: pe[p][2i] = sin(p / 10000^(2i/d)), pe[p][2i+1] = cos(...).
Tensor sinusoidal_positions(std::size_t length, std::size_t dim);

class CnnEncoder final : public Encoder {
public:
    CnnEncoder(const EncoderConfig& cfg, Rng& rng);

    Tensor encode(const PackedBatch& batch) const override;
    using Encoder::encode;
    ParameterList parameters(const std::string& prefix) const override;
    std::unique_ptr<Encoder> clone() const override;

    Tensor weight; // (window * input_dim) x out_dim
    Tensor bias;   // 1 x out_dim
};

/// Parallel windows 1, 3, 5, 7 and a 9-wide receptive field built from two
/// stacked window-3 convolutions; branch outputs are concatenated, passed
/// through ReLU and max-pooled.
class InceptionEncoder final : public Encoder {
public:
    static constexpr std::size_t kBranches = 5;

    InceptionEncoder(const EncoderConfig& cfg, Rng& rng);

    Tensor encode(const PackedBatch& batch) const override;
    using Encoder::encode;
    ParameterList parameters(const std::string& prefix) const override;
    std::unique_ptr<Encoder> clone() const override;

    /// Channels of each branch; they sum to out_dim.
    std::vector<std::size_t> branch_widths() const;
    /// Pre-activation concat of all branches, total_rows x out_dim.
    Tensor branch_outputs(const PackedBatch& batch) const;

    struct Conv {
        std::size_t window = 1;
        Tensor weight;
        Tensor bias;
    };
    std::vector<Conv> branches; // windows 1, 3, 5, 7, then the outer window-3 of the stacked pair
    Conv stacked_inner;         // first window-3 convolution of the stacked pair
};

/// Bidirectional GRU (out_dim / 2 units per direction) followed by
/// SelfAttentionPool over the concatenated states.
class GruEncoder final : public Encoder {
public:
    GruEncoder(const EncoderConfig& cfg, Rng& rng);

    Tensor encode(const PackedBatch& batch) const override;
    using Encoder::encode;
    ParameterList parameters(const std::string& prefix) const override;
    std::unique_ptr<Encoder> clone() const override;

    struct Cell {
        Tensor w_ir, w_iz, w_in; // input_dim x hidden
        Tensor w_hr, w_hz, w_hn; // hidden x hidden
        Tensor b_r, b_z, b_in, b_hn;

        static Cell create(std::size_t input, std::size_t hidden, Rng& rng);
        Cell clone() const;
        ParameterList parameters(const std::string& prefix) const;
    };

    std::size_t hidden() const { return config_.out_dim / 2; }

    /// Forward-direction and backward-direction states in packed row order.
    std::pair<Tensor, Tensor> hidden_states(const PackedBatch& batch) const;

    Cell forward_cell;
    Cell backward_cell;
    SelfAttentionPool pool;
};

/// One post-norm Transformer encoder layer (multi-head self-attention and a
/// ReLU feed-forward block, each with residual and layer norm) over
/// sqrt(d) * input + sinusoidal positions, then SelfAttentionPool and a linear map to out_dim.
class TransformerEncoder final : public Encoder {
public:
    TransformerEncoder(const EncoderConfig& cfg, Rng& rng);

    Tensor encode(const PackedBatch& batch) const override;
    using Encoder::encode;
    ParameterList parameters(const std::string& prefix) const override;
    std::unique_ptr<Encoder> clone() const override;

    /// Inputs are multiplied by sqrt(input_dim) before the positional encoding is added.
    double input_scale() const;

    /// Layer output rows (before pooling) in packed order.
    Tensor hidden_rows(const PackedBatch& batch) const;
    /// Per-head attention of a padded input: every row attends over the
    /// unmasked keys only, so masked columns are exactly zero.
    std::vector<Tensor> attention_weights(const EncodedInput& input) const;

    Tensor w_q, w_k, w_v, w_o; // d x d
    Tensor b_q, b_k, b_v, b_o;
    Tensor ln1_gamma, ln1_beta;
    Tensor w_ff1, b_ff1, w_ff2, b_ff2;
    Tensor ln2_gamma, ln2_beta;
    SelfAttentionPool pool;
    Tensor w_out, b_out;

private:
    /// Multi-head attention block output for the rows of one sentence.
    Tensor attend(const Tensor& q, const Tensor& k, const Tensor& v, const std::vector<bool>& key_mask,
                  std::vector<Tensor>* weights) const;
};

} // namespace protoens
