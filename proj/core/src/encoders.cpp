#include "protoens/encoders.hpp"

#include "protoens/errors.hpp"
#include "protoens/init.hpp"
#include "protoens/ops.hpp"

#include <cmath>

namespace protoens {

namespace {

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) { return add(matmul(x, w), b); }

std::vector<std::size_t> sentence_rows(std::span<const std::size_t> offsets, std::size_t s) {
    std::vector<std::size_t> rows;
    for (std::size_t r = offsets[s]; r < offsets[s + 1]; ++r) rows.push_back(r);
    return rows;
}

/// Positional rows for packed sentences: row r gets the encoding of its index inside its sentence.
Tensor packed_positions(const PackedBatch& batch, std::size_t dim) {
    std::size_t longest = 0;
    for (std::size_t s = 0; s < batch.size(); ++s) longest = std::max(longest, batch.length(s));
    const Tensor table = sinusoidal_positions(longest, dim);
    const auto src = table.values();
    std::vector<double> out(batch.offsets.back() * dim);
    for (std::size_t s = 0; s < batch.size(); ++s) {
        for (std::size_t p = 0; p < batch.length(s); ++p) {
            std::copy_n(src.begin() + p * dim, dim, out.begin() + (batch.offsets[s] + p) * dim);
        }
    }
    return Tensor(Shape{batch.offsets.back(), dim}, std::move(out));
}

void check_batch(const PackedBatch& batch, const EncoderConfig& cfg) {
    if (batch.size() == 0) throw ContractError("encode: empty batch");
    if (batch.width() != cfg.input_dim) {
        throw DimensionError("encode: input width " + std::to_string(batch.width()) + " but encoder expects " +
                             std::to_string(cfg.input_dim));
    }
    for (std::size_t s = 0; s < batch.size(); ++s) {
        if (batch.length(s) == 0) throw ContractError("encode: input with every position masked");
    }
}

} // namespace

std::string to_string(EncoderKind kind) {
    switch (kind) {
    case EncoderKind::Cnn: return "cnn";
    case EncoderKind::Inception: return "inception";
    case EncoderKind::Gru: return "gru";
    case EncoderKind::Transformer: return "transformer";
    }
    return "unknown";
}

EncoderKind parse_encoder_kind(const std::string& name) {
    if (name == "cnn") return EncoderKind::Cnn;
    if (name == "inception") return EncoderKind::Inception;
    if (name == "gru") return EncoderKind::Gru;
    if (name == "transformer") return EncoderKind::Transformer;
    throw ValidationError("unknown encoder '" + name + "' (expected cnn|inception|gru|transformer)");
}

void EncoderConfig::validate() const {
    if (input_dim == 0 || out_dim == 0) throw ValidationError("encoder dimensions must be positive");
    switch (kind) {
    case EncoderKind::Cnn:
        if (cnn_window % 2 == 0) throw ValidationError("cnn window must be odd");
        break;
    case EncoderKind::Inception:
        if (out_dim < InceptionEncoder::kBranches) throw ValidationError("inception needs out_dim >= 5");
        break;
    case EncoderKind::Gru:
        if (out_dim % 2 != 0) throw ValidationError("bi-GRU out_dim must be even");
        break;
    case EncoderKind::Transformer:
        if (heads == 0 || input_dim % heads != 0) throw ValidationError("heads must divide the model dimension");
        if (ff_dim == 0) throw ValidationError("ff_dim must be positive");
        break;
    }
}

Tensor Encoder::encode(const EncodedInput& input) const { return encode(pack(input)); }

std::unique_ptr<Encoder> make_encoder(const EncoderConfig& cfg, Rng& rng) {
    cfg.validate();
    switch (cfg.kind) {
    case EncoderKind::Cnn: return std::make_unique<CnnEncoder>(cfg, rng);
    case EncoderKind::Inception: return std::make_unique<InceptionEncoder>(cfg, rng);
    case EncoderKind::Gru: return std::make_unique<GruEncoder>(cfg, rng);
    case EncoderKind::Transformer: return std::make_unique<TransformerEncoder>(cfg, rng);
    }
    throw ValidationError("unknown encoder kind");
}

// ---------------------------------------------------------------------------
// Shared pieces

SelfAttentionPool SelfAttentionPool::create(std::size_t dim, Rng& rng) {
    return {kaiming_uniform(dim, dim, rng), zero_bias(dim)};
}

SelfAttentionPool SelfAttentionPool::clone() const { return {weight.clone(), bias.clone()}; }

Tensor SelfAttentionPool::attention(const Tensor& hidden) const {
    const Tensor g = tanh(linear(hidden, weight, bias));
    return softmax(matmul(g, transpose(g)), 1);
}

Tensor SelfAttentionPool::pool(const Tensor& hidden) const {
    const Tensor pooled = sum(matmul(attention(hidden), hidden), 0);
    return reshape(pooled, Shape{1, hidden.dim(1)});
}

Tensor SelfAttentionPool::pool_packed(const Tensor& hidden, std::span<const std::size_t> offsets) const {
    const std::size_t d = hidden.dim(1);
    const Tensor g_all = tanh(linear(hidden, weight, bias));
    std::vector<Tensor> rows;
    rows.reserve(offsets.size() - 1);
    for (std::size_t s = 0; s + 1 < offsets.size(); ++s) {
        const Tensor h = slice(hidden, 0, offsets[s], offsets[s + 1]);
        const Tensor g = slice(g_all, 0, offsets[s], offsets[s + 1]);
        const Tensor a = softmax(matmul(g, transpose(g)), 1);
        rows.push_back(reshape(sum(matmul(a, h), 0), Shape{1, d}));
    }
    return rows.size() == 1 ? rows[0] : concat(rows, 0);
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
    const std::size_t n = x.dim(0);
    const Tensor mu = reshape(mean(x, 1), Shape{n, 1});
    const Tensor centred = sub(x, mu);
    const Tensor var = reshape(mean(square(centred), 1), Shape{n, 1});
    const Tensor normed = div(centred, sqrt(add_scalar(var, eps)));
    return add(mul(normed, gamma), beta);
}

Tensor sinusoidal_positions(std::size_t length, std::size_t dim) {
    std::vector<double> pe(length * dim);
    for (std::size_t p = 0; p < length; ++p) {
        for (std::size_t j = 0; j < dim; ++j) {
            const double rate = std::pow(10000.0, double(j - j % 2) / double(dim));
            const double angle = double(p) / rate;
            pe[p * dim + j] = j % 2 == 0 ? std::sin(angle) : std::cos(angle);
        }
    }
    return Tensor(Shape{length, dim}, std::move(pe));
}

// ---------------------------------------------------------------------------
// CNN

CnnEncoder::CnnEncoder(const EncoderConfig& cfg, Rng& rng) : Encoder(cfg) {
    cfg.validate();
    const std::size_t fan_in = cfg.cnn_window * cfg.input_dim;
    weight = kaiming_uniform(fan_in, cfg.out_dim, rng);
    bias = zero_bias(cfg.out_dim);
}

Tensor CnnEncoder::encode(const PackedBatch& batch) const {
    check_batch(batch, config_);
    const Tensor cols = unfold_sequences(batch.rows, batch.offsets, config_.cnn_window);
    return segment_max(relu(linear(cols, weight, bias)), batch.offsets);
}

ParameterList CnnEncoder::parameters(const std::string& prefix) const {
    return {{prefix + ".conv.weight", weight}, {prefix + ".conv.bias", bias}};
}

std::unique_ptr<Encoder> CnnEncoder::clone() const {
    auto out = std::make_unique<CnnEncoder>(*this);
    out->weight = weight.clone();
    out->bias = bias.clone();
    return out;
}

// ---------------------------------------------------------------------------
// Inception

InceptionEncoder::InceptionEncoder(const EncoderConfig& cfg, Rng& rng) : Encoder(cfg) {
    cfg.validate();
    const std::vector<std::size_t> widths = branch_widths();
    const std::size_t windows[] = {1, 3, 5, 7};
    for (std::size_t b = 0; b < 4; ++b) {
        branches.push_back({windows[b], kaiming_uniform(windows[b] * cfg.input_dim, widths[b], rng),
                            zero_bias(widths[b])});
    }
    const std::size_t w5 = widths[4];
    stacked_inner = {3, kaiming_uniform(3 * cfg.input_dim, w5, rng), zero_bias(w5)};
    branches.push_back({3, kaiming_uniform(3 * w5, w5, rng), zero_bias(w5)});
}

std::vector<std::size_t> InceptionEncoder::branch_widths() const {
    std::vector<std::size_t> widths(kBranches, config_.out_dim / kBranches);
    for (std::size_t b = 0; b < config_.out_dim % kBranches; ++b) ++widths[b];
    return widths;
}

Tensor InceptionEncoder::branch_outputs(const PackedBatch& batch) const {
    check_batch(batch, config_);
    std::vector<Tensor> outs;
    for (std::size_t b = 0; b < 4; ++b) {
        const Conv& c = branches[b];
        outs.push_back(linear(unfold_sequences(batch.rows, batch.offsets, c.window), c.weight, c.bias));
    }
    const Tensor inner = linear(unfold_sequences(batch.rows, batch.offsets, 3), stacked_inner.weight,
                                stacked_inner.bias);
    const Conv& outer = branches[4];
    outs.push_back(linear(unfold_sequences(inner, batch.offsets, 3), outer.weight, outer.bias));
    return concat(outs, 1);
}

Tensor InceptionEncoder::encode(const PackedBatch& batch) const {
    return segment_max(relu(branch_outputs(batch)), batch.offsets);
}

ParameterList InceptionEncoder::parameters(const std::string& prefix) const {
    ParameterList out;
    for (std::size_t b = 0; b < branches.size(); ++b) {
        const std::string name = prefix + ".branch" + std::to_string(b + 1);
        out.push_back({name + ".weight", branches[b].weight});
        out.push_back({name + ".bias", branches[b].bias});
    }
    out.push_back({prefix + ".branch5_inner.weight", stacked_inner.weight});
    out.push_back({prefix + ".branch5_inner.bias", stacked_inner.bias});
    return out;
}

std::unique_ptr<Encoder> InceptionEncoder::clone() const {
    auto out = std::make_unique<InceptionEncoder>(*this);
    for (auto& c : out->branches) {
        c.weight = c.weight.clone();
        c.bias = c.bias.clone();
    }
    out->stacked_inner.weight = stacked_inner.weight.clone();
    out->stacked_inner.bias = stacked_inner.bias.clone();
    return out;
}

// ---------------------------------------------------------------------------
// Bi-GRU

GruEncoder::Cell GruEncoder::Cell::create(std::size_t input, std::size_t hidden, Rng& rng) {
    Cell c;
    c.w_ir = kaiming_uniform(input, hidden, rng);
    c.w_iz = kaiming_uniform(input, hidden, rng);
    c.w_in = kaiming_uniform(input, hidden, rng);
    c.w_hr = kaiming_uniform(hidden, hidden, rng);
    c.w_hz = kaiming_uniform(hidden, hidden, rng);
    c.w_hn = kaiming_uniform(hidden, hidden, rng);
    c.b_r = zero_bias(hidden);
    c.b_z = zero_bias(hidden);
    c.b_in = zero_bias(hidden);
    c.b_hn = zero_bias(hidden);
    return c;
}

GruEncoder::Cell GruEncoder::Cell::clone() const {
    return {w_ir.clone(), w_iz.clone(), w_in.clone(), w_hr.clone(), w_hz.clone(), w_hn.clone(),
            b_r.clone(),  b_z.clone(),  b_in.clone(), b_hn.clone()};
}

ParameterList GruEncoder::Cell::parameters(const std::string& prefix) const {
    return {{prefix + ".w_ir", w_ir}, {prefix + ".w_iz", w_iz}, {prefix + ".w_in", w_in},
            {prefix + ".w_hr", w_hr}, {prefix + ".w_hz", w_hz}, {prefix + ".w_hn", w_hn},
            {prefix + ".b_r", b_r},   {prefix + ".b_z", b_z},   {prefix + ".b_in", b_in},
            {prefix + ".b_hn", b_hn}};
}

GruEncoder::GruEncoder(const EncoderConfig& cfg, Rng& rng) : Encoder(cfg) {
    cfg.validate();
    forward_cell = Cell::create(cfg.input_dim, hidden(), rng);
    backward_cell = Cell::create(cfg.input_dim, hidden(), rng);
    pool = SelfAttentionPool::create(cfg.out_dim, rng);
}

namespace {

/// Runs one GRU direction over every sentence at once. Sentences shorter
/// than the current step keep their state through an exact 0/1 blend, so
/// padding never touches a result.
Tensor run_direction(const GruEncoder::Cell& cell, const PackedBatch& batch, std::size_t hidden, bool reverse) {
    const std::size_t n = batch.size();
    std::size_t steps = 0;
    for (std::size_t s = 0; s < n; ++s) steps = std::max(steps, batch.length(s));

    const Tensor in_r = linear(batch.rows, cell.w_ir, cell.b_r);
    const Tensor in_z = linear(batch.rows, cell.w_iz, cell.b_z);
    const Tensor in_n = linear(batch.rows, cell.w_in, cell.b_in);

    Tensor h = Tensor::zeros(Shape{n, hidden});
    std::vector<Tensor> states(steps);
    for (std::size_t i = 0; i < steps; ++i) {
        const std::size_t t = reverse ? steps - 1 - i : i;
        std::vector<std::size_t> rows(n);
        std::vector<double> keep(n);
        std::vector<double> take(n);
        for (std::size_t s = 0; s < n; ++s) {
            const bool live = t < batch.length(s);
            rows[s] = batch.offsets[s] + (live ? t : 0);
            take[s] = live ? 1.0 : 0.0;
            keep[s] = live ? 0.0 : 1.0;
        }
        const Tensor r = sigmoid(add(gather_rows(in_r, rows), matmul(h, cell.w_hr)));
        const Tensor z = sigmoid(add(gather_rows(in_z, rows), matmul(h, cell.w_hz)));
        const Tensor cand = tanh(add(gather_rows(in_n, rows), mul(r, add(matmul(h, cell.w_hn), cell.b_hn))));
        const Tensor next = add(cand, mul(z, sub(h, cand)));
        h = add(mul(next, Tensor(Shape{n, 1}, take)), mul(h, Tensor(Shape{n, 1}, keep)));
        states[t] = h;
    }

    // states[t] row s -> packed row of (sentence s, position t)
    std::vector<std::size_t> order;
    order.reserve(batch.offsets.back());
    for (std::size_t s = 0; s < n; ++s) {
        for (std::size_t t = 0; t < batch.length(s); ++t) order.push_back(t * n + s);
    }
    return gather_rows(concat(states, 0), order);
}

} // namespace

std::pair<Tensor, Tensor> GruEncoder::hidden_states(const PackedBatch& batch) const {
    check_batch(batch, config_);
    return {run_direction(forward_cell, batch, hidden(), false), run_direction(backward_cell, batch, hidden(), true)};
}

Tensor GruEncoder::encode(const PackedBatch& batch) const {
    auto [fwd, bwd] = hidden_states(batch);
    const Tensor parts[] = {fwd, bwd};
    return pool.pool_packed(concat(parts, 1), batch.offsets);
}

ParameterList GruEncoder::parameters(const std::string& prefix) const {
    ParameterList out = forward_cell.parameters(prefix + ".fwd");
    for (auto& p : backward_cell.parameters(prefix + ".bwd")) out.push_back(std::move(p));
    out.push_back({prefix + ".pool.weight", pool.weight});
    out.push_back({prefix + ".pool.bias", pool.bias});
    return out;
}

std::unique_ptr<Encoder> GruEncoder::clone() const {
    auto out = std::make_unique<GruEncoder>(*this);
    out->forward_cell = forward_cell.clone();
    out->backward_cell = backward_cell.clone();
    out->pool = pool.clone();
    return out;
}

// ---------------------------------------------------------------------------
// Transformer

TransformerEncoder::TransformerEncoder(const EncoderConfig& cfg, Rng& rng) : Encoder(cfg) {
    cfg.validate();
    const std::size_t d = cfg.input_dim;
    w_q = kaiming_uniform(d, d, rng);
    w_k = kaiming_uniform(d, d, rng);
    w_v = kaiming_uniform(d, d, rng);
    w_o = kaiming_uniform(d, d, rng);
    b_q = zero_bias(d);
    b_k = zero_bias(d);
    b_v = zero_bias(d);
    b_o = zero_bias(d);
    ln1_gamma = Tensor::full(Shape{1, d}, 1.0, true);
    ln1_beta = zero_bias(d);
    w_ff1 = kaiming_uniform(d, cfg.ff_dim, rng);
    b_ff1 = zero_bias(cfg.ff_dim);
    w_ff2 = kaiming_uniform(cfg.ff_dim, d, rng);
    b_ff2 = zero_bias(d);
    ln2_gamma = Tensor::full(Shape{1, d}, 1.0, true);
    ln2_beta = zero_bias(d);
    pool = SelfAttentionPool::create(d, rng);
    w_out = kaiming_uniform(d, cfg.out_dim, rng);
    b_out = zero_bias(cfg.out_dim);
}

Tensor TransformerEncoder::attend(const Tensor& q, const Tensor& k, const Tensor& v, const std::vector<bool>& key_mask,
                                  std::vector<Tensor>* weights) const {
    const std::size_t d = config_.input_dim;
    const std::size_t dh = d / config_.heads;
    const double inv_scale = 1.0 / std::sqrt(double(dh));
    std::vector<Tensor> heads;
    for (std::size_t h = 0; h < config_.heads; ++h) {
        const Tensor qh = slice(q, 1, h * dh, (h + 1) * dh);
        const Tensor kh = slice(k, 1, h * dh, (h + 1) * dh);
        const Tensor vh = slice(v, 1, h * dh, (h + 1) * dh);
        const Tensor a = masked_softmax(scale(matmul(qh, transpose(kh)), inv_scale), key_mask);
        if (weights) weights->push_back(a);
        heads.push_back(matmul(a, vh));
    }
    return heads.size() == 1 ? heads[0] : concat(heads, 1);
}

double TransformerEncoder::input_scale() const { return std::sqrt(double(config_.input_dim)); }

Tensor TransformerEncoder::hidden_rows(const PackedBatch& batch) const {
    check_batch(batch, config_);
    const double eps = config_.layer_norm_eps;
    const Tensor x = add(scale(batch.rows, input_scale()), packed_positions(batch, config_.input_dim));
    const Tensor q = linear(x, w_q, b_q);
    const Tensor k = linear(x, w_k, b_k);
    const Tensor v = linear(x, w_v, b_v);
    std::vector<Tensor> mixed;
    for (std::size_t s = 0; s < batch.size(); ++s) {
        const std::size_t lo = batch.offsets[s];
        const std::size_t hi = batch.offsets[s + 1];
        mixed.push_back(attend(slice(q, 0, lo, hi), slice(k, 0, lo, hi), slice(v, 0, lo, hi),
                               std::vector<bool>(hi - lo, true), nullptr));
    }
    const Tensor attn = linear(mixed.size() == 1 ? mixed[0] : concat(mixed, 0), w_o, b_o);
    const Tensor y = layer_norm(add(x, attn), ln1_gamma, ln1_beta, eps);
    const Tensor ff = linear(relu(linear(y, w_ff1, b_ff1)), w_ff2, b_ff2);
    return layer_norm(add(y, ff), ln2_gamma, ln2_beta, eps);
}

Tensor TransformerEncoder::encode(const PackedBatch& batch) const {
    return linear(pool.pool_packed(hidden_rows(batch), batch.offsets), w_out, b_out);
}

std::vector<Tensor> TransformerEncoder::attention_weights(const EncodedInput& input) const {
    const std::size_t len = input.matrix.dim(0);
    const Tensor x = add(scale(input.matrix, input_scale()), sinusoidal_positions(len, config_.input_dim));
    std::vector<Tensor> weights;
    attend(linear(x, w_q, b_q), linear(x, w_k, b_k), linear(x, w_v, b_v), input.mask, &weights);
    return weights;
}

ParameterList TransformerEncoder::parameters(const std::string& prefix) const {
    return {{prefix + ".attn.w_q", w_q},        {prefix + ".attn.b_q", b_q},        {prefix + ".attn.w_k", w_k},
            {prefix + ".attn.b_k", b_k},        {prefix + ".attn.w_v", w_v},        {prefix + ".attn.b_v", b_v},
            {prefix + ".attn.w_o", w_o},        {prefix + ".attn.b_o", b_o},        {prefix + ".ln1.gamma", ln1_gamma},
            {prefix + ".ln1.beta", ln1_beta},   {prefix + ".ff1.weight", w_ff1},    {prefix + ".ff1.bias", b_ff1},
            {prefix + ".ff2.weight", w_ff2},    {prefix + ".ff2.bias", b_ff2},      {prefix + ".ln2.gamma", ln2_gamma},
            {prefix + ".ln2.beta", ln2_beta},   {prefix + ".pool.weight", pool.weight},
            {prefix + ".pool.bias", pool.bias}, {prefix + ".out.weight", w_out},    {prefix + ".out.bias", b_out}};
}

std::unique_ptr<Encoder> TransformerEncoder::clone() const {
    auto out = std::make_unique<TransformerEncoder>(*this);
    for (Tensor* t : {&out->w_q, &out->w_k, &out->w_v, &out->w_o, &out->b_q, &out->b_k, &out->b_v, &out->b_o,
                      &out->ln1_gamma, &out->ln1_beta, &out->w_ff1, &out->b_ff1, &out->w_ff2, &out->b_ff2,
                      &out->ln2_gamma, &out->ln2_beta, &out->w_out, &out->b_out}) {
        *t = t->clone();
    }
    out->pool = pool.clone();
    return out;
}

} // namespace protoens
