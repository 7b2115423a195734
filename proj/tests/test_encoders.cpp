#include "protoens/encoders.hpp"
#include "protoens/errors.hpp"
#include "protoens/ops.hpp"
#include "test_util.hpp"

#include <gtest/gtest.h>

#include <cmath>

using namespace protoens;
using protoens::testing::random_tensor;
using protoens::testing::to_vector;

namespace {

using Mat = std::vector<std::vector<double>>;

Mat to_mat(const Tensor& t) {
    const auto v = t.values();
    const std::size_t r = t.dim(0), c = t.dim(1);
    Mat m(r, std::vector<double>(c));
    for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) m[i][j] = v[i * c + j];
    return m;
}

Mat mm(const Mat& a, const Mat& b) {
    Mat c(a.size(), std::vector<double>(b[0].size(), 0.0));
    for (std::size_t i = 0; i < a.size(); ++i)
        for (std::size_t p = 0; p < b.size(); ++p)
            for (std::size_t j = 0; j < b[0].size(); ++j) c[i][j] += a[i][p] * b[p][j];
    return c;
}

Mat add_row(Mat a, const Tensor& bias) {
    const auto b = bias.values();
    for (auto& r : a)
        for (std::size_t j = 0; j < r.size(); ++j) r[j] += b[j];
    return a;
}

Mat apply(Mat a, double (*f)(double)) {
    for (auto& r : a)
        for (double& x : r) x = f(x);
    return a;
}

double relu_d(double x) { return x > 0 ? x : 0; }
double tanh_d(double x) { return std::tanh(x); }
double sigmoid_d(double x) { return 1 / (1 + std::exp(-x)); }

/// Same-padded 1-D convolution written out position by position.
Mat naive_conv(const Mat& x, const Tensor& weight, const Tensor& bias, std::size_t window) {
    const Mat w = to_mat(weight);
    const auto b = bias.values();
    const std::size_t len = x.size(), in = x[0].size(), out = b.size();
    const long half = long(window / 2);
    Mat y(len, std::vector<double>(out));
    for (std::size_t t = 0; t < len; ++t) {
        for (std::size_t c = 0; c < out; ++c) {
            double acc = b[c];
            for (long o = -half; o <= half; ++o) {
                const long src = long(t) + o;
                if (src < 0 || src >= long(len)) continue;
                for (std::size_t j = 0; j < in; ++j) acc += x[src][j] * w[(o + half) * in + j][c];
            }
            y[t][c] = acc;
        }
    }
    return y;
}

std::vector<double> column_max(const Mat& m) {
    std::vector<double> out(m[0].size(), -INFINITY);
    for (const auto& r : m)
        for (std::size_t j = 0; j < r.size(); ++j) out[j] = std::max(out[j], r[j]);
    return out;
}

Mat softmax_rows(Mat m) {
    for (auto& r : m) {
        const double hi = *std::max_element(r.begin(), r.end());
        double z = 0;
        for (double& x : r) z += (x = std::exp(x - hi));
        for (double& x : r) x /= z;
    }
    return m;
}

Mat transpose_m(const Mat& a) {
    Mat t(a[0].size(), std::vector<double>(a.size()));
    for (std::size_t i = 0; i < a.size(); ++i)
        for (std::size_t j = 0; j < a[0].size(); ++j) t[j][i] = a[i][j];
    return t;
}

std::vector<double> naive_pool(const Mat& h, const SelfAttentionPool& pool) {
    const Mat g = apply(add_row(mm(h, to_mat(pool.weight)), pool.bias), tanh_d);
    const Mat a = softmax_rows(mm(g, transpose_m(g)));
    const Mat ah = mm(a, h);
    std::vector<double> out(h[0].size(), 0.0);
    for (const auto& r : ah)
        for (std::size_t j = 0; j < r.size(); ++j) out[j] += r[j];
    return out;
}

Mat naive_gru(const Mat& x, const GruEncoder::Cell& c, bool reverse) {
    const std::size_t len = x.size();
    const std::size_t hid = c.b_r.numel();
    const Mat wir = to_mat(c.w_ir), wiz = to_mat(c.w_iz), win = to_mat(c.w_in);
    const Mat whr = to_mat(c.w_hr), whz = to_mat(c.w_hz), whn = to_mat(c.w_hn);
    const auto br = c.b_r.values(), bz = c.b_z.values(), bin = c.b_in.values(), bhn = c.b_hn.values();
    std::vector<double> h(hid, 0.0);
    Mat states(len);
    for (std::size_t step = 0; step < len; ++step) {
        const std::size_t t = reverse ? len - 1 - step : step;
        std::vector<double> next(hid);
        for (std::size_t k = 0; k < hid; ++k) {
            double r = br[k], z = bz[k], n_in = bin[k], n_h = bhn[k];
            for (std::size_t j = 0; j < x[t].size(); ++j) {
                r += x[t][j] * wir[j][k];
                z += x[t][j] * wiz[j][k];
                n_in += x[t][j] * win[j][k];
            }
            for (std::size_t j = 0; j < hid; ++j) {
                r += h[j] * whr[j][k];
                z += h[j] * whz[j][k];
                n_h += h[j] * whn[j][k];
            }
            r = sigmoid_d(r);
            z = sigmoid_d(z);
            const double n = std::tanh(n_in + r * n_h);
            next[k] = (1 - z) * n + z * h[k];
        }
        h = next;
        states[t] = h;
    }
    return states;
}

Mat naive_layer_norm(Mat x, const Tensor& gamma, const Tensor& beta, double eps) {
    const auto g = gamma.values(), b = beta.values();
    for (auto& r : x) {
        double mu = 0, var = 0;
        for (double v : r) mu += v;
        mu /= double(r.size());
        for (double v : r) var += (v - mu) * (v - mu);
        var /= double(r.size());
        for (std::size_t j = 0; j < r.size(); ++j) r[j] = (r[j] - mu) / std::sqrt(var + eps) * g[j] + b[j];
    }
    return x;
}

Mat naive_transformer_rows(const Mat& input, const TransformerEncoder& e) {
    const std::size_t len = input.size(), d = input[0].size(), heads = e.config().heads, dh = d / heads;
    Mat x = input;
    for (std::size_t p = 0; p < len; ++p) {
        for (std::size_t j = 0; j < d; ++j) {
            const double rate = std::pow(10000.0, double(2 * (j / 2)) / double(d));
            x[p][j] = std::sqrt(double(d)) * x[p][j] + (j % 2 ? std::cos(p / rate) : std::sin(p / rate));
        }
    }
    const Mat q = add_row(mm(x, to_mat(e.w_q)), e.b_q);
    const Mat k = add_row(mm(x, to_mat(e.w_k)), e.b_k);
    const Mat v = add_row(mm(x, to_mat(e.w_v)), e.b_v);
    Mat mixed(len, std::vector<double>(d, 0.0));
    for (std::size_t h = 0; h < heads; ++h) {
        Mat s(len, std::vector<double>(len, 0.0));
        for (std::size_t i = 0; i < len; ++i)
            for (std::size_t j = 0; j < len; ++j) {
                for (std::size_t c = h * dh; c < (h + 1) * dh; ++c) s[i][j] += q[i][c] * k[j][c];
                s[i][j] /= std::sqrt(double(dh));
            }
        s = softmax_rows(s);
        for (std::size_t i = 0; i < len; ++i)
            for (std::size_t j = 0; j < len; ++j)
                for (std::size_t c = h * dh; c < (h + 1) * dh; ++c) mixed[i][c] += s[i][j] * v[j][c];
    }
    Mat attn = add_row(mm(mixed, to_mat(e.w_o)), e.b_o);
    for (std::size_t i = 0; i < len; ++i)
        for (std::size_t j = 0; j < d; ++j) attn[i][j] += x[i][j];
    const double eps = e.config().layer_norm_eps;
    const Mat y = naive_layer_norm(attn, e.ln1_gamma, e.ln1_beta, eps);
    Mat ff = add_row(mm(apply(add_row(mm(y, to_mat(e.w_ff1)), e.b_ff1), relu_d), to_mat(e.w_ff2)), e.b_ff2);
    for (std::size_t i = 0; i < len; ++i)
        for (std::size_t j = 0; j < d; ++j) ff[i][j] += y[i][j];
    return naive_layer_norm(ff, e.ln2_gamma, e.ln2_beta, eps);
}

PackedBatch packed(std::vector<Tensor> sentences) {
    PackedBatch b;
    b.offsets.push_back(0);
    for (const auto& s : sentences) b.offsets.push_back(b.offsets.back() + s.dim(0));
    b.rows = concat(sentences, 0);
    return b;
}

EncoderConfig small(EncoderKind kind) {
    EncoderConfig c;
    c.kind = kind;
    c.input_dim = 6;
    c.out_dim = 10;
    c.heads = 2;
    c.ff_dim = 8;
    return c;
}

void randomize(const ParameterList& params, Rng& rng, double scale = 0.5) {
    for (const auto& p : params) {
        Tensor t = p.tensor;
        for (double& x : t.mutable_values()) x = rng.uniform(-scale, scale);
    }
}

void expect_near(std::span<const double> got, const std::vector<double>& want, double tol) {
    ASSERT_EQ(got.size(), want.size());
    for (std::size_t i = 0; i < want.size(); ++i) EXPECT_NEAR(got[i], want[i], tol) << "index " << i;
}

std::vector<double> flat(const Mat& m) {
    std::vector<double> out;
    for (const auto& r : m) out.insert(out.end(), r.begin(), r.end());
    return out;
}

} // namespace

TEST(EncoderKindNames, RoundTrip) {
    for (auto k : {EncoderKind::Cnn, EncoderKind::Inception, EncoderKind::Gru, EncoderKind::Transformer}) {
        EXPECT_EQ(parse_encoder_kind(to_string(k)), k);
    }
    EXPECT_THROW(parse_encoder_kind("lstm"), ValidationError);
}

TEST(EncoderConfigCheck, RejectsInconsistentShapes) {
    EncoderConfig c = small(EncoderKind::Transformer);
    c.heads = 4;
    EXPECT_THROW(c.validate(), ValidationError);
    c = small(EncoderKind::Gru);
    c.out_dim = 7;
    EXPECT_THROW(c.validate(), ValidationError);
    c = small(EncoderKind::Cnn);
    c.cnn_window = 4;
    EXPECT_THROW(c.validate(), ValidationError);
}

TEST(AllEncoders, DefaultWidthIs230) {
    Rng rng(1);
    const Tensor x = random_tensor(Shape{5, 60}, rng);
    for (auto k : {EncoderKind::Cnn, EncoderKind::Inception, EncoderKind::Gru, EncoderKind::Transformer}) {
        EncoderConfig c;
        c.kind = k;
        const auto e = make_encoder(c, rng);
        const Tensor out = e->encode(packed({x}));
        EXPECT_EQ(out.shape(), (Shape{1, 230})) << to_string(k);
    }
}

TEST(AllEncoders, EmptyInputIsContractError) {
    Rng rng(1);
    for (auto k : {EncoderKind::Cnn, EncoderKind::Inception, EncoderKind::Gru, EncoderKind::Transformer}) {
        const auto e = make_encoder(small(k), rng);
        EncodedInput in;
        in.matrix = Tensor::zeros(Shape{3, 6});
        in.mask = {false, false, false};
        EXPECT_THROW(e->encode(in), ContractError) << to_string(k);
        PackedBatch b;
        b.rows = Tensor::zeros(Shape{2, 6});
        b.offsets = {0, 2, 2};
        EXPECT_THROW(e->encode(b), ContractError) << to_string(k);
    }
}

TEST(AllEncoders, PaddingNeverChangesOutput) {
    Rng rng(9);
    const Tensor short_s = random_tensor(Shape{3, 6}, rng);
    const Tensor long_s = random_tensor(Shape{7, 6}, rng);
    for (auto k : {EncoderKind::Cnn, EncoderKind::Inception, EncoderKind::Gru, EncoderKind::Transformer}) {
        const auto e = make_encoder(small(k), rng);
        const Tensor alone = e->encode(packed({short_s}));
        const Tensor batched = e->encode(packed({long_s, short_s}));
        const auto b = batched.values();
        const std::vector<double> second(b.begin() + 10, b.end());
        const double tol = (k == EncoderKind::Cnn || k == EncoderKind::Inception) ? 0.0 : 1e-9;
        expect_near(alone.values(), second, 1e-12);

        EncodedInput in;
        const Tensor junk = random_tensor(Shape{4, 6}, rng);
        const Tensor parts[] = {short_s, junk};
        in.matrix = concat(parts, 0);
        in.mask = {true, true, true, false, false, false, false};
        expect_near(e->encode(in).values(), to_vector(alone), tol);
    }
}

TEST(Cnn, MatchesNaiveConvolutionAndPool) {
    Rng rng(4);
    CnnEncoder e(small(EncoderKind::Cnn), rng);
    randomize(e.parameters("cnn"), rng);
    const Tensor x = random_tensor(Shape{5, 6}, rng);
    const std::vector<double> want = column_max(apply(naive_conv(to_mat(x), e.weight, e.bias, 3), relu_d));
    expect_near(e.encode(packed({x})).values(), want, 1e-12);
}

TEST(Cnn, ZeroInputGivesReluOfBias) {
    Rng rng(4);
    CnnEncoder e(small(EncoderKind::Cnn), rng);
    randomize(e.parameters("cnn"), rng);
    std::vector<double> want;
    for (double b : e.bias.values()) want.push_back(std::max(b, 0.0));
    expect_near(e.encode(packed({Tensor::zeros(Shape{4, 6})})).values(), want, 0.0);
}

TEST(Cnn, SingleTokenPoolsThatPosition) {
    Rng rng(4);
    CnnEncoder e(small(EncoderKind::Cnn), rng);
    const Tensor x = random_tensor(Shape{1, 6}, rng);
    const Mat conv = apply(naive_conv(to_mat(x), e.weight, e.bias, 3), relu_d);
    expect_near(e.encode(packed({x})).values(), conv[0], 1e-12);
}

TEST(Inception, FiveBranchesOf46Channels) {
    Rng rng(1);
    InceptionEncoder e(EncoderConfig{EncoderKind::Inception}, rng);
    EXPECT_EQ(e.branch_widths(), (std::vector<std::size_t>(5, 46)));
    std::size_t total = 0;
    for (auto w : e.branch_widths()) total += w;
    EXPECT_EQ(total, 230u);
    EXPECT_EQ(e.branches.size(), 5u);
    EXPECT_EQ(e.branches[3].window, 7u);
}

TEST(Inception, MatchesNaiveBranches) {
    Rng rng(6);
    InceptionEncoder e(small(EncoderKind::Inception), rng);
    randomize(e.parameters("inc"), rng);
    for (const Mat& x : {to_mat(random_tensor(Shape{6, 6}, rng)), Mat(4, std::vector<double>(6, 0.0))}) {
        std::vector<Mat> outs;
        for (std::size_t b = 0; b < 4; ++b) outs.push_back(naive_conv(x, e.branches[b].weight, e.branches[b].bias, e.branches[b].window));
        const Mat inner = naive_conv(x, e.stacked_inner.weight, e.stacked_inner.bias, 3);
        outs.push_back(naive_conv(inner, e.branches[4].weight, e.branches[4].bias, 3));
        Mat cat(x.size());
        for (const Mat& o : outs)
            for (std::size_t t = 0; t < x.size(); ++t) cat[t].insert(cat[t].end(), o[t].begin(), o[t].end());
        Tensor xt(Shape{x.size(), 6}, flat(x));
        expect_near(e.encode(packed({xt})).values(), column_max(apply(cat, relu_d)), 1e-12);
    }
}

TEST(Inception, ZeroInputGivesReluOfBiasPerPlainBranch) {
    Rng rng(6);
    InceptionEncoder e(small(EncoderKind::Inception), rng);
    randomize(e.parameters("inc"), rng);
    const Tensor out = e.encode(packed({Tensor::zeros(Shape{5, 6})}));
    const auto v = out.values();
    std::size_t col = 0;
    for (std::size_t b = 0; b < 4; ++b) {
        for (double bias : e.branches[b].bias.values()) EXPECT_EQ(v[col++], std::max(bias, 0.0));
    }
}

TEST(Gru, StatesMatchNaiveRecurrence) {
    Rng rng(8);
    GruEncoder e(small(EncoderKind::Gru), rng);
    randomize(e.parameters("gru"), rng);
    const Tensor a = random_tensor(Shape{4, 6}, rng);
    const Tensor b = random_tensor(Shape{2, 6}, rng);
    const auto [fwd, bwd] = e.hidden_states(packed({a, b}));
    Mat want_f = naive_gru(to_mat(a), e.forward_cell, false);
    Mat want_b = naive_gru(to_mat(a), e.backward_cell, true);
    for (auto r : naive_gru(to_mat(b), e.forward_cell, false)) want_f.push_back(r);
    for (auto r : naive_gru(to_mat(b), e.backward_cell, true)) want_b.push_back(r);
    expect_near(fwd.values(), flat(want_f), 1e-12);
    expect_near(bwd.values(), flat(want_b), 1e-12);

    Mat h = naive_gru(to_mat(a), e.forward_cell, false);
    const Mat hb = naive_gru(to_mat(a), e.backward_cell, true);
    for (std::size_t t = 0; t < h.size(); ++t) h[t].insert(h[t].end(), hb[t].begin(), hb[t].end());
    expect_near(e.encode(packed({a})).values(), naive_pool(h, e.pool), 1e-12);
}

TEST(Gru, MirroredCellsOnPalindromeGiveMirroredStates) {
    Rng rng(8);
    GruEncoder e(small(EncoderKind::Gru), rng);
    e.backward_cell = e.forward_cell.clone();
    const Tensor t0 = random_tensor(Shape{1, 6}, rng), t1 = random_tensor(Shape{1, 6}, rng);
    const Tensor x = concat(std::vector<Tensor>{t0, t1, t0}, 0);
    const auto [fwd, bwd] = e.hidden_states(packed({x}));
    const Mat f = to_mat(fwd), b = to_mat(bwd);
    for (std::size_t t = 0; t < 3; ++t) expect_near(f[t], b[2 - t], 1e-14);

    // One token: the pooled output is h_1 and its two halves coincide.
    const Tensor one = e.encode(packed({t0}));
    const auto v = one.values();
    const std::size_t half = e.hidden();
    for (std::size_t j = 0; j < half; ++j) EXPECT_NEAR(v[j], v[half + j], 1e-14);
    expect_near(std::span<const double>(v.data(), half), naive_gru(to_mat(t0), e.forward_cell, false)[0], 1e-12);
}

TEST(SelfAttention, RowsSumToOneAndSingleKeyIsIdentity) {
    Rng rng(2);
    const SelfAttentionPool pool = SelfAttentionPool::create(4, rng);
    const Tensor h = random_tensor(Shape{5, 4}, rng);
    const Tensor a = pool.attention(h);
    for (std::size_t i = 0; i < 5; ++i) {
        double s = 0;
        for (std::size_t j = 0; j < 5; ++j) s += a.at({i, j});
        EXPECT_NEAR(s, 1.0, 1e-12);
    }
    const Tensor one = random_tensor(Shape{1, 4}, rng);
    EXPECT_EQ(pool.attention(one).item(), 1.0);
    expect_near(pool.pool(one).values(), to_vector(one), 1e-15);
    expect_near(pool.pool(h).values(), naive_pool(to_mat(h), pool), 1e-12);
}

TEST(LayerNorm, RowsHaveZeroMeanUnitVariance) {
    Rng rng(3);
    const Tensor x = random_tensor(Shape{6, 12}, rng, -5, 5);
    const Tensor y = layer_norm(x, Tensor::full(Shape{1, 12}, 1.0), Tensor::zeros(Shape{1, 12}), 1e-10);
    for (const auto& r : to_mat(y)) {
        double mu = 0, var = 0;
        for (double v : r) mu += v;
        mu /= 12;
        for (double v : r) var += (v - mu) * (v - mu);
        EXPECT_NEAR(mu, 0.0, 1e-6);
        EXPECT_NEAR(var / 12, 1.0, 1e-6);
    }
}

TEST(Sinusoid, KnownValues) {
    const Tensor pe = sinusoidal_positions(3, 4);
    EXPECT_EQ(pe.at({0, 0}), 0.0);
    EXPECT_EQ(pe.at({0, 1}), 1.0);
    EXPECT_DOUBLE_EQ(pe.at({1, 0}), std::sin(1.0));
    EXPECT_DOUBLE_EQ(pe.at({2, 3}), std::cos(2.0 / 100.0));
}

TEST(Transformer, RowsMatchNaiveLayerAndAreNormalized) {
    Rng rng(12);
    TransformerEncoder e(small(EncoderKind::Transformer), rng);
    const Tensor x = random_tensor(Shape{5, 6}, rng);
    const Tensor rows = e.hidden_rows(packed({x}));
    expect_near(rows.values(), flat(naive_transformer_rows(to_mat(x), e)), 1e-10);
    for (const auto& r : to_mat(rows)) {
        double mu = 0, var = 0;
        for (double v : r) mu += v;
        mu /= 6;
        for (double v : r) var += (v - mu) * (v - mu);
        EXPECT_NEAR(mu, 0.0, 1e-6);
        EXPECT_NEAR(var / 6, 1.0, 1e-6);
    }
    const Mat h = naive_transformer_rows(to_mat(x), e);
    const std::vector<double> pooled = naive_pool(h, e.pool);
    const Mat out = add_row(mm(Mat{pooled}, to_mat(e.w_out)), e.b_out);
    expect_near(e.encode(packed({x})).values(), out[0], 1e-10);
}

TEST(Transformer, MaskedKeysGetExactlyZeroAttention) {
    Rng rng(12);
    TransformerEncoder e(small(EncoderKind::Transformer), rng);
    EncodedInput in;
    in.matrix = random_tensor(Shape{5, 6}, rng);
    in.mask = {true, true, true, false, false};
    const auto weights = e.attention_weights(in);
    ASSERT_EQ(weights.size(), 2u);
    for (const Tensor& a : weights) {
        for (std::size_t i = 0; i < 5; ++i) {
            EXPECT_EQ(a.at({i, 3}), 0.0);
            EXPECT_EQ(a.at({i, 4}), 0.0);
            EXPECT_NEAR(a.at({i, 0}) + a.at({i, 1}) + a.at({i, 2}), 1.0, 1e-12);
        }
    }
}

TEST(Transformer, SingleTokenIsProjectedRow) {
    Rng rng(12);
    TransformerEncoder e(small(EncoderKind::Transformer), rng);
    const Tensor x = random_tensor(Shape{1, 6}, rng);
    const Tensor row = e.hidden_rows(packed({x}));
    const Mat want = add_row(mm(to_mat(row), to_mat(e.w_out)), e.b_out);
    expect_near(e.encode(packed({x})).values(), want[0], 1e-12);
}

TEST(EncoderClone, IsIndependent) {
    Rng rng(5);
    for (auto k : {EncoderKind::Cnn, EncoderKind::Inception, EncoderKind::Gru, EncoderKind::Transformer}) {
        const auto e = make_encoder(small(k), rng);
        const auto c = e->clone();
        const Tensor x = random_tensor(Shape{3, 6}, rng);
        const auto before = to_vector(e->encode(packed({x})));
        randomize(c->parameters("c"), rng);
        EXPECT_EQ(to_vector(e->encode(packed({x}))), before) << to_string(k);
        EXPECT_EQ(c->parameters("c").size(), e->parameters("e").size());
    }
}
