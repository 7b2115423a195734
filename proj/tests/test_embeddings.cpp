#include "protoens/embeddings.hpp"
#include "protoens/errors.hpp"
#include "protoens/ops.hpp"
#include "test_util.hpp"

#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

using namespace protoens;
using protoens::testing::make_instance;
using protoens::testing::to_vector;

namespace {

std::filesystem::path write_temp(const std::string& name, const std::string& body) {
    const auto path = std::filesystem::temp_directory_path() / name;
    std::ofstream(path) << body;
    return path;
}

Vocabulary vocab_of(std::initializer_list<const char*> words) {
    Vocabulary v;
    for (const char* w : words) v.add(w);
    return v;
}

std::vector<double> row(const Tensor& t, std::size_t r) {
    const auto v = t.values();
    const std::size_t w = t.dim(1);
    return {v.begin() + r * w, v.begin() + (r + 1) * w};
}

} // namespace

TEST(Glove, KnownWordTakesFileVector) {
    const auto path = write_temp("protoens_glove_ok.txt", "the 0.1 0.2 0.3\nzebra 1 2 3\n");
    const Vocabulary v = vocab_of({"the", "cat"});
    EmbeddingConfig cfg;
    cfg.word_dim = 3;
    Rng rng(3);
    const EmbeddingTable t = init_embeddings(v, cfg, rng, std::optional<std::filesystem::path>(path));
    std::filesystem::remove(path);
    EXPECT_EQ(row(t.words, v.index("the")), (std::vector<double>{0.1, 0.2, 0.3}));
    for (double x : row(t.words, v.index("cat"))) EXPECT_LE(std::abs(x), 0.5 / 3);
}

TEST(Glove, ShortLineReportsLineNumber) {
    std::string body = "a";
    for (int i = 0; i < 50; ++i) body += " 0.5";
    body += "\nb";
    for (int i = 0; i < 49; ++i) body += " 0.5";
    body += "\n";
    const auto path = write_temp("protoens_glove_bad.txt", body);
    try {
        read_glove(path, 50);
        FAIL() << "expected ParseError";
    } catch (const ParseError& e) {
        EXPECT_NE(std::string(e.what()).find("line 2"), std::string::npos) << e.what();
    }
    std::filesystem::remove(path);
    const auto junk = write_temp("protoens_glove_junk.txt", "a 1 x\n");
    EXPECT_THROW(read_glove(junk, 2), ParseError);
    std::filesystem::remove(junk);
}

TEST(InitEmbeddings, RandomRowsAreBoundedAndSeeded) {
    const Vocabulary v = vocab_of({"x", "y", "z"});
    const EmbeddingConfig cfg;
    Rng a(11), b(11), c(12);
    const EmbeddingTable ta = init_embeddings(v, cfg, a);
    const EmbeddingTable tb = init_embeddings(v, cfg, b);
    const EmbeddingTable tc = init_embeddings(v, cfg, c);
    EXPECT_EQ(to_vector(ta.words), to_vector(tb.words));
    EXPECT_EQ(to_vector(ta.pos_head), to_vector(tb.pos_head));
    EXPECT_NE(to_vector(ta.words), to_vector(tc.words));
    EXPECT_EQ(ta.words.dim(0), v.size());
    EXPECT_EQ(ta.pos_head.dim(0), 2 * cfg.max_len + 1);
    for (double x : ta.words.values()) EXPECT_LE(std::abs(x), 0.01);
    for (double x : row(ta.words, Vocabulary::kPad)) EXPECT_EQ(x, 0.0);
}

TEST(Embed, RowLayoutAndClampedOffsets) {
    const Vocabulary v = vocab_of({"a", "b", "c"});
    EmbeddingConfig cfg;
    cfg.max_len = 4;
    Rng rng(5);
    const EmbeddingTable t = init_embeddings(v, cfg, rng);
    EXPECT_EQ(t.position_row(2, 2), cfg.max_len);
    EXPECT_EQ(t.position_row(0, 3), cfg.max_len - 3);
    EXPECT_EQ(t.position_row(100, 0), 2 * cfg.max_len);
    EXPECT_EQ(t.position_row(0, 100), 0u);

    const Instance inst = make_instance({"a", "B", "unknown"}, {1, 2}, {2, 3});
    const EncodedInput in = embed(inst, t);
    ASSERT_EQ(in.matrix.dim(0), 4u);
    ASSERT_EQ(in.matrix.dim(1), 60u);
    EXPECT_EQ(in.length(), 3u);
    EXPECT_EQ(in.mask, (std::vector<bool>{true, true, true, false}));

    const std::size_t word_of[] = {v.index("a"), v.index("b"), Vocabulary::kUnk};
    for (std::size_t i = 0; i < 3; ++i) {
        std::vector<double> expect = row(t.words, word_of[i]);
        const auto h = row(t.pos_head, t.position_row(i, 1));
        const auto tl = row(t.pos_tail, t.position_row(i, 2));
        expect.insert(expect.end(), h.begin(), h.end());
        expect.insert(expect.end(), tl.begin(), tl.end());
        EXPECT_EQ(row(in.matrix, i), expect) << "row " << i;
    }
    for (double x : row(in.matrix, 3)) EXPECT_EQ(x, 0.0);
}

TEST(Embed, LongSentenceIsTruncated) {
    std::vector<std::string> tokens(130, "w");
    const Vocabulary v = vocab_of({"w"});
    Rng rng(1);
    const EmbeddingTable t = init_embeddings(v, EmbeddingConfig{}, rng);
    const EncodedInput in = embed(make_instance(tokens, {0, 1}, {129, 130}), t);
    EXPECT_EQ(in.matrix.dim(0), 128u);
    EXPECT_EQ(in.length(), 128u);
    EXPECT_EQ(in.matrix.dim(1), 60u);
}

TEST(Embed, WithoutPositionsWidthIsWordDim) {
    EmbeddingConfig cfg;
    cfg.use_positions = false;
    Rng rng(1);
    const EmbeddingTable t = init_embeddings(vocab_of({"a"}), cfg, rng);
    EXPECT_EQ(embed(make_instance({"a"}, {0, 1}, {0, 1}), t).matrix.dim(1), 50u);
    EXPECT_EQ(t.parameters().size(), 1u);
}

TEST(Embed, PackStripsPaddingAndRejectsEmptyInputs) {
    Rng rng(1);
    const EmbeddingTable t = init_embeddings(vocab_of({"a", "b"}), EmbeddingConfig{}, rng);
    const Instance x = make_instance({"a", "b"}, {0, 1}, {1, 2});
    const Instance y = make_instance({"b"}, {0, 1}, {0, 1});
    const EncodedInput ins[] = {embed(x, t), embed(y, t)};
    const PackedBatch p = pack(ins);
    const Instance both[] = {x, y};
    const PackedBatch direct = embed_batch(both, t);
    EXPECT_EQ(p.offsets, (std::vector<std::size_t>{0, 2, 3}));
    EXPECT_EQ(p.offsets, direct.offsets);
    EXPECT_EQ(to_vector(p.rows), to_vector(direct.rows));

    EncodedInput empty;
    empty.matrix = Tensor::zeros(Shape{2, 60});
    empty.mask = {false, false};
    EXPECT_THROW(pack(empty), ContractError);
    EXPECT_THROW(embed(make_instance({}, {0, 0}, {0, 0}), t), ContractError);
}

TEST(Embed, GradientReachesWordAndPositionTables) {
    const Vocabulary v = vocab_of({"a", "b"});
    EmbeddingConfig cfg;
    cfg.max_len = 8;
    Rng rng(2);
    const EmbeddingTable t = init_embeddings(v, cfg, rng);
    const EncodedInput in = embed(make_instance({"a", "b"}, {0, 1}, {1, 2}), t);
    sum_all(square(in.matrix)).backward();
    const auto gw = t.words.grad();
    const std::size_t a = v.index("a");
    const auto wa = row(t.words, a);
    for (std::size_t j = 0; j < cfg.word_dim; ++j) EXPECT_DOUBLE_EQ(gw[a * cfg.word_dim + j], 2 * wa[j]);
    for (std::size_t j = 0; j < cfg.word_dim; ++j) EXPECT_EQ(gw[Vocabulary::kPad * cfg.word_dim + j], 0.0);
    const auto gh = t.pos_head.grad();
    const std::size_t r0 = t.position_row(0, 0);
    EXPECT_DOUBLE_EQ(gh[r0 * cfg.pos_dim], 2 * t.pos_head.values()[r0 * cfg.pos_dim]);
    EXPECT_TRUE(t.pos_tail.has_grad());
}
