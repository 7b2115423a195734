#include "protoens/config.hpp"
#include "protoens/errors.hpp"

#include <gtest/gtest.h>

#include <filesystem>

using namespace protoens;

namespace {

std::string error_of(const std::string& text) {
    try {
        parse_run_config(text);
    } catch (const std::exception& e) {
        return e.what();
    }
    return "";
}

const std::filesystem::path kConfigs = PROTOENS_CONFIG_DIR;

} // namespace

TEST(RunConfigParse, EmptyTextGivesReferenceDefaults) {
    const RunConfig c = parse_run_config("");
    EXPECT_EQ(c.model.members, default_members());
    EXPECT_EQ(c.model.combine, CombineScheme::Average);
    EXPECT_EQ(c.model.xi, 0.1);
    EXPECT_EQ(c.train.batch_size, 4u);
    EXPECT_EQ(c.train.query_size, 20u);
    EXPECT_EQ(c.train.train_iterations, 30000u);
    EXPECT_EQ(c.train.val_step, 2000u);
    EXPECT_EQ(c.train.learning_rate, 0.1);
    EXPECT_EQ(c.train.weight_decay, 1e-5);
    EXPECT_FALSE(c.finetune.has_value());
}

TEST(RunConfigParse, KeysCommentsAndMembers) {
    const RunConfig c = parse_run_config(R"(
# a comment
member = gru,cosine,plain
member = cnn,euclidean   # trailing comment
combine=vote
n_way = 10
k_shot = 1
seed = 42
train_iterations = 50
val_step = 10
finetune_iterations = 7
finetune_scope = head_only
)");
    ASSERT_EQ(c.model.members.size(), 2u);
    EXPECT_EQ(c.model.members[0], MemberSpec::parse("gru,cosine,plain"));
    EXPECT_EQ(c.model.combine, CombineScheme::Vote);
    EXPECT_EQ(c.train.n_way, 10u);
    EXPECT_EQ(c.eval.n_way, 10u);
    EXPECT_EQ(c.eval.k_shot, 1u);
    EXPECT_EQ(c.eval.seed, 42u);
    ASSERT_TRUE(c.finetune.has_value());
    EXPECT_EQ(c.finetune->iterations, 7u);
    EXPECT_EQ(c.finetune->scope, FineTuneScope::HeadOnly);
}

TEST(RunConfigParse, TextRoundTrip) {
    RunConfig c = parse_run_config("member = inception,cosine\nxi = 0.3\nfinetune = true\nmax_grad_norm = 0\n");
    const std::string text = c.to_text();
    const RunConfig back = parse_run_config(text);
    EXPECT_EQ(back.to_text(), text);
    EXPECT_EQ(back.model.xi, 0.3);
    EXPECT_EQ(back.train.max_grad_norm, 0.0);
    EXPECT_TRUE(back.finetune.has_value());
}

TEST(RunConfigParse, ErrorsNameTheLine) {
    EXPECT_THROW(parse_run_config("bogus = 1"), ValidationError);
    EXPECT_NE(error_of("\nbogus = 1").find("line 2"), std::string::npos);
    EXPECT_THROW(parse_run_config("n_way = five"), ParseError);
    EXPECT_NE(error_of("seed = 1\nn_way = -3").find("line 2"), std::string::npos);
    EXPECT_THROW(parse_run_config("just words"), ParseError);
    EXPECT_THROW(parse_run_config("n_way ="), ParseError);
    EXPECT_THROW(parse_run_config("member = cnn,chebyshev"), ValidationError);
    EXPECT_THROW(parse_run_config("train_iterations = 10\nval_step = 20"), ValidationError);
    EXPECT_THROW(parse_run_config("finetune_iterations = 0"), ValidationError);
    EXPECT_THROW(load_run_config("/nonexistent/protoens.conf"), ParseError);
}

TEST(ShippedConfigs, Parse) {
    const RunConfig ref = load_run_config(kConfigs / "reference.conf");
    EXPECT_EQ(ref.model.members, default_members());
    EXPECT_EQ(ref.train.train_iterations, 30000u);
    EXPECT_EQ(ref.model.out_dim, 230u);
    const RunConfig quick = load_run_config(kConfigs / "synthetic.conf");
    EXPECT_EQ(quick.model.members.size(), 1u);
    EXPECT_EQ(quick.eval.episodes, 500u);
}
