#include "protoens/data.hpp"
#include "protoens/errors.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <set>

using namespace protoens;

namespace {

const char* kTwoInstances = R"({
  "P1": [
    {"tokens": ["Paris", "is", "in", "France", "."], "h": ["paris", "Q1", [[0]]], "t": ["france", "Q2", [[3]]]},
    {"tokens": ["a", "b", "c", "d", "e", "f"], "h": ["x", "Q3", [[3, 4], [0]]], "t": ["y", "Q4", [[1]]]}
  ]
})";

Corpus toy_corpus(std::size_t relations, std::size_t per_relation) {
    return make_synthetic_corpus(relations, per_relation, 10 * relations + 20, 2, 1);
}

} // namespace

TEST(FewRelJson, ParsesRelationsAndSpans) {
    const Corpus c = parse_fewrel_json(kTwoInstances);
    ASSERT_EQ(c.relations.size(), 1u);
    const auto& insts = c.relations.at("P1");
    ASSERT_EQ(insts.size(), 2u);
    EXPECT_EQ(insts[0].head, (TokenSpan{0, 1}));
    EXPECT_EQ(insts[0].tail, (TokenSpan{3, 4}));
    // First mention, exclusive end.
    EXPECT_EQ(insts[1].head, (TokenSpan{3, 5}));
    EXPECT_EQ(insts[1].relation, "P1");
    EXPECT_TRUE(c.vocab.contains("paris"));
    EXPECT_TRUE(c.vocab.contains("Paris"));
}

TEST(FewRelJson, MalformedRecordNamesRelationAndIndex) {
    const std::string bad = R"({"P7": [{"tokens": ["a"], "h": ["a", "Q", [[0]]], "t": ["a", "Q", [[0]]]},
                                        {"h": ["a", "Q", [[0]]], "t": ["a", "Q", [[0]]]}]})";
    try {
        parse_fewrel_json(bad);
        FAIL() << "expected ParseError";
    } catch (const ParseError& e) {
        const std::string msg = e.what();
        EXPECT_NE(msg.find("P7"), std::string::npos) << msg;
        EXPECT_NE(msg.find("1"), std::string::npos) << msg;
        EXPECT_NE(msg.find("tokens"), std::string::npos) << msg;
    }
    EXPECT_THROW(parse_fewrel_json("not json"), ParseError);
    EXPECT_THROW(parse_fewrel_json(R"({"P1": []})"), ValidationError);
}

TEST(FewRelJson, FileRoundTrip) {
    const Corpus c = make_synthetic_corpus(3, 4, 40, 2, 9);
    const auto path = std::filesystem::temp_directory_path() / "protoens_fewrel_test.json";
    save_fewrel_json(c, path);
    const Corpus back = load_fewrel_json(path);
    std::filesystem::remove(path);
    EXPECT_EQ(back.relations, c.relations);
    EXPECT_THROW(load_fewrel_json(path), ParseError);
}

TEST(Vocabulary, ReservedIndicesAndLowercase) {
    Vocabulary v;
    EXPECT_EQ(v.size(), 2u);
    const std::size_t i = v.add("Hello");
    EXPECT_EQ(i, 2u);
    EXPECT_EQ(v.add("hello"), i);
    EXPECT_EQ(v.index("HELLO"), i);
    EXPECT_EQ(v.index("unseen"), Vocabulary::kUnk);
}

TEST(RandomSplit, EightyRelationSplitIsDisjoint) {
    const Corpus c = make_synthetic_corpus(80, 3, 400, 2, 2);
    const auto parts = random_split(c, {60, 10, 10}, 5);
    EXPECT_EQ(parts[0].relations.size(), 60u);
    EXPECT_EQ(parts[1].relations.size(), 10u);
    EXPECT_EQ(parts[2].relations.size(), 10u);
    std::set<std::string> seen;
    for (const auto& p : parts) {
        for (const auto& [id, _] : p.relations) EXPECT_TRUE(seen.insert(id).second) << id;
        EXPECT_EQ(p.vocab, c.vocab);
    }
}

TEST(RandomSplit, DeterministicAndSeedSensitive) {
    const Corpus c = make_synthetic_corpus(20, 2, 100, 2, 2);
    const auto a = random_split(c, {10, 5, 5}, 3);
    const auto b = random_split(c, {10, 5, 5}, 3);
    EXPECT_EQ(a[0].relation_ids(), b[0].relation_ids());
    EXPECT_EQ(a[2].relation_ids(), b[2].relation_ids());
    bool differs = false;
    for (std::uint64_t s = 10; s < 20; ++s) differs |= random_split(c, {10, 5, 5}, s)[0].relation_ids() != a[0].relation_ids();
    EXPECT_TRUE(differs);
}

TEST(RandomSplit, TooManyRelationsRequested) {
    const Corpus c = make_synthetic_corpus(80, 2, 400, 2, 2);
    EXPECT_THROW(random_split(c, {80, 10, 10}, 0), ValidationError);
}

TEST(QueriesPerClass, BalancedWithRemainderToLowClasses) {
    EXPECT_EQ(queries_per_class(5, 20), (std::vector<std::size_t>{4, 4, 4, 4, 4}));
    EXPECT_EQ(queries_per_class(3, 7), (std::vector<std::size_t>{3, 2, 2}));
}

TEST(SampleEpisode, TableConfigurationShape) {
    const Corpus c = toy_corpus(8, 30);
    Rng rng(1);
    const Episode e = sample_episode(c, SamplerConfig{5, 5, 20, 4, 0}, rng);
    EXPECT_EQ(e.support.size(), 25u);
    EXPECT_EQ(e.query.size(), 20u);
    std::vector<std::size_t> counts(5, 0);
    for (std::size_t l : e.query_labels) ++counts.at(l);
    EXPECT_EQ(counts, (std::vector<std::size_t>{4, 4, 4, 4, 4}));
    for (std::size_t k = 0; k < 5; ++k) {
        for (std::size_t s = 0; s < 5; ++s) EXPECT_EQ(e.support[k * 5 + s].relation, e.class_ids[k]);
    }
}

TEST(SampleEpisode, MinimalTwoWayOneShot) {
    const Corpus c = toy_corpus(2, 2);
    Rng rng(1);
    const Episode e = sample_episode(c, SamplerConfig{2, 1, 2, 1, 0}, rng);
    EXPECT_EQ(e.support.size(), 2u);
    EXPECT_EQ(e.query.size(), 2u);
}

TEST(SampleEpisode, InsufficientInstancesIsSamplingError) {
    const Corpus c = toy_corpus(2, 1);
    Rng rng(1);
    EXPECT_THROW(sample_episode(c, SamplerConfig{2, 1, 2, 1, 0}, rng), SamplingError);
    EXPECT_THROW(sample_episode(c, SamplerConfig{3, 1, 3, 1, 0}, rng), SamplingError);
}

TEST(SampleEpisode, InvariantsHoldOverManyEpisodes) {
    const Corpus c = toy_corpus(10, 12);
    Rng rng(42);
    for (int i = 0; i < 1000; ++i) {
        const std::size_t n = 2 + rng.below(4), k = 1 + rng.below(3), q = 1 + rng.below(10);
        const Episode e = sample_episode(c, SamplerConfig{n, k, q, 1, 0}, rng);
        ASSERT_EQ(e.class_ids.size(), n);
        EXPECT_EQ(std::set<std::string>(e.class_ids.begin(), e.class_ids.end()).size(), n);
        std::set<InstanceRef> support(e.support_refs.begin(), e.support_refs.end());
        EXPECT_EQ(support.size(), n * k);
        for (std::size_t j = 0; j < e.query.size(); ++j) {
            ASSERT_LT(e.query_labels[j], n);
            EXPECT_EQ(e.query[j].relation, e.class_ids[e.query_labels[j]]);
            EXPECT_EQ(support.count(e.query_refs[j]), 0u);
        }
        EXPECT_EQ(e.query.size(), q);
    }
}

TEST(SampleEpisode, DeterministicForSeed) {
    const Corpus c = toy_corpus(6, 15);
    Rng a(7), b(7);
    for (int i = 0; i < 10; ++i) {
        const Episode x = sample_episode(c, SamplerConfig{}, a);
        const Episode y = sample_episode(c, SamplerConfig{}, b);
        EXPECT_EQ(x.support_refs, y.support_refs);
        EXPECT_EQ(x.query_refs, y.query_refs);
    }
}

TEST(SyntheticCorpus, ShapeAndDeterminism) {
    const Corpus a = make_synthetic_corpus(5, 50, 200, 3, 7);
    EXPECT_EQ(a.relations.size(), 5u);
    for (const auto& [_, insts] : a.relations) EXPECT_EQ(insts.size(), 50u);
    EXPECT_NO_THROW(a.validate());
    const Corpus b = make_synthetic_corpus(5, 50, 200, 3, 7);
    EXPECT_EQ(a.relations, b.relations);
    EXPECT_EQ(a.vocab, b.vocab);
}

TEST(SyntheticCorpus, SignalTokensArePrivateToTheirRelation) {
    const std::size_t n = 5, s = 3;
    const Corpus c = make_synthetic_corpus(n, 50, 200, s, 7);
    const auto ids = c.relation_ids();
    for (std::size_t r = 0; r < n; ++r) {
        std::set<std::string> own;
        for (std::size_t i = r * s; i < (r + 1) * s; ++i) own.insert(synthetic_word(i));
        for (std::size_t other = 0; other < n; ++other) {
            for (const auto& inst : c.relations.at(ids[other])) {
                const bool has = std::any_of(inst.tokens.begin(), inst.tokens.end(),
                                             [&](const std::string& t) { return own.count(t) > 0; });
                if (other == r) {
                    EXPECT_TRUE(has);
                } else {
                    EXPECT_FALSE(has) << "relation " << ids[other] << " carries signal of " << r;
                }
            }
        }
    }
}

TEST(SyntheticCorpus, ContradictoryParameters) {
    EXPECT_THROW(make_synthetic_corpus(5, 10, 15, 3, 0), ValidationError);
    EXPECT_THROW(make_synthetic_corpus(0, 10, 15, 3, 0), ValidationError);
}
