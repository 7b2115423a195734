#pragma once

#include "protoens/rng.hpp"

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <unordered_map>
#include <vector>

namespace protoens {

/// Half-open token range [begin, end).
struct TokenSpan {
    std::size_t begin = 0;
    std::size_t end = 0;

    bool operator==(const TokenSpan&) const = default;
};

struct Instance {
    std::vector<std::string> tokens;
    TokenSpan head;
    TokenSpan tail;
    std::string relation;

    bool operator==(const Instance&) const = default;
};

/// Word -> index map. Index 0 is PAD and 1 is UNK; words are stored lower-cased.
class Vocabulary {
public:
    static constexpr std::size_t kPad = 0;
    static constexpr std::size_t kUnk = 1;

    Vocabulary();

    std::size_t add(const std::string& word);
    /// Index of `word`, or kUnk.
    std::size_t index(const std::string& word) const;
    bool contains(const std::string& word) const;
    std::size_t size() const { return words_.size(); }
    const std::string& word(std::size_t index) const { return words_.at(index); }

    bool operator==(const Vocabulary& other) const { return words_ == other.words_; }

private:
    std::vector<std::string> words_;
    std::unordered_map<std::string, std::size_t> index_;
};

struct Corpus {
    std::map<std::string, std::vector<Instance>> relations;
    Vocabulary vocab;

    std::vector<std::string> relation_ids() const;
    std::size_t instance_count() const;
    /// Throws ValidationError on an empty relation or an out-of-range span.
    void validate() const;
    /// Adds every token of every instance to the vocabulary.
    void build_vocab();
};

/// Where an episode instance came from: relation id and its index in the corpus.
struct InstanceRef {
    std::string relation;
    std::size_t index = 0;

    auto operator<=>(const InstanceRef&) const = default;
};

struct Episode {
    std::size_t n_way = 0;
    std::size_t k_shot = 0;
    /// Class-major: support[k * k_shot + s] belongs to class k.
    std::vector<Instance> support;
    std::vector<Instance> query;
    std::vector<std::size_t> query_labels;
    std::vector<std::string> class_ids;
    std::vector<InstanceRef> support_refs;
    std::vector<InstanceRef> query_refs;
};

struct SamplerConfig {
    std::size_t n_way = 5;
    std::size_t k_shot = 5;
    std::size_t query_size = 20;
    std::size_t batch_size = 4;
    std::uint64_t seed = 0;
};

/// Queries for class k: query_size / n_way, plus one for the lowest
/// query_size % n_way class indices.
std::vector<std::size_t> queries_per_class(std::size_t n_way, std::size_t query_size);

/// Reads the FewRel layout
///   {"P123": [{"tokens": [...], "h": [name, id, [[pos, ...], ...]], "t": [...]}, ...], ...}
/// using the first mention of each entity. Builds the vocabulary.
Corpus load_fewrel_json(const std::filesystem::path& path);
Corpus parse_fewrel_json(const std::string& text);
void save_fewrel_json(const Corpus& corpus, const std::filesystem::path& path);
std::string to_fewrel_json(const Corpus& corpus);

/// Relation-disjoint train/val/test corpora; each keeps the full vocabulary.
std::array<Corpus, 3> random_split(const Corpus& corpus, const std::array<std::size_t, 3>& counts,
                                   std::uint64_t seed);

Episode sample_episode(const Corpus& corpus, const SamplerConfig& cfg, Rng& rng);

/// Separable toy corpus: relation r owns `signal_tokens_per_relation`
/// private words; every instance carries at least one of them amid
/// filler words shared by all relations.
Corpus make_synthetic_corpus(std::size_t n_relations, std::size_t per_relation, std::size_t vocab_size,
                             std::size_t signal_tokens_per_relation, std::uint64_t seed);

/// Word used for synthetic token id `i`.
std::string synthetic_word(std::size_t i);

} // namespace protoens
