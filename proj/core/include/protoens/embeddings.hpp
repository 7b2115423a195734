#pragma once

#include "protoens/data.hpp"
#include "protoens/rng.hpp"
#include "protoens/tensor.hpp"

#include <filesystem>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

namespace protoens {

struct EmbeddingConfig {
    std::size_t word_dim = 50;
    std::size_t pos_dim = 5;
    std::size_t max_len = 128;
    bool use_positions = true;

    /// Row width of an embedded sentence.
    std::size_t width() const { return word_dim + (use_positions ? 2 * pos_dim : 0); }
};

/// Word vectors plus head/tail relative-position tables. Row Vocabulary::kPad
/// of the word table is zero and never receives a gradient because padding
/// is never looked up.
class EmbeddingTable {
public:
    EmbeddingConfig config;
    std::shared_ptr<const Vocabulary> vocab;
    Tensor words;    // |V| x word_dim
    Tensor pos_head; // (2 * max_len + 1) x pos_dim
    Tensor pos_tail;

    ParameterList parameters(const std::string& prefix = "embedding") const;
    /// Independent copy of every table.
    EmbeddingTable clone() const;

    /// Row into a position table for token i relative to an entity start.
    std::size_t position_row(std::size_t token, std::size_t entity_start) const;
};

using GloveVectors = std::unordered_map<std::string, std::vector<double>>;

/// Whitespace separated "word v1 ... vD" lines. Throws ParseError naming
/// the line when a line does not carry exactly `dim` numbers.
GloveVectors read_glove(const std::filesystem::path& path, std::size_t dim);

/// Words present in `glove` get their vectors; the rest (UNK included) draw
/// from U(-0.5/D, 0.5/D); position tables draw from the same range.
EmbeddingTable init_embeddings(const Vocabulary& vocab, const EmbeddingConfig& cfg, Rng& rng,
                               const GloveVectors* glove = nullptr);
EmbeddingTable init_embeddings(const Vocabulary& vocab, const EmbeddingConfig& cfg, Rng& rng,
                               const std::optional<std::filesystem::path>& glove_path);

/// One sentence padded to max_len rows; padded rows are zero and unmasked
/// rows form a prefix.
struct EncodedInput {
    Tensor matrix; // max_len x width
    std::vector<bool> mask;

    std::size_t length() const;
};

/// Several sentences with padding stripped: sentence s is rows
/// [offsets[s], offsets[s+1]) of `rows`.
struct PackedBatch {
    Tensor rows;
    std::vector<std::size_t> offsets;

    std::size_t size() const { return offsets.empty() ? 0 : offsets.size() - 1; }
    std::size_t length(std::size_t s) const { return offsets[s + 1] - offsets[s]; }
    std::size_t width() const { return rows.dim(1); }
};

EncodedInput embed(const Instance& instance, const EmbeddingTable& table);
PackedBatch embed_batch(std::span<const Instance> instances, const EmbeddingTable& table);

/// Strips padding. Throws ContractError when an input has no unmasked row.
PackedBatch pack(std::span<const EncodedInput> inputs);
PackedBatch pack(const EncodedInput& input);

} // namespace protoens
