#include "protoens/embeddings.hpp"

#include "protoens/errors.hpp"
#include "protoens/init.hpp"
#include "protoens/ops.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

namespace protoens {

ParameterList EmbeddingTable::parameters(const std::string& prefix) const {
    ParameterList out{{prefix + ".words", words}};
    if (config.use_positions) {
        out.push_back({prefix + ".pos_head", pos_head});
        out.push_back({prefix + ".pos_tail", pos_tail});
    }
    return out;
}

EmbeddingTable EmbeddingTable::clone() const {
    EmbeddingTable t;
    t.config = config;
    t.vocab = vocab;
    t.words = words.clone();
    if (pos_head.defined()) t.pos_head = pos_head.clone();
    if (pos_tail.defined()) t.pos_tail = pos_tail.clone();
    return t;
}

std::size_t EmbeddingTable::position_row(std::size_t token, std::size_t entity_start) const {
    const auto limit = static_cast<long long>(config.max_len);
    long long offset = static_cast<long long>(token) - static_cast<long long>(entity_start);
    offset = std::clamp(offset, -limit, limit);
    return static_cast<std::size_t>(offset + limit);
}

GloveVectors read_glove(const std::filesystem::path& path, std::size_t dim) {
    std::ifstream in(path);
    if (!in) throw ParseError("cannot open GloVe file " + path.string());
    GloveVectors out;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        std::istringstream fields(line);
        std::string word;
        fields >> word;
        std::vector<double> v;
        std::string tok;
        while (fields >> tok) {
            try {
                std::size_t used = 0;
                v.push_back(std::stod(tok, &used));
                if (used != tok.size()) throw std::invalid_argument(tok);
            } catch (const std::exception&) {
                throw ParseError("GloVe line " + std::to_string(line_no) + ": bad number '" + tok + "'");
            }
        }
        if (v.size() != dim) {
            throw ParseError("GloVe line " + std::to_string(line_no) + ": expected " + std::to_string(dim) +
                             " values, found " + std::to_string(v.size()));
        }
        out.emplace(std::move(word), std::move(v));
    }
    return out;
}

EmbeddingTable init_embeddings(const Vocabulary& vocab, const EmbeddingConfig& cfg, Rng& rng,
                               const GloveVectors* glove) {
    if (cfg.word_dim == 0 || cfg.max_len == 0) throw ValidationError("embedding dims must be positive");
    if (cfg.use_positions && cfg.pos_dim == 0) throw ValidationError("pos_dim must be positive");
    EmbeddingTable t;
    t.config = cfg;
    t.vocab = std::make_shared<const Vocabulary>(vocab);
    const double bound = 0.5 / double(cfg.word_dim);
    std::vector<double> words(vocab.size() * cfg.word_dim, 0.0);
    for (std::size_t w = 0; w < vocab.size(); ++w) {
        double* row = words.data() + w * cfg.word_dim;
        // Draw for every row so the stream does not depend on GloVe coverage.
        for (std::size_t j = 0; j < cfg.word_dim; ++j) row[j] = rng.uniform(-bound, bound);
        if (w == Vocabulary::kPad) {
            std::fill_n(row, cfg.word_dim, 0.0);
            continue;
        }
        if (glove) {
            auto it = glove->find(vocab.word(w));
            if (it != glove->end()) {
                if (it->second.size() != cfg.word_dim) throw ParseError("GloVe dimension differs from word_dim");
                std::copy(it->second.begin(), it->second.end(), row);
            }
        }
    }
    t.words = Tensor(Shape{vocab.size(), cfg.word_dim}, std::move(words), true);
    if (cfg.use_positions) {
        const std::size_t rows = 2 * cfg.max_len + 1;
        t.pos_head = uniform_tensor(Shape{rows, cfg.pos_dim}, -bound, bound, rng);
        t.pos_tail = uniform_tensor(Shape{rows, cfg.pos_dim}, -bound, bound, rng);
    }
    return t;
}

EmbeddingTable init_embeddings(const Vocabulary& vocab, const EmbeddingConfig& cfg, Rng& rng,
                               const std::optional<std::filesystem::path>& glove_path) {
    if (!glove_path) return init_embeddings(vocab, cfg, rng, static_cast<const GloveVectors*>(nullptr));
    const GloveVectors glove = read_glove(*glove_path, cfg.word_dim);
    return init_embeddings(vocab, cfg, rng, &glove);
}

std::size_t EncodedInput::length() const {
    return static_cast<std::size_t>(std::count(mask.begin(), mask.end(), true));
}

PackedBatch embed_batch(std::span<const Instance> instances, const EmbeddingTable& table) {
    const EmbeddingConfig& cfg = table.config;
    PackedBatch batch;
    batch.offsets.push_back(0);
    std::vector<std::size_t> word_rows;
    std::vector<std::size_t> head_rows;
    std::vector<std::size_t> tail_rows;
    for (const Instance& inst : instances) {
        const std::size_t len = std::min(inst.tokens.size(), cfg.max_len);
        if (len == 0) throw ContractError("embed: empty sentence");
        for (std::size_t i = 0; i < len; ++i) {
            word_rows.push_back(table.vocab->index(inst.tokens[i]));
            head_rows.push_back(table.position_row(i, inst.head.begin));
            tail_rows.push_back(table.position_row(i, inst.tail.begin));
        }
        batch.offsets.push_back(word_rows.size());
    }
    Tensor words = gather_rows(table.words, word_rows);
    if (!cfg.use_positions) {
        batch.rows = words;
        return batch;
    }
    const Tensor parts[] = {words, gather_rows(table.pos_head, head_rows), gather_rows(table.pos_tail, tail_rows)};
    batch.rows = concat(parts, 1);
    return batch;
}

EncodedInput embed(const Instance& instance, const EmbeddingTable& table) {
    const std::size_t max_len = table.config.max_len;
    PackedBatch packed = embed_batch(std::span<const Instance>(&instance, 1), table);
    const std::size_t len = packed.length(0);
    EncodedInput out;
    out.mask.assign(max_len, false);
    std::fill_n(out.mask.begin(), len, true);
    if (len == max_len) {
        out.matrix = packed.rows;
    } else {
        const Tensor parts[] = {packed.rows, Tensor::zeros(Shape{max_len - len, table.config.width()})};
        out.matrix = concat(parts, 0);
    }
    return out;
}

PackedBatch pack(std::span<const EncodedInput> inputs) {
    PackedBatch batch;
    batch.offsets.push_back(0);
    std::vector<Tensor> parts;
    for (const EncodedInput& in : inputs) {
        std::vector<std::size_t> rows;
        for (std::size_t i = 0; i < in.mask.size(); ++i) {
            if (in.mask[i]) rows.push_back(i);
        }
        if (rows.empty()) throw ContractError("encoder input has no unmasked position");
        parts.push_back(gather_rows(in.matrix, rows));
        batch.offsets.push_back(batch.offsets.back() + rows.size());
    }
    if (parts.empty()) throw ContractError("pack: no inputs");
    batch.rows = parts.size() == 1 ? parts[0] : concat(parts, 0);
    return batch;
}

PackedBatch pack(const EncodedInput& input) { return pack(std::span<const EncodedInput>(&input, 1)); }

} // namespace protoens
