#include "protoens/data.hpp"

#include "protoens/errors.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cctype>
#include <fstream>
#include <sstream>

namespace protoens {

using nlohmann::json;

namespace {

std::string lower(const std::string& s) {
    std::string out = s;
    std::transform(out.begin(), out.end(), out.begin(), [](unsigned char c) { return char(std::tolower(c)); });
    return out;
}

std::string locate(const std::string& relation, std::size_t index) {
    return "relation " + relation + " index " + std::to_string(index);
}

TokenSpan parse_entity(const json& entity, const std::string& where, const char* key) {
    if (!entity.is_array() || entity.size() < 3 || !entity[2].is_array() || entity[2].empty() ||
        !entity[2][0].is_array() || entity[2][0].empty()) {
        throw ParseError(where + ": '" + key + "' must be [name, id, [[positions...], ...]]");
    }
    const json& first = entity[2][0];
    for (const auto& p : first) {
        if (!p.is_number_integer() || p.get<long long>() < 0) {
            throw ParseError(where + ": '" + key + "' positions must be non-negative integers");
        }
    }
    const auto lo = first.front().get<std::size_t>();
    const auto hi = first.back().get<std::size_t>();
    if (hi < lo) throw ParseError(where + ": '" + key + "' positions must be ascending");
    return {lo, hi + 1};
}

} // namespace

Vocabulary::Vocabulary() {
    add("<pad>");
    add("<unk>");
}

std::size_t Vocabulary::add(const std::string& word) {
    const std::string key = lower(word);
    auto it = index_.find(key);
    if (it != index_.end()) return it->second;
    const std::size_t id = words_.size();
    words_.push_back(key);
    index_.emplace(key, id);
    return id;
}

std::size_t Vocabulary::index(const std::string& word) const {
    auto it = index_.find(lower(word));
    return it == index_.end() ? kUnk : it->second;
}

bool Vocabulary::contains(const std::string& word) const { return index_.count(lower(word)) != 0; }

std::vector<std::string> Corpus::relation_ids() const {
    std::vector<std::string> ids;
    ids.reserve(relations.size());
    for (const auto& [id, _] : relations) ids.push_back(id);
    return ids;
}

std::size_t Corpus::instance_count() const {
    std::size_t n = 0;
    for (const auto& [_, list] : relations) n += list.size();
    return n;
}

void Corpus::validate() const {
    for (const auto& [id, list] : relations) {
        if (list.empty()) throw ValidationError("relation " + id + " has no instances");
        for (std::size_t i = 0; i < list.size(); ++i) {
            const Instance& inst = list[i];
            for (const TokenSpan& s : {inst.head, inst.tail}) {
                if (s.begin >= s.end || s.end > inst.tokens.size()) {
                    throw ValidationError(locate(id, i) + ": entity span outside the sentence");
                }
            }
        }
    }
}

void Corpus::build_vocab() {
    for (const auto& [_, list] : relations) {
        for (const Instance& inst : list) {
            for (const auto& tok : inst.tokens) vocab.add(tok);
        }
    }
}

std::vector<std::size_t> queries_per_class(std::size_t n_way, std::size_t query_size) {
    std::vector<std::size_t> counts(n_way, n_way ? query_size / n_way : 0);
    for (std::size_t k = 0; k < (n_way ? query_size % n_way : 0); ++k) ++counts[k];
    return counts;
}

Corpus parse_fewrel_json(const std::string& text) {
    json doc;
    try {
        doc = json::parse(text);
    } catch (const json::parse_error& e) {
        throw ParseError(std::string("FewRel JSON: ") + e.what());
    }
    if (!doc.is_object()) throw ParseError("FewRel JSON: top level must be an object keyed by relation id");
    Corpus corpus;
    for (const auto& [relation, records] : doc.items()) {
        if (!records.is_array()) throw ParseError("relation " + relation + ": expected a list of instances");
        auto& list = corpus.relations[relation];
        for (std::size_t i = 0; i < records.size(); ++i) {
            const json& rec = records[i];
            const std::string where = locate(relation, i);
            if (!rec.is_object() || !rec.contains("tokens")) throw ParseError(where + ": missing 'tokens'");
            if (!rec.contains("h")) throw ParseError(where + ": missing 'h'");
            if (!rec.contains("t")) throw ParseError(where + ": missing 't'");
            const json& toks = rec["tokens"];
            if (!toks.is_array()) throw ParseError(where + ": 'tokens' must be a list of strings");
            Instance inst;
            for (const auto& t : toks) {
                if (!t.is_string()) throw ParseError(where + ": 'tokens' must be a list of strings");
                inst.tokens.push_back(t.get<std::string>());
            }
            inst.head = parse_entity(rec["h"], where, "h");
            inst.tail = parse_entity(rec["t"], where, "t");
            inst.relation = relation;
            if (inst.head.end > inst.tokens.size() || inst.tail.end > inst.tokens.size()) {
                throw ParseError(where + ": entity position beyond the sentence");
            }
            list.push_back(std::move(inst));
        }
    }
    corpus.validate();
    corpus.build_vocab();
    return corpus;
}

Corpus load_fewrel_json(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ParseError("cannot open " + path.string());
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse_fewrel_json(buf.str());
}

std::string to_fewrel_json(const Corpus& corpus) {
    json doc = json::object();
    for (const auto& [relation, list] : corpus.relations) {
        json records = json::array();
        std::size_t entity_id = 0;
        for (const Instance& inst : list) {
            auto entity = [&](const TokenSpan& s) {
                std::string name;
                std::vector<std::size_t> positions;
                for (std::size_t p = s.begin; p < s.end; ++p) {
                    if (!name.empty()) name += ' ';
                    name += inst.tokens[p];
                    positions.push_back(p);
                }
                return json::array({name, "Q" + std::to_string(entity_id++), json::array({positions})});
            };
            records.push_back({{"tokens", inst.tokens}, {"h", entity(inst.head)}, {"t", entity(inst.tail)}});
        }
        doc[relation] = std::move(records);
    }
    return doc.dump() + "\n";
}

void save_fewrel_json(const Corpus& corpus, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ValidationError("cannot write " + path.string());
    out << to_fewrel_json(corpus);
}

std::array<Corpus, 3> random_split(const Corpus& corpus, const std::array<std::size_t, 3>& counts,
                                   std::uint64_t seed) {
    const std::size_t wanted = counts[0] + counts[1] + counts[2];
    if (wanted > corpus.relations.size()) {
        throw ValidationError("split needs " + std::to_string(wanted) + " relations, corpus has " +
                              std::to_string(corpus.relations.size()));
    }
    std::vector<std::string> ids = corpus.relation_ids();
    Rng rng(seed);
    rng.shuffle(ids);
    std::array<Corpus, 3> parts;
    std::size_t next = 0;
    for (std::size_t p = 0; p < 3; ++p) {
        parts[p].vocab = corpus.vocab;
        for (std::size_t i = 0; i < counts[p]; ++i, ++next) {
            parts[p].relations[ids[next]] = corpus.relations.at(ids[next]);
        }
    }
    return parts;
}

Episode sample_episode(const Corpus& corpus, const SamplerConfig& cfg, Rng& rng) {
    if (cfg.n_way == 0 || cfg.k_shot == 0) throw ValidationError("n_way and k_shot must be positive");
    const std::vector<std::string> ids = corpus.relation_ids();
    if (cfg.n_way > ids.size()) {
        throw SamplingError(std::to_string(cfg.n_way) + "-way episode from " + std::to_string(ids.size()) +
                            " relations");
    }
    const std::vector<std::size_t> per_class = queries_per_class(cfg.n_way, cfg.query_size);
    const std::size_t needed = cfg.k_shot + (cfg.query_size + cfg.n_way - 1) / cfg.n_way;

    Episode ep;
    ep.n_way = cfg.n_way;
    ep.k_shot = cfg.k_shot;
    const std::vector<std::size_t> chosen = rng.sample_without_replacement(ids.size(), cfg.n_way);
    for (std::size_t k = 0; k < cfg.n_way; ++k) {
        const std::string& rel = ids[chosen[k]];
        const auto& list = corpus.relations.at(rel);
        if (list.size() < needed) {
            throw SamplingError("relation " + rel + " has " + std::to_string(list.size()) + " instances, episode needs " +
                                std::to_string(needed));
        }
        ep.class_ids.push_back(rel);
        const std::vector<std::size_t> picks = rng.sample_without_replacement(list.size(), cfg.k_shot + per_class[k]);
        for (std::size_t s = 0; s < cfg.k_shot; ++s) {
            ep.support.push_back(list[picks[s]]);
            ep.support_refs.push_back({rel, picks[s]});
        }
        for (std::size_t q = cfg.k_shot; q < picks.size(); ++q) {
            ep.query.push_back(list[picks[q]]);
            ep.query_refs.push_back({rel, picks[q]});
            ep.query_labels.push_back(k);
        }
    }
    return ep;
}

std::string synthetic_word(std::size_t i) { return "w" + std::to_string(i); }

Corpus make_synthetic_corpus(std::size_t n_relations, std::size_t per_relation, std::size_t vocab_size,
                             std::size_t signal_tokens_per_relation, std::uint64_t seed) {
    const std::size_t signal_total = n_relations * signal_tokens_per_relation;
    if (n_relations == 0 || per_relation == 0 || signal_tokens_per_relation == 0) {
        throw ValidationError("synthetic corpus sizes must be positive");
    }
    if (vocab_size <= signal_total) {
        throw ValidationError("vocab_size must exceed n_relations * signal_tokens_per_relation");
    }
    constexpr std::size_t kMinLength = 8;
    constexpr std::size_t kMaxLength = 16;
    const std::size_t filler_count = vocab_size - signal_total;

    Rng rng(seed);
    Corpus corpus;
    for (std::size_t r = 0; r < n_relations; ++r) {
        const std::string rel = "R" + std::to_string(r);
        auto& list = corpus.relations[rel];
        for (std::size_t i = 0; i < per_relation; ++i) {
            Instance inst;
            inst.relation = rel;
            const std::size_t len = kMinLength + rng.below(kMaxLength - kMinLength + 1);
            inst.tokens.resize(len);
            for (auto& tok : inst.tokens) tok = synthetic_word(signal_total + rng.below(filler_count));

            const std::size_t n_signal = 1 + rng.below(signal_tokens_per_relation);
            const auto which = rng.sample_without_replacement(signal_tokens_per_relation, n_signal);
            const auto where = rng.sample_without_replacement(len, n_signal);
            for (std::size_t s = 0; s < n_signal; ++s) {
                inst.tokens[where[s]] = synthetic_word(r * signal_tokens_per_relation + which[s]);
            }

            const std::size_t head_len = 1 + rng.below(2);
            const std::size_t tail_len = 1 + rng.below(2);
            inst.head.begin = rng.below(len - head_len + 1);
            inst.head.end = inst.head.begin + head_len;
            do {
                inst.tail.begin = rng.below(len - tail_len + 1);
                inst.tail.end = inst.tail.begin + tail_len;
            } while (inst.tail.begin < inst.head.end && inst.head.begin < inst.tail.end);
            list.push_back(std::move(inst));
        }
    }
    for (std::size_t i = 0; i < vocab_size; ++i) corpus.vocab.add(synthetic_word(i));
    return corpus;
}

} // namespace protoens
