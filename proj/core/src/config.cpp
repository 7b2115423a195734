#include "protoens/config.hpp"

#include "protoens/errors.hpp"

#include <fstream>
#include <functional>
#include <map>
#include <sstream>

namespace protoens {

namespace {

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

std::size_t to_size(const std::string& v) {
    std::size_t used = 0;
    const unsigned long long x = std::stoull(v, &used);
    if (used != v.size() || v.front() == '-') throw std::invalid_argument(v);
    return std::size_t(x);
}

double to_double(const std::string& v) {
    std::size_t used = 0;
    const double x = std::stod(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return x;
}

bool to_bool(const std::string& v) {
    if (v == "true" || v == "1" || v == "on") return true;
    if (v == "false" || v == "0" || v == "off") return false;
    throw std::invalid_argument(v);
}

std::string bool_text(bool b) { return b ? "true" : "false"; }

std::string double_text(double v) {
    std::ostringstream out;
    out.precision(17);
    out << v;
    return out.str();
}

FineTuneConfig& finetune_of(RunConfig& c) {
    if (!c.finetune) c.finetune = FineTuneConfig{};
    return *c.finetune;
}

using Setter = std::function<void(RunConfig&, const std::string&)>;

const std::map<std::string, Setter>& setters() {
    static const std::map<std::string, Setter> table = {
        {"combine", [](RunConfig& c, const std::string& v) { c.model.combine = parse_combine_scheme(v); }},
        {"word_dim", [](RunConfig& c, const std::string& v) { c.model.embedding.word_dim = to_size(v); }},
        {"pos_dim", [](RunConfig& c, const std::string& v) { c.model.embedding.pos_dim = to_size(v); }},
        {"max_len", [](RunConfig& c, const std::string& v) { c.model.embedding.max_len = to_size(v); }},
        {"use_positions", [](RunConfig& c, const std::string& v) { c.model.embedding.use_positions = to_bool(v); }},
        {"out_dim", [](RunConfig& c, const std::string& v) { c.model.out_dim = to_size(v); }},
        {"cnn_window", [](RunConfig& c, const std::string& v) { c.model.cnn_window = to_size(v); }},
        {"heads", [](RunConfig& c, const std::string& v) { c.model.heads = to_size(v); }},
        {"ff_dim", [](RunConfig& c, const std::string& v) { c.model.ff_dim = to_size(v); }},
        {"xi", [](RunConfig& c, const std::string& v) { c.model.xi = to_double(v); }},
        {"entropy_coeff", [](RunConfig& c, const std::string& v) { c.model.entropy_coeff = to_double(v); }},
        {"shared_embeddings", [](RunConfig& c, const std::string& v) { c.model.shared_embeddings = to_bool(v); }},
        {"n_way",
         [](RunConfig& c, const std::string& v) {
             c.train.n_way = to_size(v);
             c.eval.n_way = c.train.n_way;
         }},
        {"k_shot",
         [](RunConfig& c, const std::string& v) {
             c.train.k_shot = to_size(v);
             c.eval.k_shot = c.train.k_shot;
         }},
        {"query_size",
         [](RunConfig& c, const std::string& v) {
             c.train.query_size = to_size(v);
             c.eval.query_size = c.train.query_size;
         }},
        {"batch_size", [](RunConfig& c, const std::string& v) { c.train.batch_size = to_size(v); }},
        {"train_iterations", [](RunConfig& c, const std::string& v) { c.train.train_iterations = to_size(v); }},
        {"val_step", [](RunConfig& c, const std::string& v) { c.train.val_step = to_size(v); }},
        {"val_episodes", [](RunConfig& c, const std::string& v) { c.train.val_episodes = to_size(v); }},
        {"learning_rate", [](RunConfig& c, const std::string& v) { c.train.learning_rate = to_double(v); }},
        {"weight_decay", [](RunConfig& c, const std::string& v) { c.train.weight_decay = to_double(v); }},
        {"max_grad_norm", [](RunConfig& c, const std::string& v) { c.train.max_grad_norm = to_double(v); }},
        {"seed",
         [](RunConfig& c, const std::string& v) {
             c.train.seed = to_size(v);
             c.eval.seed = c.train.seed;
         }},
        {"eval_episodes", [](RunConfig& c, const std::string& v) { c.eval.episodes = to_size(v); }},
        {"threads", [](RunConfig& c, const std::string& v) { c.eval.threads = to_size(v); }},
        {"finetune",
         [](RunConfig& c, const std::string& v) {
             if (to_bool(v)) {
                 finetune_of(c);
             } else {
                 c.finetune.reset();
             }
         }},
        {"finetune_iterations", [](RunConfig& c, const std::string& v) { finetune_of(c).iterations = to_size(v); }},
        {"finetune_learning_rate",
         [](RunConfig& c, const std::string& v) { finetune_of(c).learning_rate = to_double(v); }},
        {"finetune_weight_decay",
         [](RunConfig& c, const std::string& v) { finetune_of(c).weight_decay = to_double(v); }},
        {"finetune_scope",
         [](RunConfig& c, const std::string& v) { finetune_of(c).scope = parse_finetune_scope(v); }},
    };
    return table;
}

} // namespace

void RunConfig::validate() const {
    model.validate();
    train.validate();
    eval.validate();
    if (finetune) finetune->validate();
}

std::string RunConfig::to_text() const {
    std::ostringstream out;
    for (const auto& m : model.members) out << "member = " << m.label() << '\n';
    out << "combine = " << to_string(model.combine) << '\n';
    out << "word_dim = " << model.embedding.word_dim << '\n';
    out << "pos_dim = " << model.embedding.pos_dim << '\n';
    out << "max_len = " << model.embedding.max_len << '\n';
    out << "use_positions = " << bool_text(model.embedding.use_positions) << '\n';
    out << "out_dim = " << model.out_dim << '\n';
    out << "cnn_window = " << model.cnn_window << '\n';
    out << "heads = " << model.heads << '\n';
    out << "ff_dim = " << model.ff_dim << '\n';
    out << "xi = " << double_text(model.xi) << '\n';
    out << "entropy_coeff = " << double_text(model.entropy_coeff) << '\n';
    out << "shared_embeddings = " << bool_text(model.shared_embeddings) << '\n';
    out << "n_way = " << train.n_way << '\n';
    out << "k_shot = " << train.k_shot << '\n';
    out << "query_size = " << train.query_size << '\n';
    out << "batch_size = " << train.batch_size << '\n';
    out << "train_iterations = " << train.train_iterations << '\n';
    out << "val_step = " << train.val_step << '\n';
    out << "val_episodes = " << train.val_episodes << '\n';
    out << "learning_rate = " << double_text(train.learning_rate) << '\n';
    out << "weight_decay = " << double_text(train.weight_decay) << '\n';
    out << "max_grad_norm = " << double_text(train.max_grad_norm) << '\n';
    out << "seed = " << train.seed << '\n';
    out << "eval_episodes = " << eval.episodes << '\n';
    out << "threads = " << eval.threads << '\n';
    out << "finetune = " << bool_text(finetune.has_value()) << '\n';
    if (finetune) {
        out << "finetune_iterations = " << finetune->iterations << '\n';
        out << "finetune_learning_rate = " << double_text(finetune->learning_rate) << '\n';
        out << "finetune_weight_decay = " << double_text(finetune->weight_decay) << '\n';
        out << "finetune_scope = " << to_string(finetune->scope) << '\n';
    }
    return out.str();
}

RunConfig parse_run_config(const std::string& text) {
    RunConfig cfg;
    std::vector<MemberSpec> members;
    std::istringstream in(text);
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.resize(hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        const std::string where = "config line " + std::to_string(line_no);
        if (eq == std::string::npos) throw ParseError(where + ": expected key = value");
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        if (value.empty()) throw ParseError(where + ": empty value for '" + key + "'");
        try {
            if (key == "member") {
                members.push_back(MemberSpec::parse(value));
                continue;
            }
            const auto it = setters().find(key);
            if (it == setters().end()) throw ValidationError("unknown key '" + key + "'");
            it->second(cfg, value);
        } catch (const ValidationError& e) {
            throw ValidationError(where + ": " + e.what());
        } catch (const std::invalid_argument&) {
            throw ParseError(where + ": bad value '" + value + "' for '" + key + "'");
        } catch (const std::out_of_range&) {
            throw ParseError(where + ": value out of range for '" + key + "'");
        }
    }
    if (!members.empty()) cfg.model.members = std::move(members);
    cfg.validate();
    return cfg;
}

RunConfig load_run_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ParseError("cannot open config file " + path.string());
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse_run_config(buf.str());
}

} // namespace protoens
