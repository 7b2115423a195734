#include "protoens/checkpoint.hpp"

#include "protoens/errors.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <fstream>
#include <sstream>

namespace protoens {

using nlohmann::json;

std::string checkpoint_to_string(const Checkpoint& ckpt) {
    json doc;
    doc["format"] = "protoens-checkpoint";
    doc["version"] = kCheckpointVersion;
    doc["metadata"] = json::object();
    for (const auto& [k, v] : ckpt.metadata) doc["metadata"][k] = v;
    json tensors = json::object();
    for (const auto& [name, t] : ckpt.tensors) {
        if (tensors.contains(name)) throw ValidationError("duplicate tensor name in checkpoint: " + name);
        auto v = t.values();
        tensors[name] = {{"shape", t.shape()}, {"values", std::vector<double>(v.begin(), v.end())}};
    }
    doc["tensors"] = std::move(tensors);
    return doc.dump() + "\n";
}

Checkpoint checkpoint_from_string(const std::string& text) {
    json doc;
    try {
        doc = json::parse(text);
    } catch (const json::parse_error& e) {
        throw ParseError(std::string("checkpoint: ") + e.what());
    }
    if (doc.value("format", "") != "protoens-checkpoint") throw ParseError("checkpoint: unknown format tag");
    if (doc.value("version", 0) != kCheckpointVersion) throw ParseError("checkpoint: unsupported version");
    Checkpoint ckpt;
    try {
        for (const auto& [k, v] : doc.at("metadata").items()) ckpt.metadata[k] = v.get<std::string>();
        for (const auto& [name, entry] : doc.at("tensors").items()) {
            auto shape = entry.at("shape").get<Shape>();
            auto values = entry.at("values").get<std::vector<double>>();
            ckpt.tensors.push_back({name, Tensor(std::move(shape), std::move(values), true)});
        }
    } catch (const json::exception& e) {
        throw ParseError(std::string("checkpoint: ") + e.what());
    } catch (const DimensionError& e) {
        throw ParseError(std::string("checkpoint: ") + e.what());
    }
    return ckpt;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ValidationError("cannot write checkpoint " + path.string());
    out << checkpoint_to_string(ckpt);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ValidationError("cannot read checkpoint " + path.string());
    std::ostringstream buf;
    buf << in.rdbuf();
    return checkpoint_from_string(buf.str());
}

void assign_parameters(const ParameterList& source, ParameterList& params) {
    for (auto& [name, dst] : params) {
        auto it = std::find_if(source.begin(), source.end(), [&](const NamedTensor& s) { return s.name == name; });
        if (it == source.end()) throw ValidationError("checkpoint is missing tensor " + name);
        if (it->tensor.shape() != dst.shape()) {
            throw ValidationError("shape mismatch for " + name + ": " + shape_string(it->tensor.shape()) + " vs " +
                                  shape_string(dst.shape()));
        }
        auto src = it->tensor.values();
        std::copy(src.begin(), src.end(), dst.mutable_values().begin());
    }
}

ParameterList snapshot(const ParameterList& params) {
    ParameterList out;
    out.reserve(params.size());
    for (const auto& p : params) out.push_back({p.name, p.tensor.detach()});
    return out;
}

} // namespace protoens
