#pragma once

#include "protoens/tensor.hpp"

#include <filesystem>
#include <map>
#include <string>

namespace protoens {

/// Parameter checkpoint, serialised as JSON:
///
///   {"format": "protoens-checkpoint", "version": 1,
///    "metadata": {"key": "value", ...},
///    "tensors": {"name": {"shape": [r, c], "values": [...]}, ...}}
///
/// Keys are written in sorted order and doubles in shortest round-trip
/// form, so equal parameters always produce equal bytes.
struct Checkpoint {
    std::map<std::string, std::string> metadata;
    ParameterList tensors;
};

inline constexpr int kCheckpointVersion = 1;

std::string checkpoint_to_string(const Checkpoint& ckpt);
Checkpoint checkpoint_from_string(const std::string& text);

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Copies values from `source` into same-named tensors of `params`.
/// Throws ValidationError on a missing name or a shape mismatch.
void assign_parameters(const ParameterList& source, ParameterList& params);

/// Deep copies of every tensor (values only).
ParameterList snapshot(const ParameterList& params);

} // namespace protoens
