#pragma once

#include "protoens/ensemble.hpp"
#include "protoens/finetune.hpp"
#include "protoens/trainer.hpp"

#include <filesystem>
#include <optional>
#include <string>

namespace protoens {

/// Everything a CLI run needs, read from a key=value text file:
///
///   # comment
///   member = cnn,euclidean,attention    (repeatable; replaces the defaults)
///   combine = average
///   train_iterations = 30000
///
/// Blank lines and '#' comments are ignored. Unknown keys are errors.
/// Defaults follow the reference training setup (batch 4, query 20,
/// 30000 iterations, validation every 2000, lr 0.1, weight decay 1e-5).
struct RunConfig {
    ModelConfig model;
    TrainConfig train;
    EvalConfig eval;
    std::optional<FineTuneConfig> finetune;

    void validate() const;
    /// Serialises every key, in the format parse_run_config reads.
    std::string to_text() const;
};

RunConfig parse_run_config(const std::string& text);
RunConfig load_run_config(const std::filesystem::path& path);

} // namespace protoens
