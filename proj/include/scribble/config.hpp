#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "scribble/grid.hpp"
#include "scribble/training.hpp"

namespace scribble::cli {

// Contents of a training config file. Relative paths resolve against the
// file's directory.
struct CliConfig {
    training::TrainConfig train;
    std::filesystem::path data;  // dataset manifest
    std::filesystem::path out = "run";
    Precision precision = Precision::f32;
};

// `key = value` lines, '#' comments, blank lines ignored. Unknown keys,
// repeated keys and malformed values are ConfigErrors naming the line.
CliConfig parse_config(const std::string& text, const std::filesystem::path& base_dir = {});
CliConfig load_config(const std::filesystem::path& path);

// Every key with its default, one `key = value` line each.
std::string format_config(const CliConfig& config);
std::vector<std::string> config_keys();

}  // namespace scribble::cli
