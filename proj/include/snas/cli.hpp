// Command-line front end: flat `key = value` run configuration, dataset
// assembly and the subcommands of the `snas` tool.
#pragma once

#include <filesystem>
#include <map>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "snas/data.hpp"
#include "snas/trainer.hpp"

namespace snas {

class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

enum class DatasetKind { planted, cifar };
enum class Precision { f32, f64 };

struct RunConfig {
    DatasetKind dataset = DatasetKind::planted;
    Precision precision = Precision::f32;
    std::filesystem::path out_dir = "runs/default";

    // planted
    PlantedTaskConfig planted = planted_defaults();

    // cifar
    std::filesystem::path data_dir;
    std::size_t take = 0;      // training images read, 0 = all
    std::size_t resize = 8;    // image side after downsampling
    double val_fraction = 0.2;

    NetworkConfig network = planted_defaults().network;
    TrainConfig train = planted_train_defaults();

    RunConfig();
};

/// Every key the parser accepts, in rendering order.
const std::vector<std::string>& config_keys();

/// Applies one `key = value` setting; unknown keys and malformed values
/// throw ConfigError naming the key.
void apply_setting(RunConfig& config, const std::string& key, const std::string& value);

/// Parses config text: one `key = value` per line, `#` starts a comment.
/// `source` names the origin in error messages.
std::vector<std::pair<std::string, std::string>> parse_config_text(const std::string& text,
                                                                   const std::string& source = "config");

/// Fully resolved configuration in the same format, one line per key.
std::string render_config(const RunConfig& config);

/// Settings from SNAS_<KEY> environment variables (key upper-cased).
std::vector<std::pair<std::string, std::string>> environment_settings();

/// Cross-field checks after all settings are applied.
void validate_config(const RunConfig& config);

struct RunData {
    Dataset train;
    Dataset val;
    Genotype planted_genotype;  // empty unless the dataset is planted
    Normalization normalization;  // cifar only, from the loaded subset
};

/// Builds the search train/validation splits described by `config`.
RunData load_run_data(const RunConfig& config);

/// Runs the `snas` tool; returns the process exit code.
int run_cli(int argc, char** argv);

namespace exit_code {
inline constexpr int ok = 0;
inline constexpr int verify_failed = 1;
inline constexpr int config = 2;
inline constexpr int data = 3;
inline constexpr int numerical = 4;
}  // namespace exit_code

}  // namespace snas
