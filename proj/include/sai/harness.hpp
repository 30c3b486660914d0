// SPDX-License-Identifier: Apache-2.0
#pragma once

// Scenario runner: JSON experiment configs, long-format CSV results, SVG
// plots and summary reports.

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

#include "sai/aggregate.hpp"
#include "sai/experiments.hpp"
#include "sai/fedsim.hpp"
#include "sai/kltheory.hpp"

namespace sai::harness {

inline constexpr int kSchemaVersion = 1;

struct SweepAxes {
    std::vector<double> poison_rates{0.001, 0.005, 0.01, 0.02, 0.05, 0.10};
    std::vector<double> penalties{1.0, 2.0, 5.0, 10.0, 20.0};
    std::vector<int> malicious_counts{0, 1, 2};
    std::vector<double> remove_fracs{0.1, 0.3, 0.5, 0.7, 0.9};
    std::vector<aggregate::Rule> rules{aggregate::Rule::fedavg, aggregate::Rule::multi_krum, aggregate::Rule::freqfed,
                                       aggregate::Rule::mesas, aggregate::Rule::alignins};
    std::vector<fedsim::AttackerMode> attacker_modes{fedsim::AttackerMode::data_poison};
};

struct ExperimentConfig {
    int schema_version = kSchemaVersion;
    std::string scenario;
    std::uint64_t seed = 1;
    int n_seeds = 1;
    std::string out_dir = "out";

    corpus::CorpusConfig corpus;
    model::ModelConfig model;
    model::PretrainConfig pretrain;
    corpus::TargetSpec target;
    train::TrainConfig train;
    fedsim::FedConfig fed;
    experiments::DetectorConfig detector;
    kl::VerifyConfig kl;
    int eval_per_group = 200;
    int footprint_prompts = 100;
    int epochs_probe = 6;
    int direction_prompts = 200;
    SweepAxes sweep;

    /// Throws ConfigError on an unknown scenario, an empty sweep axis or an
    /// out-of-range field.
    void validate() const;
};

/// Registered scenario ids.
const std::vector<std::string>& scenarios();

/// Defaults for a scenario: adapter shape, epochs and axis values used by the
/// reference runs.
ExperimentConfig default_config(std::string_view scenario);

/// Parses a JSON config. Missing keys take the scenario defaults; unknown keys
/// and a schema version mismatch are errors.
ExperimentConfig parse_config(const std::string& text);
ExperimentConfig load_config(const std::filesystem::path& path);
std::string config_to_json(const ExperimentConfig& cfg);

// ---------------------------------------------------------------------------
// Results.

struct Row {
    std::string scenario;
    std::uint64_t seed = 0;
    std::string point;
    double x = 0.0;
    int step = 0;
    std::string metric;
    double value = 0.0;
};

void write_rows_header(std::ostream& out);
void write_rows(std::ostream& out, const std::vector<Row>& rows);
std::vector<Row> read_rows(std::istream& in);

/// Writes to a sibling temporary file and renames it into place.
void atomic_write(const std::filesystem::path& path, const std::string& content);

struct RunSummary {
    std::size_t rows = 0;
    std::filesystem::path results;
};

/// Runs every (seed, point) of the scenario on up to `jobs` threads, writes
/// points/*.csv, results.csv, plots and the summary report under `out`.
/// Seeds are cfg.seed .. cfg.seed + n_seeds - 1.
RunSummary run(const ExperimentConfig& cfg, const std::filesystem::path& out, int jobs = 1);

/// Reads results.csv under `out`, writes summary.csv, summary.txt and the
/// SVG plots, and returns the summary text.
std::string report(const std::filesystem::path& out);

struct Series {
    std::string name;
    std::vector<std::pair<double, double>> points;
};

/// Fixed-size SVG line chart with no timestamps or random ids.
std::string svg_line_plot(std::string_view title, std::string_view x_label, std::string_view y_label,
                          const std::vector<Series>& series);

/// Output directory: `flag` if nonempty, else $SAI_OUT, else `config_dir`.
std::filesystem::path resolve_out_dir(std::string_view flag, std::string_view config_dir);

}  // namespace sai::harness
