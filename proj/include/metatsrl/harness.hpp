#pragma once

// Experiment configuration, execution over (instance, run, algorithm)
// cells, regret metrics and file outputs.

#include <cstdint>
#include <iosfwd>
#include <memory>
#include <string>
#include <vector>

#include <json.hpp>

#include "metatsrl/envs.hpp"
#include "metatsrl/meta.hpp"

namespace metatsrl {

inline const std::vector<std::string>& known_algorithms() {
    static const std::vector<std::string> names = {"rlsvi",      "tsbd-meta",   "mtsrl",
                                                   "mtsrl_plus", "meta_oracle", "tsrl_true_prior"};
    return names;
}

struct ExperimentConfig {
    std::string env_kind = "synthetic";  ///< synthetic | recommendation
    SyntheticParams synthetic;
    RecommendationParams recommendation;
    std::optional<double> lambda0_bound;
    std::vector<std::string> algorithms;
    MetaConfig meta;  ///< K, N, agent and meta-learning parameters
    int instances = 1;
    int runs_per_instance = 1;
    std::uint64_t seed = 0;
    std::string output_dir = "out";
    bool write_meta_runs = true;
};

/// Parses and validates a config document. Unknown fields and invalid
/// values raise ConfigError naming the JSON path.
ExperimentConfig parse_config(const nlohmann::json& doc);
/// Normalized document; parse_config(config_to_json(c)) reproduces c.
nlohmann::json config_to_json(const ExperimentConfig& cfg);
ExperimentConfig load_config(const std::string& path);

/// Applies `path.to.field=value`; the value is parsed as JSON when it is
/// valid JSON and taken as a string otherwise.
void apply_override(nlohmann::json& doc, const std::string& assignment);

struct RawRow {
    std::string algorithm;
    int instance = 0;
    int run = 0;
    int task = 0;
    int episode = 0;
    double reward_sum = 0.0;
    double oracle_value = 0.0;

    bool operator==(const RawRow&) const = default;
};

struct CurvePoint {
    std::string algorithm;
    int task = 0;
    double mean = 0.0;
    double stderr_ = 0.0;
};

/// Cumulative over tasks of (oracle task reward - algorithm task reward),
/// averaged over (instance, run) cells, pairing rows by (instance, run,
/// task, episode). Throws MissingOracle without meta_oracle rows.
std::vector<CurvePoint> meta_regret_curve(const std::vector<RawRow>& rows, const std::string& algorithm);

/// Per task, sum over episodes of (oracle_value - reward_sum), averaged
/// over (instance, run) cells.
std::vector<CurvePoint> bayes_regret_curve(const std::vector<RawRow>& rows, const std::string& algorithm);

void write_raw_csv(const std::string& path, const std::vector<RawRow>& rows);
std::vector<RawRow> read_raw_csv(const std::string& path);
void write_curves_csv(const std::string& path, const std::vector<CurvePoint>& points);

/// Writes `text` to a temporary sibling and renames it over `path`.
void write_file_atomic(const std::string& path, const std::string& text);

struct RunOptions {
    int jobs = 1;
    bool quiet = true;
    std::ostream* progress = nullptr;
    bool write_files = true;
};

struct CellResult {
    std::string algorithm;
    int instance = 0;
    int run = 0;
    MetaRunReport report;
};

struct ExperimentResult {
    std::vector<RawRow> rows;
    std::vector<CellResult> cells;
    nlohmann::json summary;
};

/// Task source of an instance: the synthetic family or the recommendation
/// gamma stream is drawn from the instance seed.
/// A recommendation space can be passed in to share it across instances.
std::shared_ptr<TaskSource> make_source(const ExperimentConfig& cfg, int instance,
                                        std::shared_ptr<const RecommendationSpace> space = nullptr);

/// Stream handed to every algorithm of an (instance, run) cell.
RngStream run_stream(const ExperimentConfig& cfg, int instance, int run);

MetaRunReport run_algorithm(const std::string& algorithm, const MetaConfig& meta, const TaskSource& source,
                            const RngStream& rng);

ExperimentResult run_experiment(const ExperimentConfig& cfg, const RunOptions& options = {});

/// raw.csv, summary.json and both curve files in `dir`.
void write_outputs(const ExperimentResult& result, const std::string& dir);

/// Curves and aggregates from raw rows alone.
nlohmann::json summarize(const std::vector<RawRow>& rows, const std::vector<std::string>& algorithms);

}  // namespace metatsrl
