#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "json.hpp"

#include "cosgate/densenet.hpp"
#include "cosgate/gate.hpp"
#include "cosgate/gridworld.hpp"
#include "cosgate/landscapes.hpp"
#include "cosgate/rng.hpp"

namespace cosgate::harness {

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

enum class ExperimentKind { Toy, Prop3, Gridworld, Mnist, Highdim };

std::string_view to_string(ExperimentKind kind);
ExperimentKind parse_kind(std::string_view text);

/// Descent sweeps over random inits. Each gate mode is one row of the comparison:
/// off = main gradient only, always_on = plain sum (lambda 1), weighted / unweighted = gated.
struct ToyParams {
    std::string main = "L1";
    std::string aux = "V";
    std::vector<GateMode> modes{GateMode::Off, GateMode::AlwaysOn, GateMode::Weighted, GateMode::Unweighted};
    double lambda = 1.0;
    double threshold = 0.0;
    std::size_t inits = 100;
    std::size_t steps = 600;
    double alpha = 0.01;
    double level = 0.1;
    double init_lo = -3.0;
    double init_hi = 3.0;
    double min_radius_sq = 0.1;

    bool operator==(const ToyParams&) const = default;
};

struct Prop3Params {
    double a = 1.0;
    std::size_t points_per_segment = 100000;

    bool operator==(const Prop3Params&) const = default;
};

struct GridworldParams {
    std::size_t pairs = 50;
    std::size_t steps = 10000;
    std::vector<double> temperatures{0.0, 0.1, 1.0};
    std::vector<grid::TrainMethod> methods{grid::TrainMethod::Reward, grid::TrainMethod::Distill,
                                           grid::TrainMethod::Add, grid::TrainMethod::CosWeighted,
                                           grid::TrainMethod::CosUnweighted};
    bool same_task = false;
    std::size_t transitions = 50000;
    double wall_prob = 0.15;
    bool discounted = true;
    std::size_t eval_every = 500;
    std::size_t eval_episodes = 100;
    double ema_decay = 0.0;

    bool operator==(const GridworldParams&) const = default;
};

struct MnistParams {
    int rotation = 0;
    dense::TrainMode mode = dense::TrainMode::Gated;
    int epochs = 50;
    int batch = 128;
    double train_frac = 1.0;
    std::string data_dir = "data/mnist";
    GateMode gate = GateMode::Unweighted;
    double threshold = 0.0;
    double ema_decay = 0.0;
    bool per_layer = false;
    bool accumulate_main_only = false;

    bool operator==(const MnistParams&) const = default;
};

struct HighdimParams {
    std::vector<std::size_t> dims{10, 100, 1000, 10000};
    std::size_t pairs = 1000;
    double sigma = 1.0;          // scale of the independent pairs
    std::vector<double> noise{1.0};  // corruption levels for the shared-mean pairs

    bool operator==(const HighdimParams&) const = default;
};

struct ExperimentConfig {
    ExperimentKind kind = ExperimentKind::Toy;
    std::uint64_t seed = 0;
    std::string out = "runs";
    ToyParams toy;
    Prop3Params prop3;
    GridworldParams gridworld;
    MnistParams mnist;
    HighdimParams highdim;

    bool operator==(const ExperimentConfig&) const = default;
};

/// Parse or validation failure. `line` is 1-based, 0 when unknown.
class ConfigError : public std::runtime_error {
public:
    ConfigError(const std::string& message, int line = 0);
    int line() const { return line_; }

private:
    int line_;
};

/// Flat YAML mapping: `kind`, `seed`, `out`, then the keys of that kind's block.
/// Missing keys take defaults; unknown keys and out-of-range values are rejected.
ExperimentConfig parse_config_text(const std::string& text);
ExperimentConfig parse_config(const std::filesystem::path& path);

/// Writes the common keys and every key of the active block; parse_config_text inverts it.
std::string to_yaml(const ExperimentConfig& config);

/// Checks ranges; throws ConfigError.
void validate(const ExperimentConfig& config);

// ---------------------------------------------------------------------------
// CSV
// ---------------------------------------------------------------------------

enum class ColumnType { Integer, Real, Text };

struct Column {
    std::string name;
    ColumnType type = ColumnType::Real;
};

using Schema = std::vector<Column>;
/// monostate is written as an empty field.
using Value = std::variant<std::monostate, std::int64_t, double, std::string>;
using Record = std::vector<Value>;

class SchemaError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

class OutputError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Shortest text that reads back to the same double: 17 significant digits, '.' separator.
std::string format_real(double x);

/// Header plus one line per record; quotes text fields only when needed. Throws
/// SchemaError if any record has the wrong width or a value of the wrong type.
std::string to_csv(const std::vector<Record>& records, const Schema& schema);

/// Validates everything before opening `path`.
void emit_csv(const std::vector<Record>& records, const Schema& schema, const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// Run records
// ---------------------------------------------------------------------------

struct RunRecord {
    std::string run_id;
    std::string kind;
    std::uint64_t seed = 0;
    std::string config_hash;
    std::string started;
    std::string finished;
    std::vector<std::string> artifacts;  // relative to the run directory
    std::string code_version;

    nlohmann::json to_json() const;
};

/// FNV-1a 64 of the serialized config, as 16 hex digits.
std::string config_hash(const ExperimentConfig& config);

/// "<kind>-s<seed>-<n>" with the smallest n >= 1 not yet used under `out_dir`.
std::string next_run_id(const std::filesystem::path& out_dir, const ExperimentConfig& config);

std::string code_version();

// ---------------------------------------------------------------------------
// High-dimensional cosine study
// ---------------------------------------------------------------------------

struct CosineSummary {
    std::size_t n = 0;
    double mean = 0.0;
    double median = 0.0;
    double mean_abs = 0.0;
    double median_abs = 0.0;
};

CosineSummary summarize(std::vector<double> cosines);

/// n independent pairs theta_1, theta_2 ~ N(0, sigma^2 I_d).
CosineSummary random_cosine_stats(std::size_t d, std::size_t n, double sigma, Rng& rng);

/// Per pair: mu ~ N(0, I_d); theta_i ~ N(mu, sigma^2 I_d).
CosineSummary corrupted_cosine_stats(std::size_t d, std::size_t n, double sigma, Rng& rng);

// ---------------------------------------------------------------------------
// Experiments
// ---------------------------------------------------------------------------

struct ToyRun {
    GateMode mode = GateMode::Off;
    std::size_t init = 0;
    landscape::TrajectoryRecord trajectory;
};

struct ToySummary {
    GateMode mode = GateMode::Off;
    std::size_t runs = 0;
    std::size_t converged = 0;
    std::size_t diverged = 0;
    std::optional<double> median_convergence;  // over converged runs
};

struct ToyResult {
    std::vector<landscape::Point> inits;
    std::vector<ToyRun> runs;
    std::vector<ToySummary> summary;
};

ToyResult run_toy(const ToyParams& params, std::uint64_t seed);

struct Prop3Result {
    double gated_a = 0.0;
    double gated_b = 0.0;
    double control_a = 0.0;  // grad L1 on the same paths
    double control_b = 0.0;
};

/// Path A: (0,0) -> (0,2) -> (2,2). Path B: (0,0) -> (2,0) -> (2,2).
Prop3Result run_prop3(const Prop3Params& params);

grid::ExperimentSpec gridworld_spec(const GridworldParams& params, std::uint64_t seed);

struct MnistData {
    dense::Dataset train;
    dense::Dataset aux;
    dense::Dataset test;
};

/// Loads the four standard IDX files from `data_dir`, keeps the first
/// round(train_frac * N) training examples and rotates them for the aux task.
MnistData load_mnist(const MnistParams& params);

dense::MnistTrainConfig mnist_train_config(const MnistParams& params, std::uint64_t seed);

struct HighdimRow {
    std::string study;  // "random" or "corrupted"
    std::size_t d = 0;
    double sigma = 0.0;
    CosineSummary stats;
};

std::vector<HighdimRow> run_highdim(const HighdimParams& params, std::uint64_t seed);

/// One row per step: step, raw_cos, smoothed_cos, weight.
Schema gate_decision_schema();
std::vector<Record> gate_decision_records(const std::vector<GateDecision>& decisions);

/// CSV bodies for each experiment, exposed so the exact bytes can be compared.
Schema trajectory_schema();
std::vector<Record> trajectory_records(const ToyResult& result);
Schema toy_summary_schema();
std::vector<Record> toy_summary_records(const ToyResult& result);
Schema prop3_schema();
std::vector<Record> prop3_records(const Prop3Result& result);
Schema gridworld_trial_schema();
std::vector<Record> gridworld_trial_records(const grid::ExperimentResult& result);
Schema gridworld_aggregate_schema();
std::vector<Record> gridworld_aggregate_records(const grid::ExperimentResult& result);
Schema mnist_schema();
std::vector<Record> mnist_records(const dense::MnistTrainResult& result);
Schema highdim_schema();
std::vector<Record> highdim_records(const std::vector<HighdimRow>& rows);

/// Runs the configured experiment, writes its CSVs, the resolved config and
/// run.json under <out>/<run_id>/, and returns the record.
RunRecord run(const ExperimentConfig& config);

}  // namespace cosgate::harness
