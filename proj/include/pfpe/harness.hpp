#pragma once

#include "pfpe/spectral.hpp"
#include "pfpe/td_engine.hpp"

#include <nlohmann/json.hpp>

#include <cstdint>
#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace pfpe::harness {

/// Malformed or inconsistent configuration (exit 64).
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Unreadable input or unwritable output (exit 74).
class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr int kExitOk = 0;
inline constexpr int kExitAllDiverged = 2;
inline constexpr int kExitConfig = 64;
inline constexpr int kExitSoftware = 70;
inline constexpr int kExitIo = 74;

struct EnvironmentSpec {
  enum class Kind { Builtin, RandomErgodic, Inline };

  Kind kind = Kind::Builtin;
  std::string builtin = "cycle2";  // baird | cycle2 | selfloop
  std::size_t n_states = 5;
  std::size_t n_actions = 2;
  std::uint64_t seed = 0;
  double r_max = 1.0;
  std::optional<double> gamma;
  nlohmann::json inline_mdp;
  /// Optional overrides: "pi", "mu" ("uniform", "random", "same", or a matrix) and "d" ("stationary", "uniform", or a vector).
  nlohmann::json distributions = nlohmann::json::object();
};

struct ApproximatorSpec {
  enum class Kind { Linear, Mlp };

  Kind kind = Kind::Linear;
  nlohmann::json features = "builtin";  // "builtin" | "one_hot" | table
  std::size_t hidden_width = 8;
  std::optional<std::vector<double>> initial;
};

struct SweepSpec {
  std::vector<std::uint64_t> k;
  std::vector<double> alpha;
  /// When set, each cell runs ceil(total_steps / k) target updates instead of run.n_target_updates.
  std::optional<std::uint64_t> total_steps;
};

struct SyntheticNorms {
  double j_fpe_norm = 0.85;
  double j_td_norm = 1.5;
  double lambda_h_star = 1.0;
};

struct AnalysisConfig {
  double alpha = 0.01;
  std::uint64_t k = 1;
  std::optional<std::vector<double>> center;
  double radius = 1.0;
  std::size_t samples = 128;
  std::size_t n_quad = 32;
  std::optional<double> sigma_delta;
  std::uint64_t k_max = 100;
  std::optional<SyntheticNorms> synthetic;
};

struct ExperimentConfig {
  EnvironmentSpec environment;
  ApproximatorSpec approximator;
  RunConfig run;
  std::optional<SweepSpec> sweep;
  std::vector<std::uint64_t> seeds{0};
  std::optional<AnalysisConfig> analysis;
};

ExperimentConfig config_from_json(const nlohmann::json& j);
nlohmann::json config_to_json(const ExperimentConfig& config);
ExperimentConfig load_config(const std::string& path);

/// Problem, initial parameters and (for linear features) the TD fixed point.
struct BuiltProblem {
  Problem problem;
  std::optional<Vector> initial_params;
  std::optional<Vector> fixed_point;
};

BuiltProblem build_problem(const ExperimentConfig& config);

/// Writes content to path via a temporary file in the same directory and a rename.
void write_atomic(const std::string& path, const std::string& content);

/// Runs fn(0..n-1) on up to jobs threads. Exceptions are rethrown after all threads join.
void parallel_for(std::size_t n, std::size_t jobs, const std::function<void(std::size_t)>& fn);

struct CommandOptions {
  std::string config_path;
  std::string out_path;
  std::size_t jobs = 1;
  std::optional<std::vector<std::uint64_t>> seeds;
};

struct BairdOptions {
  std::uint64_t k = 500;
  double alpha = 0.01;
  double gamma = 0.99;
  std::uint64_t steps = 250000;
  std::string out_path;
  std::size_t jobs = 1;
  std::optional<std::vector<std::uint64_t>> seeds;
};

int cmd_run(const CommandOptions& options);
int cmd_sweep(const CommandOptions& options);
int cmd_analyze(const CommandOptions& options);
int cmd_baird(const BairdOptions& options);

/// Config echo and metadata written next to a run CSV.
int run_experiment(const ExperimentConfig& config, const std::string& out_path, std::size_t jobs);

ExperimentConfig baird_preset(const BairdOptions& options);

std::vector<std::uint64_t> parse_seed_list(const std::string& csv);

/// Applies PFPE_LOG (trace, debug, info, warn, error, off) to the default logger.
void configure_logging();

std::string version();

}  // namespace pfpe::harness
