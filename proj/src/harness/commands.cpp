#include "pfpe/errors.hpp"
#include "pfpe/harness.hpp"

#include <spdlog/spdlog.h>

#include <atomic>
#include <cmath>
#include <cstdlib>
#include <exception>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <sstream>
#include <thread>
#include <unistd.h>

#ifndef PFPE_VERSION
#define PFPE_VERSION "0.1.0+unknown"
#endif

namespace pfpe::harness {

namespace fs = std::filesystem;
using nlohmann::json;

std::string version() { return PFPE_VERSION; }

void configure_logging() {
  const char* level = std::getenv("PFPE_LOG");
  spdlog::set_level(level ? spdlog::level::from_str(level) : spdlog::level::warn);
}

void write_atomic(const std::string& path, const std::string& content) {
  const fs::path target(path);
  fs::path tmp = target;
  tmp += ".tmp." + std::to_string(::getpid());
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open '" + tmp.string() + "' for writing");
    out << content;
    out.flush();
    if (!out) {
      std::error_code ignored;
      fs::remove(tmp, ignored);
      throw IoError("write to '" + tmp.string() + "' failed");
    }
  }
  std::error_code ec;
  fs::rename(tmp, target, ec);
  if (ec) {
    std::error_code ignored;
    fs::remove(tmp, ignored);
    throw IoError("cannot move output into place at '" + path + "': " + ec.message());
  }
}

void parallel_for(std::size_t n, std::size_t jobs, const std::function<void(std::size_t)>& fn) {
  jobs = std::max<std::size_t>(1, std::min(jobs, n));
  if (jobs == 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  std::vector<std::thread> pool;
  pool.reserve(jobs);
  for (std::size_t t = 0; t < jobs; ++t) {
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < n; i = next++) {
        try {
          fn(i);
        } catch (...) {
          std::lock_guard<std::mutex> lock(failure_mutex);
          if (!failure) failure = std::current_exception();
        }
      }
    });
  }
  for (auto& th : pool) th.join();
  if (failure) std::rethrow_exception(failure);
}

std::vector<std::uint64_t> parse_seed_list(const std::string& csv) {
  std::vector<std::uint64_t> seeds;
  std::stringstream ss(csv);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    std::size_t used = 0;
    unsigned long long value = 0;
    try {
      value = std::stoull(item, &used);
    } catch (const std::exception&) {
      throw ConfigError("invalid seed '" + item + "'");
    }
    if (used != item.size()) throw ConfigError("invalid seed '" + item + "'");
    seeds.push_back(value);
  }
  if (seeds.empty()) throw ConfigError("seed list is empty");
  return seeds;
}

namespace {

constexpr const char* kFittedErrorConvention =
    "td_error_norm is ||delta(w_bar_l, w_bar_l)||, the exact expected TD vector at the target parameters; "
    "param_norm is ||w_bar_l||";

RunConfig cell_config(const ExperimentConfig& config, const BuiltProblem& built, std::uint64_t seed) {
  RunConfig rc = config.run;
  rc.seed = seed;
  rc.initial_params = built.initial_params;
  rc.fixed_point = built.fixed_point;
  return rc;
}

std::string meta_path(const std::string& out) { return out + ".meta.json"; }

}  // namespace

int run_experiment(const ExperimentConfig& config, const std::string& out_path, std::size_t jobs) {
  const BuiltProblem built = build_problem(config);
  const std::size_t n = config.seeds.size();
  std::vector<RunTrace> traces(n);
  parallel_for(n, jobs, [&](std::size_t i) {
    traces[i] = run_pfpe_collect(built.problem, cell_config(config, built, config.seeds[i]));
    spdlog::info("seed {}: {} rows, diverged={}", config.seeds[i], traces[i].rows.size(), traces[i].diverged);
  });

  std::ostringstream csv;
  csv << kTraceCsvHeader << '\n';
  std::size_t diverged = 0;
  json per_seed = json::array();
  for (std::size_t i = 0; i < n; ++i) {
    write_trace_csv(csv, std::to_string(i), config.seeds[i], config.run.k, traces[i]);
    diverged += traces[i].diverged ? 1 : 0;
    per_seed.push_back({{"run_id", std::to_string(i)},
                        {"seed", config.seeds[i]},
                        {"diverged", traces[i].diverged},
                        {"steps", traces[i].steps_executed()}});
  }
  const json meta = {{"version", version()},
                     {"config", config_to_json(config)},
                     {"fitted_error", kFittedErrorConvention},
                     {"runs", per_seed}};
  write_atomic(out_path, csv.str());
  write_atomic(meta_path(out_path), meta.dump(2) + "\n");
  return diverged == n ? kExitAllDiverged : kExitOk;
}

int cmd_run(const CommandOptions& options) {
  ExperimentConfig config = load_config(options.config_path);
  if (options.seeds) config.seeds = *options.seeds;
  return run_experiment(config, options.out_path, options.jobs);
}

int cmd_sweep(const CommandOptions& options) {
  ExperimentConfig config = load_config(options.config_path);
  if (options.seeds) config.seeds = *options.seeds;
  if (!config.sweep) throw ConfigError("sweep command needs a \"sweep\" section");
  const BuiltProblem built = build_problem(config);
  const SweepSpec& sweep = *config.sweep;

  struct Pair {
    std::uint64_t k;
    double alpha;
  };
  std::vector<Pair> pairs;
  for (auto k : sweep.k)
    for (auto a : sweep.alpha) pairs.push_back({k, a});

  // Prediction per (k, alpha); sigma_delta does not enter the condition value.
  std::vector<SpectralReport> predictions(pairs.size());
  parallel_for(pairs.size(), options.jobs, [&](std::size_t i) {
    AnalysisSpec spec;
    spec.alpha = pairs[i].alpha;
    spec.k = pairs[i].k;
    spec.sigma_delta = 0.0;
    if (config.analysis) {
      spec.radius = config.analysis->radius;
      spec.samples = config.analysis->samples;
      spec.n_quad = config.analysis->n_quad;
      if (config.analysis->center) {
        spec.center = Eigen::Map<const Vector>(config.analysis->center->data(),
                                               static_cast<Eigen::Index>(config.analysis->center->size()));
      }
    }
    predictions[i] = analyze(built.problem, spec);
  });

  const std::size_t n_seeds = config.seeds.size();
  std::vector<RunTrace> traces(pairs.size() * n_seeds);
  parallel_for(traces.size(), options.jobs, [&](std::size_t cell) {
    const Pair& pr = pairs[cell / n_seeds];
    RunConfig rc = cell_config(config, built, config.seeds[cell % n_seeds]);
    rc.k = pr.k;
    rc.schedule.alpha0 = pr.alpha;
    if (sweep.total_steps) rc.n_target_updates = (*sweep.total_steps + pr.k - 1) / pr.k;
    traces[cell] = run_pfpe_collect(built.problem, rc);
  });

  std::ostringstream csv;
  csv.precision(12);
  csv << "k,alpha,seed,final_td_error_norm,final_dist_to_fixed_point,diverged,steps,condition_value,"
         "predicted_stable\n";
  std::size_t agree = 0;
  std::size_t all_diverged = 0;
  for (std::size_t cell = 0; cell < traces.size(); ++cell) {
    const Pair& pr = pairs[cell / n_seeds];
    const SpectralReport& pred = predictions[cell / n_seeds];
    const RunTrace& tr = traces[cell];
    const TraceRow& last = tr.rows.back();
    const bool stable = pred.predicted_stable();
    agree += (stable == !tr.diverged) ? 1 : 0;
    all_diverged += tr.diverged ? 1 : 0;
    csv << pr.k << ',' << pr.alpha << ',' << config.seeds[cell % n_seeds] << ',' << last.td_error_norm << ','
        << last.dist_to_fixed_point << ',' << (tr.diverged ? 1 : 0) << ',' << tr.steps_executed() << ',';
    if (pred.condition_value) {
      csv << *pred.condition_value;
    } else {
      csv << "nan";
    }
    csv << ',' << (stable ? 1 : 0) << '\n';
  }
  csv << "# agreement_rate," << static_cast<double>(agree) / static_cast<double>(traces.size()) << '\n';

  write_atomic(options.out_path, csv.str());
  return all_diverged == traces.size() ? kExitAllDiverged : kExitOk;
}

int cmd_analyze(const CommandOptions& options) {
  const ExperimentConfig config = load_config(options.config_path);
  if (!config.analysis) throw ConfigError("analyze command needs an \"analysis\" section");
  const AnalysisConfig& ac = *config.analysis;

  SpectralReport report;
  if (ac.synthetic) {
    report = synthetic_report(ac.alpha, ac.k, ac.synthetic->lambda_h_star, ac.synthetic->j_td_norm,
                              ac.synthetic->j_fpe_norm, ac.sigma_delta);
  } else {
    const BuiltProblem built = build_problem(config);
    AnalysisSpec spec;
    spec.alpha = ac.alpha;
    spec.k = ac.k;
    if (ac.center) {
      if (ac.center->size() != built.problem.approx->param_dim()) {
        throw ConfigError("analysis.center has the wrong dimension");
      }
      spec.center = Eigen::Map<const Vector>(ac.center->data(), static_cast<Eigen::Index>(ac.center->size()));
    }
    spec.radius = ac.radius;
    spec.samples = ac.samples;
    spec.n_quad = ac.n_quad;
    spec.sigma_delta = ac.sigma_delta;
    spec.seed = config.seeds.front();
    spec.clip = config.run.clip;
    report = analyze(built.problem, spec);
  }

  std::ostringstream curve;
  curve.precision(12);
  curve << "k,condition_value\n";
  if (report.lambda_h_star && report.j_td_norm_star && report.j_fpe_norm_star) {
    for (std::uint64_t k = 1; k <= ac.k_max; ++k) {
      curve << k << ','
            << condition_function(ac.alpha, k, *report.lambda_h_star, *report.j_td_norm_star,
                                  *report.j_fpe_norm_star)
            << '\n';
    }
  }
  json doc = report_to_json(report);
  doc["version"] = version();
  fs::path curve_path(options.out_path);
  curve_path.replace_extension("");
  curve_path += ".condition.csv";
  write_atomic(options.out_path, doc.dump(2) + "\n");
  write_atomic(curve_path.string(), curve.str());
  return kExitOk;
}

ExperimentConfig baird_preset(const BairdOptions& options) {
  if (options.k < 1) throw ConfigError("--k must be at least 1");
  if (!(options.alpha > 0.0)) throw ConfigError("--alpha must be positive");
  if (!(options.gamma >= 0.0 && options.gamma < 1.0)) throw ConfigError("--gamma must lie in [0, 1)");
  if (options.steps < 1) throw ConfigError("--steps must be at least 1");
  ExperimentConfig config;
  config.environment.kind = EnvironmentSpec::Kind::Builtin;
  config.environment.builtin = "baird";
  config.environment.gamma = options.gamma;
  config.approximator.kind = ApproximatorSpec::Kind::Linear;
  config.run.schedule = StepSizeSchedule::constant(options.alpha);
  config.run.k = options.k;
  config.run.n_target_updates = (options.steps + options.k - 1) / options.k;
  config.seeds = options.seeds.value_or(std::vector<std::uint64_t>{0, 1, 2, 3, 4});
  return config;
}

int cmd_baird(const BairdOptions& options) {
  return run_experiment(baird_preset(options), options.out_path, options.jobs);
}

}  // namespace pfpe::harness
