#include "pfpe/errors.hpp"
#include "pfpe/harness.hpp"

#include <CLI11.hpp>
#include <spdlog/spdlog.h>

#include <iostream>

namespace {

using namespace pfpe::harness;

int guarded(const std::function<int()>& body) {
  try {
    return body();
  } catch (const ConfigError& e) {
    spdlog::error("config: {}", e.what());
    return kExitConfig;
  } catch (const IoError& e) {
    spdlog::error("io: {}", e.what());
    return kExitIo;
  } catch (const std::exception& e) {
    spdlog::error("{}", e.what());
    return kExitSoftware;
  }
}

}  // namespace

int main(int argc, char** argv) {
  configure_logging();

  CLI::App app{"Partially fitted policy evaluation: runs, sweeps and spectral stability reports"};
  app.set_version_flag("--version", version());
  app.require_subcommand(1);

  CommandOptions common;
  std::string seeds_csv;
  const auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", common.config_path, "experiment config (JSON)")->required();
    sub->add_option("--out", common.out_path, "output path")->required();
    sub->add_option("--jobs", common.jobs, "concurrent runs")->check(CLI::PositiveNumber);
    sub->add_option("--seeds", seeds_csv, "comma-separated seeds overriding the config");
  };

  auto* run = app.add_subcommand("run", "execute the configured run for every seed, write the trace CSV");
  add_common(run);
  auto* sweep = app.add_subcommand("sweep", "run the k x alpha x seed grid with stability predictions");
  add_common(sweep);
  auto* analyze = app.add_subcommand("analyze", "write the spectral report JSON and condition curve CSV");
  add_common(analyze);

  BairdOptions baird_opts;
  auto* baird = app.add_subcommand("baird", "Baird star problem preset");
  baird->add_option("--k", baird_opts.k, "inner steps per target update");
  baird->add_option("--alpha", baird_opts.alpha, "constant step size");
  baird->add_option("--gamma", baird_opts.gamma, "discount");
  baird->add_option("--steps", baird_opts.steps, "total inner steps");
  baird->add_option("--out", baird_opts.out_path, "output CSV")->required();
  baird->add_option("--jobs", baird_opts.jobs, "concurrent runs")->check(CLI::PositiveNumber);
  baird->add_option("--seeds", seeds_csv, "comma-separated seeds (default 0,1,2,3,4)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitConfig;
  }

  return guarded([&] {
    if (!seeds_csv.empty()) {
      common.seeds = parse_seed_list(seeds_csv);
      baird_opts.seeds = common.seeds;
    }
    if (*run) return cmd_run(common);
    if (*sweep) return cmd_sweep(common);
    if (*analyze) return cmd_analyze(common);
    return cmd_baird(baird_opts);
  });
}
