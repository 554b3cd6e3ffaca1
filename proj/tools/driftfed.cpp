// driftfed command-line front end.
//
//   driftfed run <config.json> [--out DIR]
//   driftfed calibrate <config.json> [--out DIR]
//   driftfed compare <DIR>
//
// Exit codes: 0 success, 1 runtime error, 2 config error.

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "CLI11.hpp"
#include "driftfed/errors.hpp"
#include "driftfed/experiment.hpp"

namespace fs = std::filesystem;
namespace ex = driftfed::experiment;

namespace {

constexpr int kOk = 0;
constexpr int kRuntimeError = 1;
constexpr int kConfigError = 2;

ex::ExperimentConfig load(const std::string& path) {
  auto config = ex::load_config(path);
  if (const char* seed = std::getenv("DRIFTFED_SEED"); seed && *seed)
    ex::override_seed(config, seed);
  return config;
}

int cmd_run(const std::string& config_path, const std::string& out_override) {
  const auto config = load(config_path);
  const fs::path out = out_override.empty() ? fs::path(config.output_dir) : fs::path(out_override);
  const auto reports = ex::run_experiment(config, out);
  for (const auto& r : reports) {
    std::cout << r.strategy << ": mean F1 "
              << ex::format_double(r.mean_f1(r.training_months, r.months)) << ", "
              << r.retraining_months.size() << " retraining months, " << r.ledger.total()
              << " bytes\n";
    for (const auto& w : r.warnings) std::cerr << "warning [" << r.strategy << "]: " << w << '\n';
  }
  std::cout << "reports written to " << out.string() << '\n';
  return kOk;
}

int cmd_calibrate(const std::string& config_path, const std::string& out_override) {
  const auto config = load(config_path);
  const fs::path out = out_override.empty() ? fs::path(config.output_dir) : fs::path(out_override);
  const auto result = ex::calibrate(config);
  fs::create_directories(out);
  {
    std::ofstream f(out / ex::kCalibrationFile, std::ios::binary | std::ios::trunc);
    if (!f) throw driftfed::Error("cannot write '" + (out / ex::kCalibrationFile).string() + "'");
    f << ex::calibration_json(result);
  }
  int status = kOk;
  for (const auto& d : result.detectors) {
    if (d.selected) {
      std::cout << "selected " << d.selected->describe() << '\n';
      continue;
    }
    status = kRuntimeError;
    std::cerr << "error: no " << driftfed::fed::to_string(d.detector)
              << " setting is silent on months [" << result.first_month << ", "
              << result.last_month << "); best candidates:\n";
    auto best = d.candidates;
    std::stable_sort(best.begin(), best.end(),
                     [](const auto& a, const auto& b) { return a.detections < b.detections; });
    for (std::size_t i = 0; i < best.size() && i < 3; ++i)
      std::cerr << "  " << best[i].describe() << '\n';
  }
  std::cout << "calibration written to " << (out / ex::kCalibrationFile).string() << '\n';
  return status;
}

int cmd_compare(const std::string& dir) {
  const auto rows = ex::compare_reports(dir);
  ex::write_comparison_text(std::cout, rows);
  const fs::path csv = fs::path(dir) / ex::kComparisonFile;
  std::ofstream f(csv, std::ios::binary | std::ios::trunc);
  if (!f) throw driftfed::Error("cannot write '" + csv.string() + "'");
  ex::write_comparison_csv(f, rows);
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"driftfed: concept-drift detection and federated learning simulator"};
  app.require_subcommand(1);

  std::string config_path, out_dir, compare_dir;
  auto* run = app.add_subcommand("run", "run every strategy in a config and write reports");
  run->add_option("config", config_path, "experiment config (JSON)")->required();
  run->add_option("--out", out_dir, "output directory (overrides output_dir)");

  auto* cal = app.add_subcommand("calibrate", "grid-search detector settings on stationary months");
  cal->add_option("config", config_path, "experiment config (JSON)")->required();
  cal->add_option("--out", out_dir, "output directory (overrides output_dir)");

  auto* cmp = app.add_subcommand("compare", "tabulate the strategy reports under a directory");
  cmp->add_option("dir", compare_dir, "directory written by `driftfed run`")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kConfigError;
  }

  try {
    if (*run) return cmd_run(config_path, out_dir);
    if (*cal) return cmd_calibrate(config_path, out_dir);
    return cmd_compare(compare_dir);
  } catch (const driftfed::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kConfigError;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kRuntimeError;
  }
}
