#pragma once

// Experiment configuration, report files, strategy comparison and detector
// calibration. Everything the `driftfed` CLI does lives here so that it can be
// tested without spawning processes.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "driftfed/federation.hpp"

namespace driftfed::experiment {

inline constexpr std::string_view kConfigSchema = "driftfed.experiment/1";
inline constexpr std::string_view kReportSchema = "driftfed.report/1";
inline constexpr std::string_view kCalibrationSchema = "driftfed.calibration/1";

struct CalibrationGrid {
  int first_month = 0;  // calibration months [first_month, last_month)
  int last_month = 0;   // 0: use the training months
  std::vector<detect::AdwinParams> adwin;
  std::vector<detect::PhtParams> pht;
  std::vector<detect::KswinParams> kswin;

  static CalibrationGrid defaults();
};

struct ExperimentConfig {
  fed::SimulationConfig sim;
  std::vector<fed::Strategy> strategies;
  std::string output_dir = "driftfed-out";
  CalibrationGrid calibration;
  std::string echo;  // normalized JSON of the parsed document
};

/// Parses and validates a config document. Throws ConfigError whose message
/// names the JSON field (or line and column for syntax errors).
ExperimentConfig parse_config(std::string_view text);
ExperimentConfig load_config(const std::filesystem::path& path);

/// Replaces the seed (e.g. from DRIFTFED_SEED). Throws ConfigError when
/// `value` is not an unsigned integer.
void override_seed(ExperimentConfig& config, std::string_view value);

// ---------------------------------------------------------------------------
// Reports

inline constexpr const char* kReportFile = "report.json";
inline constexpr const char* kF1File = "f1_by_month.csv";
inline constexpr const char* kLedgerFile = "ledger.csv";
inline constexpr const char* kComparisonFile = "comparison.csv";
inline constexpr const char* kCalibrationFile = "calibration.json";

/// Shortest round-trip decimal form of a double.
std::string format_double(double v);

void write_f1_csv(std::ostream& out, const fed::SimulationReport& report);
void write_ledger_csv(std::ostream& out, const fed::ByteLedger& ledger);
std::string report_json(const fed::SimulationReport& report, const ExperimentConfig& config);

/// Writes report.json, f1_by_month.csv and ledger.csv into `dir`.
void write_report_files(const fed::SimulationReport& report, const ExperimentConfig& config,
                        const std::filesystem::path& dir);

/// Runs every strategy and writes <out>/<strategy>/... Returns the reports.
std::vector<fed::SimulationReport> run_experiment(const ExperimentConfig& config,
                                                  const std::filesystem::path& out);

// ---------------------------------------------------------------------------
// Comparison

struct ComparisonRow {
  std::string strategy;
  double mean_f1 = 0.0;         // inference months
  double final12_mean_f1 = 0.0; // last 12 months (or all inference months if fewer)
  std::size_t retraining_months = 0;
  std::uint64_t total_bytes = 0;
  std::uint64_t model_down_bytes = 0;
  std::uint64_t data_up_bytes = 0;
  std::uint64_t weights_up_bytes = 0;
};

/// Reads every strategy directory under `dir`. Rows sorted by mean F1,
/// best first. Throws Error when fewer than two reports exist or a file is
/// malformed.
std::vector<ComparisonRow> compare_reports(const std::filesystem::path& dir);
void write_comparison_text(std::ostream& out, const std::vector<ComparisonRow>& rows);
void write_comparison_csv(std::ostream& out, const std::vector<ComparisonRow>& rows);

// ---------------------------------------------------------------------------
// Calibration

/// One detector setting from the grid together with its replay result.
struct CalibrationCandidate {
  fed::Strategy strategy;  // kind == detector; carries the parameters
  std::size_t detections = 0;
  double sensitivity_key = 0.0;  // smaller = more sensitive
  std::string describe() const;
};

struct DetectorCalibration {
  fed::DetectorKind detector = fed::DetectorKind::kswin;
  std::optional<CalibrationCandidate> selected;
  std::vector<CalibrationCandidate> candidates;  // most sensitive first
};

struct CalibrationResult {
  int first_month = 0;
  int last_month = 0;
  std::vector<DetectorCalibration> detectors;

  bool complete() const;
};

/// Per-endpoint confidence streams of the initially trained model over the
/// months [first, last), oldest month first.
std::vector<std::vector<double>> confidence_streams(const ExperimentConfig& config, int first,
                                                    int last);

/// Total detections when each stream is replayed through a fresh detector.
std::size_t replay_detections(const fed::Strategy& detector_strategy,
                              const std::vector<std::vector<double>>& streams);

/// Grid search: for each detector pick the most sensitive setting with zero
/// detections on the calibration months.
CalibrationResult calibrate(const ExperimentConfig& config);
std::string calibration_json(const CalibrationResult& result);

}  // namespace driftfed::experiment
