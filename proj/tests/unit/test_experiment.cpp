#include <filesystem>
#include <fstream>
#include <sstream>

#include "doctest.h"
#include "driftfed/errors.hpp"
#include "driftfed/experiment.hpp"
#include "json.hpp"

using namespace driftfed;
using namespace driftfed::experiment;
namespace fs = std::filesystem;

namespace {

std::string small_config(const std::string& strategies = R"([{"kind": "none"}, {"kind": "flame_adaptive"}])",
                         const std::string& extra = "") {
  return R"({
  "schema": "driftfed.experiment/1",
  "seed": 7,
  "schedule": {"months": 14, "segments": [
    {"start": 0, "end": 10, "concept": "C1"},
    {"start": 10, "end": 14, "concept": "C3", "transition": "abrupt"}]},
  "training_months": 3,
  "topology": {"clients": 1, "endpoints": 2},
  "samples": {"client_per_month": 200, "endpoint_per_month": 200},
  "strategies": )" + strategies + extra + "\n}";
}

std::string read(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

fs::path temp_dir(const std::string& name) {
  const auto p = fs::temp_directory_path() / ("driftfed_test_" + name);
  fs::remove_all(p);
  return p;
}

std::string config_error_field(const std::string& text) {
  try {
    parse_config(text);
  } catch (const ConfigError& e) {
    return e.field();
  }
  return "<no error>";
}

}  // namespace

TEST_CASE("parse a minimal config") {
  const auto c = parse_config(small_config());
  CHECK(c.sim.seed == 7);
  CHECK(c.sim.schedule.months() == 14);
  CHECK(c.sim.training_months == 3);
  CHECK(c.sim.topology.n_endpoints == 2);
  CHECK(c.sim.arch.feature_dim == 16);
  CHECK(c.sim.hyper.learning_rate == 0.003);
  CHECK(c.sim.hyper.batch_size == 4);
  CHECK(c.sim.monitor.static_phi == 0.8);
  CHECK(c.strategies.size() == 2);
  CHECK(c.strategies[1].label() == "flame");
  CHECK(c.calibration.adwin.size() > 1);
}

TEST_CASE("strategy parameters") {
  const auto c = parse_config(small_config(R"([
    {"kind": "periodic", "months": 3},
    {"kind": "detector", "detector": "adwin", "delta": 0.01},
    {"kind": "detector", "detector": "pht", "tolerance": 0.01, "lambda": 20},
    {"kind": "detector", "detector": "kswin", "alpha": 0.001, "window_size": 200, "recent_size": 50, "name": "kswin_wide"}])"));
  CHECK(c.strategies[0].period == 3);
  CHECK(c.strategies[1].adwin.delta == 0.01);
  CHECK(c.strategies[2].pht.lambda == 20);
  CHECK(c.strategies[3].kswin.window_size == 200);
  CHECK(c.strategies[3].label() == "kswin_wide");
}

TEST_CASE("config errors name the field") {
  CHECK(config_error_field(small_config(R"([{"kind": "sometimes"}])")) == "strategies[0].kind");
  CHECK(config_error_field(small_config(R"([{"kind": "none", "period": 3}])")) == "strategies[0].period");
  CHECK(config_error_field(small_config(R"([{"kind": "none"}, {"kind": "none"}])")) == "strategies[1]");
  CHECK(config_error_field(small_config("[]")) == "strategies");
  CHECK(config_error_field(small_config(R"([{"kind": "none"}])", R"(, "training_months": "x")")) != "<no error>");
  CHECK(config_error_field(small_config(R"([{"kind": "none"}])", R"(, "surprise": 1)")) == "surprise");
  CHECK(config_error_field(small_config(R"([{"kind": "periodic", "months": 0}])")) == "strategies[0].months");

  std::string no_schema = small_config();
  no_schema.replace(no_schema.find("\"schema\""), 34, "");
  CHECK(config_error_field(no_schema) == "schema");

  std::string bad_month = small_config();
  bad_month.replace(bad_month.find("\"end\": 10"), 9, "\"end\": 9");
  CHECK(config_error_field(bad_month) == "schedule");

  std::string unknown_concept = small_config();
  unknown_concept.replace(unknown_concept.find("\"C3\""), 4, "\"C9\"");
  CHECK(config_error_field(unknown_concept) == "schedule.segments");
}

TEST_CASE("syntax errors report line and column") {
  const std::string text = "{\n  \"schema\": \"driftfed.experiment/1\",\n  \"seed\": 7,,\n}";
  try {
    parse_config(text);
    FAIL("expected a ConfigError");
  } catch (const ConfigError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("line 3") != std::string::npos);
    CHECK(msg.find("column") != std::string::npos);
  }
}

TEST_CASE("missing config file names the path") {
  try {
    load_config("/nonexistent/driftfed.json");
    FAIL("expected a ConfigError");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("/nonexistent/driftfed.json") != std::string::npos);
  }
}

TEST_CASE("seed override") {
  auto c = parse_config(small_config());
  override_seed(c, "123");
  CHECK(c.sim.seed == 123);
  CHECK_THROWS_AS(override_seed(c, "12a"), ConfigError);
  CHECK_THROWS_AS(override_seed(c, ""), ConfigError);
  CHECK_THROWS_AS(override_seed(c, "-4"), ConfigError);
}

TEST_CASE("explicit concepts replace the library") {
  const std::string text = R"({
  "schema": "driftfed.experiment/1",
  "concepts": {"A": {"benign_mean": [0, 0, 0, 0, 0, 0, 0, 0], "malware_mean": [4, 4, 0, 0, 0, 0, 0, 0]}},
  "schedule": {"months": 4, "segments": [{"start": 0, "end": 4, "concept": "A"}]},
  "training_months": 2,
  "topology": {"clients": 1, "endpoints": 1},
  "strategies": [{"kind": "none"}]
})";
  const auto c = parse_config(text);
  CHECK(c.sim.arch.feature_dim == 8);
  CHECK(c.sim.schedule.concept_params("A").malware_mean[0] == 4);
}

TEST_CASE("run writes three files per strategy with the documented headers") {
  const auto out = temp_dir("run");
  const auto c = parse_config(small_config());
  const auto reports = run_experiment(c, out);
  REQUIRE(reports.size() == 2);
  for (const char* s : {"none", "flame"}) {
    CHECK(fs::exists(out / s / kReportFile));
    const auto f1 = read(out / s / kF1File);
    CHECK(f1.rfind("month,strategy,endpoint,f1\n", 0) == 0);
    const auto ledger = read(out / s / kLedgerFile);
    CHECK(ledger.rfind("month,sender,receiver,kind,bytes\n", 0) == 0);
    const auto j = nlohmann::json::parse(read(out / s / kReportFile));
    CHECK(j["schema"] == kReportSchema);
    CHECK(j["months"] == 14);
    CHECK(j["seed"] == 7);
  }
  // 14 months x (2 endpoints + global) rows plus header.
  const auto f1 = read(out / "none" / kF1File);
  CHECK(std::count(f1.begin(), f1.end(), '\n') == 43);
  fs::remove_all(out);
}

TEST_CASE("comparison recomputes totals from the raw CSVs") {
  const auto out = temp_dir("compare");
  const auto c = parse_config(small_config());
  const auto reports = run_experiment(c, out);
  const auto rows = compare_reports(out);
  REQUIRE(rows.size() == 2);
  CHECK(rows[0].strategy == "flame");
  CHECK(rows[0].mean_f1 >= rows[1].mean_f1);
  for (const auto& row : rows) {
    const auto& r = row.strategy == "flame" ? reports[1] : reports[0];
    CHECK(row.total_bytes == r.ledger.total());
    CHECK(row.total_bytes == row.model_down_bytes + row.data_up_bytes + row.weights_up_bytes);
    CHECK(row.retraining_months == r.retraining_months.size());
    CHECK(row.mean_f1 == doctest::Approx(r.mean_f1(3, 14)).epsilon(1e-12));
  }
  std::ostringstream text, csv;
  write_comparison_text(text, rows);
  write_comparison_csv(csv, rows);
  CHECK(text.str().find("flame") < text.str().find("none"));
  CHECK(csv.str().rfind("strategy,mean_f1,final12_mean_f1,", 0) == 0);

  fs::remove_all(out / "none");
  CHECK_THROWS_AS(compare_reports(out), Error);
  fs::remove_all(out);
}

TEST_CASE("malformed report files are rejected") {
  const auto out = temp_dir("malformed");
  run_experiment(parse_config(small_config()), out);
  {
    std::ofstream f(out / "none" / kLedgerFile, std::ios::trunc);
    f << "month,sender,receiver,kind,bytes\n1,server,client:0,model_down\n";
  }
  CHECK_THROWS_AS(compare_reports(out), Error);
  fs::remove_all(out);
}

TEST_CASE("format_double round-trips") {
  for (double v : {0.1, 1.0 / 3.0, 0.0, 1e-17, 0.92345678901234567}) {
    CHECK(std::stod(format_double(v)) == v);
  }
}

TEST_CASE("calibration selects silent settings that stay sensitive") {
  const auto c = parse_config(small_config(R"([{"kind": "none"}])"));
  const auto result = calibrate(c);
  CHECK(result.first_month == 0);
  CHECK(result.last_month == 3);
  REQUIRE(result.detectors.size() == 3);
  REQUIRE(result.complete());
  const auto calibration_streams = confidence_streams(c, 0, 3);
  const auto drift_streams = confidence_streams(c, 0, 11);
  for (const auto& d : result.detectors) {
    CHECK(replay_detections(d.selected->strategy, calibration_streams) == 0);
    for (const auto& cand : d.candidates)
      if (cand.sensitivity_key > d.selected->sensitivity_key) CHECK(cand.detections == 0);
    if (d.detector == fed::DetectorKind::kswin)
      CHECK(replay_detections(d.selected->strategy, drift_streams) >= 1);
  }
  const auto j = nlohmann::json::parse(calibration_json(result));
  CHECK(j["schema"] == kCalibrationSchema);
  CHECK(j["kswin"]["detections"] == 0);
}

TEST_CASE("calibration fails when every setting fires") {
  const auto c = parse_config(small_config(
      R"([{"kind": "none"}])",
      R"(, "calibration": {"months": [0, 6], "kswin": {"alpha": [0.99], "windows": [[20, 10]]}})"));
  const auto result = calibrate(c);
  CHECK_FALSE(result.complete());
  for (const auto& d : result.detectors)
    if (d.detector == fed::DetectorKind::kswin) CHECK_FALSE(d.selected);
}
