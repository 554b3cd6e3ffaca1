#include "driftfed/experiment.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <map>
#include <ostream>
#include <set>
#include <sstream>

#include "driftfed/errors.hpp"
#include "json.hpp"

namespace driftfed::experiment {

namespace fs = std::filesystem;
using json = nlohmann::json;
using fed::DetectorKind;
using fed::Strategy;
using fed::StrategyKind;

// ---------------------------------------------------------------------------
// Config parsing

namespace {

std::string join(const std::string& path, const std::string& key) {
  return path.empty() ? key : path + "." + key;
}

void check_keys(const json& obj, const std::string& path, std::initializer_list<const char*> allowed) {
  if (!obj.is_object()) throw ConfigError(path, "expected an object");
  for (const auto& [key, _] : obj.items()) {
    bool ok = false;
    for (const char* a : allowed) ok = ok || key == a;
    if (!ok) throw ConfigError(join(path, key), "unknown field");
  }
}

const json* find(const json& obj, const char* key) {
  auto it = obj.find(key);
  return it == obj.end() ? nullptr : &*it;
}

double get_number(const json& obj, const std::string& path, const char* key,
                  std::optional<double> fallback = std::nullopt) {
  const json* v = find(obj, key);
  if (!v) {
    if (fallback) return *fallback;
    throw ConfigError(join(path, key), "required field missing");
  }
  if (!v->is_number()) throw ConfigError(join(path, key), "expected a number");
  return v->get<double>();
}

std::int64_t get_int(const json& obj, const std::string& path, const char* key,
                     std::optional<std::int64_t> fallback = std::nullopt) {
  const json* v = find(obj, key);
  if (!v) {
    if (fallback) return *fallback;
    throw ConfigError(join(path, key), "required field missing");
  }
  if (!v->is_number_integer()) throw ConfigError(join(path, key), "expected an integer");
  return v->get<std::int64_t>();
}

std::size_t get_count(const json& obj, const std::string& path, const char* key,
                      std::optional<std::size_t> fallback = std::nullopt) {
  const auto v = get_int(obj, path, key,
                         fallback ? std::optional<std::int64_t>(static_cast<std::int64_t>(*fallback))
                                  : std::nullopt);
  if (v < 0) throw ConfigError(join(path, key), "expected a non-negative integer");
  return static_cast<std::size_t>(v);
}

bool get_bool(const json& obj, const std::string& path, const char* key, bool fallback) {
  const json* v = find(obj, key);
  if (!v) return fallback;
  if (!v->is_boolean()) throw ConfigError(join(path, key), "expected true or false");
  return v->get<bool>();
}

std::string get_string(const json& obj, const std::string& path, const char* key,
                       std::optional<std::string> fallback = std::nullopt) {
  const json* v = find(obj, key);
  if (!v) {
    if (fallback) return *fallback;
    throw ConfigError(join(path, key), "required field missing");
  }
  if (!v->is_string()) throw ConfigError(join(path, key), "expected a string");
  return v->get<std::string>();
}

std::vector<double> get_vector(const json& obj, const std::string& path, const char* key) {
  const json* v = find(obj, key);
  if (!v) throw ConfigError(join(path, key), "required field missing");
  if (!v->is_array()) throw ConfigError(join(path, key), "expected an array of numbers");
  std::vector<double> out;
  for (std::size_t i = 0; i < v->size(); ++i) {
    if (!(*v)[i].is_number())
      throw ConfigError(join(path, key) + "[" + std::to_string(i) + "]", "expected a number");
    out.push_back((*v)[i].get<double>());
  }
  return out;
}

std::uint64_t get_seed(const json& obj) {
  const json* v = find(obj, "seed");
  if (!v) return 0;
  if (v->is_number_unsigned()) return v->get<std::uint64_t>();
  if (v->is_number_integer() && v->get<std::int64_t>() >= 0)
    return static_cast<std::uint64_t>(v->get<std::int64_t>());
  throw ConfigError("seed", "expected a non-negative integer");
}

std::map<std::string, stream::ConceptParams> parse_concepts(const json& root) {
  stream::LibraryOptions lib;
  if (const json* l = find(root, "concept_library")) {
    check_keys(*l, "concept_library",
               {"feature_dim", "separation", "rotation_deg", "benign_shift", "covariance_scale",
                "malware_fraction"});
    lib.feature_dim = get_count(*l, "concept_library", "feature_dim", lib.feature_dim);
    lib.separation = get_number(*l, "concept_library", "separation", lib.separation);
    lib.rotation_deg = get_number(*l, "concept_library", "rotation_deg", lib.rotation_deg);
    lib.benign_shift = get_number(*l, "concept_library", "benign_shift", lib.benign_shift);
    lib.covariance_scale =
        get_number(*l, "concept_library", "covariance_scale", lib.covariance_scale);
    lib.malware_fraction =
        get_number(*l, "concept_library", "malware_fraction", lib.malware_fraction);
  }
  std::map<std::string, stream::ConceptParams> concepts;
  try {
    concepts = stream::default_concept_library(lib);
  } catch (const Error& e) {
    throw ConfigError("concept_library", e.what());
  }
  if (const json* c = find(root, "concepts")) {
    if (!c->is_object()) throw ConfigError("concepts", "expected an object keyed by concept id");
    for (const auto& [id, body] : c->items()) {
      const std::string path = "concepts." + id;
      check_keys(body, path,
                 {"benign_mean", "malware_mean", "covariance_scale", "label_flip_rate",
                  "malware_fraction"});
      stream::ConceptParams p;
      p.benign_mean = get_vector(body, path, "benign_mean");
      p.malware_mean = get_vector(body, path, "malware_mean");
      p.covariance_scale = get_number(body, path, "covariance_scale", 1.0);
      p.label_flip_rate = get_number(body, path, "label_flip_rate", 0.0);
      p.malware_fraction = get_number(body, path, "malware_fraction", 0.1);
      try {
        p.validate(id);
      } catch (const Error& e) {
        throw ConfigError(path, e.what());
      }
      concepts[id] = std::move(p);
    }
  }
  // Explicit concepts may use a different dimension than the library; keep only
  // those of the dimension the schedule will actually use.
  return concepts;
}

stream::ConceptSchedule parse_schedule(const json& root) {
  const json* s = find(root, "schedule");
  if (!s) throw ConfigError("schedule", "required field missing");
  check_keys(*s, "schedule", {"months", "segments"});
  stream::ScheduleSpec spec;
  spec.months = static_cast<int>(get_int(*s, "schedule", "months"));
  const json* segs = find(*s, "segments");
  if (!segs || !segs->is_array() || segs->empty())
    throw ConfigError("schedule.segments", "expected a nonempty array");
  std::set<std::string> used;
  for (std::size_t i = 0; i < segs->size(); ++i) {
    const std::string path = "schedule.segments[" + std::to_string(i) + "]";
    const json& seg = (*segs)[i];
    check_keys(seg, path, {"start", "end", "concept", "transition"});
    stream::Segment out;
    out.start = static_cast<int>(get_int(seg, path, "start"));
    out.end = static_cast<int>(get_int(seg, path, "end"));
    out.concept_id = get_string(seg, path, "concept");
    try {
      out.transition = stream::transition_from_string(get_string(seg, path, "transition", "abrupt"));
    } catch (const Error& e) {
      throw ConfigError(path + ".transition", e.what());
    }
    used.insert(out.concept_id);
    spec.segments.push_back(std::move(out));
  }
  const auto all = parse_concepts(root);
  for (const auto& id : used) {
    auto it = all.find(id);
    if (it == all.end()) throw ConfigError("schedule.segments", "unknown concept '" + id + "'");
    spec.concepts[id] = it->second;
  }
  try {
    return stream::build_schedule(spec);
  } catch (const Error& e) {
    throw ConfigError("schedule", e.what());
  }
}

Strategy parse_strategy(const json& body, const std::string& path) {
  const std::string kind = get_string(body, path, "kind");
  Strategy s;
  if (kind == "none") {
    check_keys(body, path, {"kind", "name"});
  } else if (kind == "periodic") {
    check_keys(body, path, {"kind", "name", "months"});
    s = Strategy::periodic(static_cast<int>(get_int(body, path, "months")));
    if (s.period < 1) throw ConfigError(path + ".months", "must be >= 1");
  } else if (kind == "detector") {
    const std::string det = get_string(body, path, "detector");
    if (det == "adwin") {
      check_keys(body, path, {"kind", "name", "detector", "delta"});
      s = Strategy::with_detector(DetectorKind::adwin);
      s.adwin.delta = get_number(body, path, "delta", s.adwin.delta);
    } else if (det == "pht") {
      check_keys(body, path, {"kind", "name", "detector", "tolerance", "lambda"});
      s = Strategy::with_detector(DetectorKind::pht);
      s.pht.tolerance = get_number(body, path, "tolerance", s.pht.tolerance);
      s.pht.lambda = get_number(body, path, "lambda", s.pht.lambda);
    } else if (det == "kswin") {
      check_keys(body, path, {"kind", "name", "detector", "alpha", "window_size", "recent_size"});
      s = Strategy::with_detector(DetectorKind::kswin);
      s.kswin.alpha = get_number(body, path, "alpha", s.kswin.alpha);
      s.kswin.window_size = get_count(body, path, "window_size", s.kswin.window_size);
      s.kswin.recent_size = get_count(body, path, "recent_size", s.kswin.recent_size);
    } else {
      throw ConfigError(path + ".detector", "expected one of adwin, pht, kswin");
    }
  } else if (kind == "flame_static") {
    check_keys(body, path, {"kind", "name"});
    s = Strategy::flame_static();
  } else if (kind == "flame_adaptive") {
    check_keys(body, path, {"kind", "name"});
    s = Strategy::flame_adaptive();
  } else {
    throw ConfigError(path + ".kind",
                      "expected one of none, periodic, detector, flame_static, flame_adaptive");
  }
  s.name = get_string(body, path, "name", "");
  try {
    s.validate();
  } catch (const ConfigError& e) {
    throw ConfigError(path, e.what());
  }
  return s;
}

CalibrationGrid parse_calibration(const json& root) {
  CalibrationGrid grid = CalibrationGrid::defaults();
  const json* c = find(root, "calibration");
  if (!c) return grid;
  check_keys(*c, "calibration", {"months", "adwin", "pht", "kswin"});
  if (const json* m = find(*c, "months")) {
    if (!m->is_array() || m->size() != 2 || !(*m)[0].is_number_integer() ||
        !(*m)[1].is_number_integer())
      throw ConfigError("calibration.months", "expected [first, last)");
    grid.first_month = (*m)[0].get<int>();
    grid.last_month = (*m)[1].get<int>();
  }
  if (const json* a = find(*c, "adwin")) {
    check_keys(*a, "calibration.adwin", {"delta"});
    grid.adwin.clear();
    for (double d : get_vector(*a, "calibration.adwin", "delta")) grid.adwin.push_back({d});
  }
  if (const json* p = find(*c, "pht")) {
    check_keys(*p, "calibration.pht", {"tolerance", "lambda"});
    grid.pht.clear();
    for (double tol : get_vector(*p, "calibration.pht", "tolerance"))
      for (double lam : get_vector(*p, "calibration.pht", "lambda")) grid.pht.push_back({tol, lam});
  }
  if (const json* k = find(*c, "kswin")) {
    check_keys(*k, "calibration.kswin", {"alpha", "windows"});
    const auto alphas = get_vector(*k, "calibration.kswin", "alpha");
    std::vector<std::pair<std::size_t, std::size_t>> windows;
    if (const json* w = find(*k, "windows")) {
      if (!w->is_array()) throw ConfigError("calibration.kswin.windows", "expected [[w, r], ...]");
      for (const auto& pair : *w) {
        if (!pair.is_array() || pair.size() != 2 || !pair[0].is_number_unsigned() ||
            !pair[1].is_number_unsigned())
          throw ConfigError("calibration.kswin.windows", "expected [[w, r], ...]");
        windows.emplace_back(pair[0].get<std::size_t>(), pair[1].get<std::size_t>());
      }
    } else {
      windows.emplace_back(100, 30);
    }
    grid.kswin.clear();
    for (auto [w, r] : windows)
      for (double a : alphas) grid.kswin.push_back({a, w, r, 0});
  }
  for (const auto& k : grid.kswin) {
    try {
      detect::Kswin{k};
    } catch (const Error& e) {
      throw ConfigError("calibration.kswin", e.what());
    }
  }
  return grid;
}

}  // namespace

CalibrationGrid CalibrationGrid::defaults() {
  CalibrationGrid g;
  for (double d : {0.5, 0.2, 0.1, 0.05, 0.02, 0.01, 0.005, 0.002, 0.001, 1e-4, 1e-5})
    g.adwin.push_back({d});
  for (double tol : {0.005, 0.01, 0.05})
    for (double lam : {5.0, 10.0, 20.0, 50.0, 100.0, 200.0, 500.0}) g.pht.push_back({tol, lam});
  for (auto [w, r] : {std::pair<std::size_t, std::size_t>{100, 30}, {200, 50}})
    for (double a : {0.05, 0.01, 0.005, 0.001, 1e-4, 1e-5, 1e-6}) g.kswin.push_back({a, w, r, 0});
  return g;
}

ExperimentConfig parse_config(std::string_view text) {
  json root;
  try {
    root = json::parse(text.begin(), text.end());
  } catch (const json::parse_error& e) {
    // Translate the byte offset into line and column.
    std::size_t line = 1, col = 1;
    const std::size_t limit = std::min<std::size_t>(e.byte > 0 ? e.byte - 1 : 0, text.size());
    for (std::size_t i = 0; i < limit; ++i) {
      if (text[i] == '\n') {
        ++line;
        col = 1;
      } else {
        ++col;
      }
    }
    throw ConfigError("", "JSON syntax error at line " + std::to_string(line) + ", column " +
                              std::to_string(col) + ": " + e.what());
  }
  check_keys(root, "",
             {"schema", "seed", "output_dir", "concept_library", "concepts", "schedule",
              "training_months", "topology", "samples", "model", "flame", "strategies",
              "calibration"});
  const std::string schema = get_string(root, "", "schema");
  if (schema != kConfigSchema)
    throw ConfigError("schema", "unsupported schema '" + schema + "', expected '" +
                                    std::string(kConfigSchema) + "'");

  ExperimentConfig cfg;
  auto& sim = cfg.sim;
  sim.seed = get_seed(root);
  cfg.output_dir = get_string(root, "", "output_dir", cfg.output_dir);
  sim.schedule = parse_schedule(root);
  sim.training_months = static_cast<int>(get_int(root, "", "training_months"));

  const json* topo = find(root, "topology");
  if (!topo) throw ConfigError("topology", "required field missing");
  check_keys(*topo, "topology", {"clients", "endpoints", "endpoint_to_client"});
  const std::size_t clients = get_count(*topo, "topology", "clients");
  const std::size_t endpoints = get_count(*topo, "topology", "endpoints");
  sim.topology = fed::Topology::round_robin(clients, endpoints);
  if (const json* map = find(*topo, "endpoint_to_client")) {
    if (!map->is_array()) throw ConfigError("topology.endpoint_to_client", "expected an array");
    sim.topology.endpoint_to_client.clear();
    for (const auto& v : *map) {
      if (!v.is_number_unsigned())
        throw ConfigError("topology.endpoint_to_client", "expected client indices");
      sim.topology.endpoint_to_client.push_back(v.get<std::size_t>());
    }
  }

  if (const json* s = find(root, "samples")) {
    check_keys(*s, "samples", {"client_per_month", "endpoint_per_month", "validation_fraction"});
    sim.client_samples_per_month =
        get_count(*s, "samples", "client_per_month", sim.client_samples_per_month);
    sim.endpoint_samples_per_month =
        get_count(*s, "samples", "endpoint_per_month", sim.endpoint_samples_per_month);
    sim.validation_fraction =
        get_number(*s, "samples", "validation_fraction", sim.validation_fraction);
  }

  sim.arch.feature_dim = sim.schedule.feature_dim();
  if (const json* m = find(root, "model")) {
    check_keys(*m, "model",
               {"hidden_dim", "learning_rate", "batch_size", "max_epochs", "weighted_loss"});
    sim.arch.hidden_dim = get_count(*m, "model", "hidden_dim", 0);
    sim.hyper.learning_rate = get_number(*m, "model", "learning_rate", sim.hyper.learning_rate);
    if (!(sim.hyper.learning_rate > 0.0))
      throw ConfigError("model.learning_rate", "must be positive");
    sim.hyper.batch_size = get_count(*m, "model", "batch_size", sim.hyper.batch_size);
    sim.hyper.max_epochs = static_cast<int>(get_int(*m, "model", "max_epochs", sim.hyper.max_epochs));
    sim.weighted_loss = get_bool(*m, "model", "weighted_loss", sim.weighted_loss);
  }

  if (const json* f = find(root, "flame")) {
    check_keys(*f, "flame",
               {"static_phi", "min_window", "beta", "window_len", "grad_window", "grad_threshold",
                "monitor_updates_per_month"});
    sim.monitor.static_phi = get_number(*f, "flame", "static_phi", sim.monitor.static_phi);
    sim.monitor.min_window = get_count(*f, "flame", "min_window", sim.monitor.min_window);
    sim.stability.beta = get_number(*f, "flame", "beta", sim.stability.beta);
    sim.stability.window_len = get_count(*f, "flame", "window_len", sim.stability.window_len);
    sim.stability.grad_window = get_count(*f, "flame", "grad_window", sim.stability.grad_window);
    sim.stability.grad_threshold =
        get_number(*f, "flame", "grad_threshold", sim.stability.grad_threshold);
    sim.monitor_updates_per_month =
        get_count(*f, "flame", "monitor_updates_per_month", sim.monitor_updates_per_month);
  }

  const json* strategies = find(root, "strategies");
  if (!strategies || !strategies->is_array() || strategies->empty())
    throw ConfigError("strategies", "expected a nonempty array");
  std::set<std::string> labels;
  for (std::size_t i = 0; i < strategies->size(); ++i) {
    const std::string path = "strategies[" + std::to_string(i) + "]";
    Strategy s = parse_strategy((*strategies)[i], path);
    if (!labels.insert(s.label()).second)
      throw ConfigError(path, "duplicate strategy name '" + s.label() + "'");
    cfg.strategies.push_back(std::move(s));
  }

  cfg.calibration = parse_calibration(root);
  sim.validate();
  cfg.echo = root.dump();
  return cfg;
}

ExperimentConfig load_config(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("", "cannot open config file '" + path.string() + "'");
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_config(buf.str());
}

void override_seed(ExperimentConfig& config, std::string_view value) {
  std::uint64_t seed = 0;
  const auto* end = value.data() + value.size();
  auto [ptr, ec] = std::from_chars(value.data(), end, seed);
  if (value.empty() || ec != std::errc() || ptr != end)
    throw ConfigError("DRIFTFED_SEED", "expected an unsigned integer, got '" + std::string(value) + "'");
  config.sim.seed = seed;
}

// ---------------------------------------------------------------------------
// Report files

std::string format_double(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  if (ec != std::errc()) return "nan";
  return std::string(buf, ptr);
}

void write_f1_csv(std::ostream& out, const fed::SimulationReport& report) {
  out << "month,strategy,endpoint,f1\n";
  for (const auto& rec : report.f1) {
    for (std::size_t e = 0; e < rec.endpoint_f1.size(); ++e)
      out << rec.month << ',' << report.strategy << ',' << e << ','
          << format_double(rec.endpoint_f1[e]) << '\n';
    out << rec.month << ',' << report.strategy << ",global," << format_double(rec.global_f1)
        << '\n';
  }
}

void write_ledger_csv(std::ostream& out, const fed::ByteLedger& ledger) {
  out << "month,sender,receiver,kind,bytes\n";
  for (const auto& e : ledger.entries())
    out << e.month << ',' << e.sender << ',' << e.receiver << ',' << fed::to_string(e.kind) << ','
        << e.bytes << '\n';
}

namespace {

double final_window_mean(const fed::SimulationReport& r) {
  const int first = std::max(r.training_months, r.months - 12);
  return r.mean_f1(first, r.months);
}

}  // namespace

std::string report_json(const fed::SimulationReport& r, const ExperimentConfig& config) {
  json j;
  j["schema"] = kReportSchema;
  j["strategy"] = r.strategy;
  j["seed"] = r.seed;
  j["months"] = r.months;
  j["training_months"] = r.training_months;
  j["summary"] = {
      {"mean_f1_inference", r.mean_f1(r.training_months, r.months)},
      {"final12_mean_f1", final_window_mean(r)},
      {"retraining_month_count", r.retraining_months.size()},
      {"drift_event_count", r.drift_events.size()},
      {"ledger_total_bytes", r.ledger.total()},
      {"bytes_by_kind",
       {{"model_down", r.ledger.total(fed::MessageKind::model_down)},
        {"data_up", r.ledger.total(fed::MessageKind::data_up)},
        {"weights_up", r.ledger.total(fed::MessageKind::weights_up)}}},
  };
  j["retraining_months"] = json::array();
  for (int m : r.retraining_months) j["retraining_months"].push_back(m);
  j["drift_events"] = json::array();
  for (const auto& e : r.drift_events)
    j["drift_events"].push_back({{"month", e.month}, {"endpoint", e.endpoint}, {"signal", e.signal}});
  j["warnings"] = r.warnings;
  json echo = json::parse(config.echo.empty() ? "{}" : config.echo);
  echo["seed"] = config.sim.seed;
  j["config"] = std::move(echo);
  return j.dump(2) + "\n";
}

void write_report_files(const fed::SimulationReport& report, const ExperimentConfig& config,
                        const fs::path& dir) {
  fs::create_directories(dir);
  auto open = [&](const char* name) {
    std::ofstream f(dir / name, std::ios::binary | std::ios::trunc);
    if (!f) throw Error("cannot write '" + (dir / name).string() + "'");
    return f;
  };
  {
    auto f = open(kReportFile);
    f << report_json(report, config);
  }
  {
    auto f = open(kF1File);
    write_f1_csv(f, report);
  }
  {
    auto f = open(kLedgerFile);
    write_ledger_csv(f, report.ledger);
  }
}

std::vector<fed::SimulationReport> run_experiment(const ExperimentConfig& config,
                                                  const fs::path& out) {
  auto reports = fed::run_strategies(config.sim, config.strategies);
  for (const auto& r : reports) write_report_files(r, config, out / r.strategy);
  return reports;
}

// ---------------------------------------------------------------------------
// Comparison

namespace {

std::vector<std::vector<std::string>> read_csv(const fs::path& path, std::string_view header) {
  std::ifstream in(path);
  if (!in) throw Error("missing file '" + path.string() + "'");
  std::string line;
  if (!std::getline(in, line) || line != header)
    throw Error("'" + path.string() + "' does not start with header '" + std::string(header) + "'");
  std::vector<std::vector<std::string>> rows;
  std::size_t line_no = 1;
  const std::size_t columns = static_cast<std::size_t>(std::count(header.begin(), header.end(), ',')) + 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (cells.size() != columns)
      throw Error("'" + path.string() + "' line " + std::to_string(line_no) + ": expected " +
                  std::to_string(columns) + " columns");
    rows.push_back(std::move(cells));
  }
  return rows;
}

template <typename T>
T parse_cell(const std::string& cell, const fs::path& path) {
  T v{};
  auto [ptr, ec] = std::from_chars(cell.data(), cell.data() + cell.size(), v);
  if (ec != std::errc() || ptr != cell.data() + cell.size())
    throw Error("'" + path.string() + "': malformed value '" + cell + "'");
  return v;
}

ComparisonRow read_strategy_dir(const fs::path& dir) {
  std::ifstream in(dir / kReportFile);
  if (!in) throw Error("missing '" + (dir / kReportFile).string() + "'");
  json report;
  try {
    report = json::parse(in);
  } catch (const json::exception& e) {
    throw Error("'" + (dir / kReportFile).string() + "': " + e.what());
  }
  ComparisonRow row;
  int months = 0, training = 0;
  try {
    if (report.at("schema").get<std::string>() != kReportSchema) throw Error("unexpected schema");
    row.strategy = report.at("strategy").get<std::string>();
    months = report.at("months").get<int>();
    training = report.at("training_months").get<int>();
    row.retraining_months = report.at("retraining_months").size();
  } catch (const json::exception& e) {
    throw Error("'" + (dir / kReportFile).string() + "': " + e.what());
  }

  const int final_first = std::max(training, months - 12);
  double sum = 0.0, final_sum = 0.0;
  int n = 0, final_n = 0;
  for (const auto& cells : read_csv(dir / kF1File, "month,strategy,endpoint,f1")) {
    if (cells[2] != "global") continue;
    const int month = parse_cell<int>(cells[0], dir / kF1File);
    const double f1 = parse_cell<double>(cells[3], dir / kF1File);
    if (month < training) continue;
    sum += f1;
    ++n;
    if (month >= final_first) {
      final_sum += f1;
      ++final_n;
    }
  }
  if (n == 0 || final_n == 0) throw Error("'" + (dir / kF1File).string() + "' has no inference months");
  row.mean_f1 = sum / n;
  row.final12_mean_f1 = final_sum / final_n;

  for (const auto& cells : read_csv(dir / kLedgerFile, "month,sender,receiver,kind,bytes")) {
    const auto bytes = parse_cell<std::uint64_t>(cells[4], dir / kLedgerFile);
    row.total_bytes += bytes;
    if (cells[3] == "model_down") row.model_down_bytes += bytes;
    else if (cells[3] == "data_up") row.data_up_bytes += bytes;
    else if (cells[3] == "weights_up") row.weights_up_bytes += bytes;
    else throw Error("'" + (dir / kLedgerFile).string() + "': unknown kind '" + cells[3] + "'");
  }
  return row;
}

}  // namespace

std::vector<ComparisonRow> compare_reports(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw Error("'" + dir.string() + "' is not a directory");
  std::vector<fs::path> dirs;
  for (const auto& entry : fs::directory_iterator(dir))
    if (entry.is_directory() && fs::exists(entry.path() / kReportFile)) dirs.push_back(entry.path());
  std::sort(dirs.begin(), dirs.end());
  if (dirs.size() < 2)
    throw Error("need at least two strategy reports under '" + dir.string() + "', found " +
                std::to_string(dirs.size()));
  std::vector<ComparisonRow> rows;
  for (const auto& d : dirs) rows.push_back(read_strategy_dir(d));
  std::stable_sort(rows.begin(), rows.end(), [](const ComparisonRow& a, const ComparisonRow& b) {
    return a.mean_f1 > b.mean_f1;
  });
  return rows;
}

void write_comparison_text(std::ostream& out, const std::vector<ComparisonRow>& rows) {
  out << std::left << std::setw(16) << "strategy" << std::right << std::setw(10) << "mean_f1"
      << std::setw(12) << "final12_f1" << std::setw(12) << "retrain_mo" << std::setw(14)
      << "total_bytes" << std::setw(14) << "model_down" << std::setw(14) << "data_up"
      << std::setw(14) << "weights_up" << '\n';
  out << std::fixed << std::setprecision(4);
  for (const auto& r : rows)
    out << std::left << std::setw(16) << r.strategy << std::right << std::setw(10) << r.mean_f1
        << std::setw(12) << r.final12_mean_f1 << std::setw(12) << r.retraining_months
        << std::setw(14) << r.total_bytes << std::setw(14) << r.model_down_bytes << std::setw(14)
        << r.data_up_bytes << std::setw(14) << r.weights_up_bytes << '\n';
  out << std::defaultfloat;
}

void write_comparison_csv(std::ostream& out, const std::vector<ComparisonRow>& rows) {
  out << "strategy,mean_f1,final12_mean_f1,retraining_months,total_bytes,model_down_bytes,"
         "data_up_bytes,weights_up_bytes\n";
  for (const auto& r : rows)
    out << r.strategy << ',' << format_double(r.mean_f1) << ',' << format_double(r.final12_mean_f1)
        << ',' << r.retraining_months << ',' << r.total_bytes << ',' << r.model_down_bytes << ','
        << r.data_up_bytes << ',' << r.weights_up_bytes << '\n';
}

// ---------------------------------------------------------------------------
// Calibration

std::string CalibrationCandidate::describe() const {
  std::ostringstream os;
  os << fed::to_string(strategy.detector) << '(';
  switch (strategy.detector) {
    case DetectorKind::adwin: os << "delta=" << strategy.adwin.delta; break;
    case DetectorKind::pht:
      os << "tolerance=" << strategy.pht.tolerance << ", lambda=" << strategy.pht.lambda;
      break;
    case DetectorKind::kswin:
      os << "alpha=" << strategy.kswin.alpha << ", w=" << strategy.kswin.window_size
         << ", r=" << strategy.kswin.recent_size;
      break;
  }
  os << ") detections=" << detections;
  return os.str();
}

bool CalibrationResult::complete() const {
  return std::all_of(detectors.begin(), detectors.end(),
                     [](const DetectorCalibration& d) { return d.selected.has_value(); });
}

std::vector<std::vector<double>> confidence_streams(const ExperimentConfig& config, int first,
                                                    int last) {
  fed::Simulation sim(config.sim, Strategy::none());
  const auto& global = sim.initial_training();
  std::vector<std::vector<double>> streams(config.sim.topology.n_endpoints);
  for (int m = first; m < last; ++m) {
    for (std::size_t e = 0; e < streams.size(); ++e) {
      const auto batch = stream::generate_month(
          config.sim.schedule, m, config.sim.endpoint_samples_per_month,
          derive_seed(config.sim.seed, "endpoint.data", e, static_cast<std::uint64_t>(m)));
      const auto conf = model::predict_confidence(global, batch);
      streams[e].insert(streams[e].end(), conf.begin(), conf.end());
    }
  }
  return streams;
}

std::size_t replay_detections(const Strategy& s, const std::vector<std::vector<double>>& streams) {
  std::size_t hits = 0;
  for (std::size_t e = 0; e < streams.size(); ++e) {
    auto count = [&](auto det) {
      for (double x : streams[e]) hits += det.update(x) ? 1 : 0;
    };
    switch (s.detector) {
      case DetectorKind::adwin: count(detect::Adwin(s.adwin)); break;
      case DetectorKind::pht: count(detect::PageHinkley(s.pht)); break;
      case DetectorKind::kswin: {
        auto p = s.kswin;
        p.seed = derive_seed(p.seed, "calibration.kswin", e);
        count(detect::Kswin(p));
        break;
      }
    }
  }
  return hits;
}

CalibrationResult calibrate(const ExperimentConfig& config) {
  CalibrationResult result;
  result.first_month = config.calibration.first_month;
  result.last_month =
      config.calibration.last_month > 0 ? config.calibration.last_month : config.sim.training_months;
  if (result.first_month < 0 || result.last_month <= result.first_month ||
      result.last_month > config.sim.schedule.months())
    throw ConfigError("calibration.months", "empty or out-of-range month range");

  const auto streams = confidence_streams(config, result.first_month, result.last_month);

  auto run_grid = [&](DetectorKind kind, auto&& candidates) {
    DetectorCalibration cal;
    cal.detector = kind;
    cal.candidates = std::move(candidates);
    std::stable_sort(cal.candidates.begin(), cal.candidates.end(),
                     [](const auto& a, const auto& b) { return a.sensitivity_key < b.sensitivity_key; });
    for (auto& c : cal.candidates) {
      c.detections = replay_detections(c.strategy, streams);
      if (!cal.selected && c.detections == 0) cal.selected = c;
    }
    result.detectors.push_back(std::move(cal));
  };

  std::vector<CalibrationCandidate> adwin, pht, kswin;
  for (const auto& p : config.calibration.adwin) {
    CalibrationCandidate c{Strategy::with_detector(DetectorKind::adwin), 0, -p.delta};
    c.strategy.adwin = p;
    adwin.push_back(c);
  }
  for (const auto& p : config.calibration.pht) {
    // Lower lambda first, then lower tolerance.
    CalibrationCandidate c{Strategy::with_detector(DetectorKind::pht), 0, p.lambda * 1e6 + p.tolerance};
    c.strategy.pht = p;
    pht.push_back(c);
  }
  for (const auto& p : config.calibration.kswin) {
    detect::Kswin probe(p);
    CalibrationCandidate c{Strategy::with_detector(DetectorKind::kswin), 0, probe.threshold()};
    c.strategy.kswin = p;
    c.strategy.kswin.seed = config.sim.seed;
    kswin.push_back(c);
  }
  run_grid(DetectorKind::adwin, std::move(adwin));
  run_grid(DetectorKind::pht, std::move(pht));
  run_grid(DetectorKind::kswin, std::move(kswin));
  return result;
}

std::string calibration_json(const CalibrationResult& result) {
  json j;
  j["schema"] = kCalibrationSchema;
  j["months"] = {result.first_month, result.last_month};
  for (const auto& d : result.detectors) {
    json entry;
    entry["candidates_evaluated"] = d.candidates.size();
    if (d.selected) {
      const auto& s = d.selected->strategy;
      json params;
      switch (d.detector) {
        case DetectorKind::adwin: params = {{"delta", s.adwin.delta}}; break;
        case DetectorKind::pht: params = {{"tolerance", s.pht.tolerance}, {"lambda", s.pht.lambda}}; break;
        case DetectorKind::kswin:
          params = {{"alpha", s.kswin.alpha},
                    {"window_size", s.kswin.window_size},
                    {"recent_size", s.kswin.recent_size}};
          break;
      }
      entry["selected"] = params;
      entry["detections"] = d.selected->detections;
    } else {
      entry["selected"] = nullptr;
    }
    j[fed::to_string(d.detector)] = std::move(entry);
  }
  return j.dump(2) + "\n";
}

}  // namespace driftfed::experiment
