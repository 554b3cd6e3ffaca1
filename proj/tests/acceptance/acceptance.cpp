// Acceptance suite. Prints one PASS/FAIL line per criterion and exits
// non-zero when any criterion fails.

#include <sys/wait.h>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "driftfed/detectors.hpp"
#include "driftfed/experiment.hpp"
#include "driftfed/federation.hpp"
#include "driftfed/flame.hpp"
#include "driftfed/model.hpp"
#include "driftfed/rng.hpp"
#include "oracles.hpp"

using namespace driftfed;
namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

namespace {

// Tolerances and limits.
constexpr double kKsTol = 1e-12;
constexpr double kThresholdTarget = 0.4449;
constexpr double kThresholdTol = 1e-4;
constexpr double kSlopeTol = 1e-10;
constexpr double kFedAvgTol = 1e-12;
constexpr double kGradRelTol = 1e-4;
constexpr double kGradAbsFloor = 1e-8;
constexpr double kDriftHarm = 0.15;
constexpr double kRecoveryTol = 0.05;
constexpr double kRetentionSeconds = 5, kKsSeconds = 5, kDetectorSeconds = 10, kSuiteSeconds = 300;

// Desk run layout: inference starts at month 6, drift at month 12.
constexpr int kPreFirst = 6, kDriftMonth = 12, kWindow = 6;

struct Outcome {
  bool pass;
  std::string detail;
};

int failures = 0;

void report(int id, const std::string& name, const std::function<Outcome()>& check) {
  const auto t0 = Clock::now();
  Outcome o;
  try {
    o = check();
  } catch (const std::exception& e) {
    o = {false, std::string("exception: ") + e.what()};
  }
  const double secs = std::chrono::duration<double>(Clock::now() - t0).count();
  if (!o.pass) ++failures;
  std::printf("%s criterion %d: %s (%s; %.2f s)\n", o.pass ? "PASS" : "FAIL", id, name.c_str(),
              o.detail.c_str(), secs);
  std::fflush(stdout);
}

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string fmt(double v, int precision = 4) {
  std::ostringstream os;
  os.precision(precision);
  os << v;
  return os.str();
}

stream::LabeledBatch tagged(std::size_t n, double tag) {
  stream::LabeledBatch b(1);
  for (std::size_t i = 0; i < n; ++i) b.push_back(std::vector<double>{tag}, i % 2);
  return b;
}

Outcome retention_exactness() {
  const auto t0 = Clock::now();
  Rng rng(1001);
  int mismatches = 0;
  for (int t = 0; t < 200; ++t) {
    flame::ConceptStore store;
    std::vector<std::size_t> sizes(1 + rng.below(6));
    for (std::size_t c = 0; c < sizes.size(); ++c) {
      sizes[c] = 2 + rng.below(499);
      store.add_concept(tagged(sizes[c], static_cast<double>(c)));
    }
    const auto d = flame::build_retention_dataset(store, rng.next_u64());
    std::vector<std::size_t> got(sizes.size(), 0);
    for (std::size_t i = 0; i < d.size(); ++i) ++got[static_cast<std::size_t>(d.row(i)[0])];
    if (got != oracle::retention_sizes(sizes)) ++mismatches;
  }
  const double secs = seconds_since(t0);
  return {mismatches == 0 && secs < kRetentionSeconds,
          std::to_string(mismatches) + "/200 stores differ from the direct formula"};
}

Outcome ks_equivalence() {
  const auto t0 = Clock::now();
  Rng rng(1002);
  double worst = 0.0;
  for (int t = 0; t < 1000; ++t) {
    std::vector<double> a(1 + rng.below(50)), b(1 + rng.below(50));
    const bool ties = t % 2 == 0;
    for (auto* v : {&a, &b})
      for (auto& x : *v) x = ties ? static_cast<double>(rng.below(10)) / 10.0 : rng.uniform();
    worst = std::max(worst, std::abs(detect::ks_two_sample(a, b) - oracle::ks_brute_force(a, b)));
  }
  const double secs = seconds_since(t0);
  return {worst <= kKsTol && secs < kKsSeconds, "max |diff| = " + fmt(worst)};
}

Outcome detector_step() {
  const auto t0 = Clock::now();
  Rng rng(1003);
  std::vector<double> xs;
  for (int i = 0; i < 600; ++i) xs.push_back((i < 300 ? 0.1 : 0.9) + rng.uniform(-0.05, 0.05));

  std::string detail;
  bool ok = true;
  auto audit = [&](const char* name, auto detector) {
    int before = 0, after = 0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
      const bool d = detector.update(xs[i]);
      if (d && i < 300) ++before;
      if (d && i >= 300 && i < 400) ++after;
    }
    ok = ok && before == 0 && after >= 1;
    detail += std::string(detail.empty() ? "" : ", ") + name + " pre=" + std::to_string(before) +
              " post100=" + std::to_string(after);
  };
  audit("adwin", detect::Adwin());
  audit("pht", detect::PageHinkley());
  detect::KswinParams kp;
  kp.seed = 1003;
  audit("kswin", detect::Kswin(kp));
  return {ok && seconds_since(t0) < kDetectorSeconds, detail};
}

Outcome threshold_arithmetic() {
  const double phi = flame::adaptive_threshold(std::vector<double>{0.1, 0.2, 0.3});
  bool prune_ok = true;
  for (std::size_t n = 0; n <= 100; ++n) {
    std::vector<double> w(n);
    for (std::size_t i = 0; i < n; ++i) w[i] = static_cast<double>(i);
    const auto p = flame::prune_window(w);
    const std::size_t drop = n >= 6 ? n / 3 : 0;
    prune_ok = prune_ok && p == std::vector<double>(w.begin() + static_cast<std::ptrdiff_t>(drop), w.end());
  }
  return {std::abs(phi - kThresholdTarget) <= kThresholdTol && prune_ok,
          "phi_a = " + fmt(phi, 6) + ", prune " + (prune_ok ? "ok" : "wrong") + " for n in [0, 100]"};
}

Outcome stability_checks() {
  struct Triple {
    double sigma_w, sigma_s, beta;
  };
  const std::vector<Triple> table{
      {0.07, 0.10, 0.2},  {0.09, 0.10, 0.2},   {0.0, 0.10, 0.2},    {0.05, 0.05, 0.1},
      {0.049, 0.1, 0.5},  {0.051, 0.1, 0.5},   {0.3, 1.0, 0.69},    {0.3, 1.0, 0.71},
      {1e-4, 2e-4, 0.4},  {1.9e-4, 2e-4, 0.04}, {2.5, 3.0, 0.1},     {2.8, 3.0, 0.1},
      {0.0101, 0.02, 0.5}, {0.0099, 0.02, 0.5}, {0.5, 0.6, 0.15},    {0.52, 0.6, 0.15},
      {0.12, 0.4, 0.7},   {0.11, 0.4, 0.7},    {0.999, 1.0, 0.0005}, {0.9996, 1.0, 0.0005}};
  int mismatches = 0;
  for (const auto& t : table) {
    flame::StabilityState s;
    s.config.window_len = 4;
    s.config.beta = t.beta;
    s.sigma_stable = t.sigma_s;
    model::LossTrace trace;
    for (double g : {t.sigma_w, -t.sigma_w, t.sigma_w, -t.sigma_w}) trace.epochs.push_back({0.5, 0.5 + g});
    const double sigma_w = oracle::population_stddev({t.sigma_w, -t.sigma_w, t.sigma_w, -t.sigma_w});
    const bool expected = sigma_w < t.sigma_s * (1.0 - t.beta);
    if (flame::stability_static(s, trace) != expected) ++mismatches;
  }
  Rng rng(1005);
  double worst = 0.0;
  int decision_mismatch = 0;
  for (int t = 0; t < 200; ++t) {
    std::vector<double> ys(10);
    for (auto& y : ys) y = rng.uniform(0.0, 0.5);
    const double slope = oracle::ols_slope(ys);
    worst = std::max(worst, std::abs(flame::least_squares_slope(ys) - slope));
    flame::StabilityState s;
    s.config.grad_window = 10;
    s.config.grad_threshold = 0.01;
    s.sigma_history = ys;
    if (flame::stability_gradient(s) != (slope >= -0.01)) ++decision_mismatch;
  }
  return {mismatches == 0 && worst <= kSlopeTol && decision_mismatch == 0,
          std::to_string(mismatches) + "/20 static mismatches, max slope |diff| = " + fmt(worst) +
              ", gradient decision mismatches " + std::to_string(decision_mismatch)};
}

Outcome fedavg_equivalence() {
  Rng rng(1006);
  double worst = 0.0;
  for (int t = 0; t < 100; ++t) {
    const model::Arch arch{2 + rng.below(10), rng.below(4)};
    std::vector<model::ModelParams> ps;
    std::vector<std::vector<double>> raw;
    std::vector<double> w;
    for (std::size_t i = 0, n = 1 + rng.below(8); i < n; ++i) {
      model::ModelParams p{arch, std::vector<double>(arch.param_count())};
      for (auto& v : p.values) v = rng.uniform(-2, 2);
      raw.push_back(p.values);
      ps.push_back(std::move(p));
      w.push_back(static_cast<double>(1 + rng.below(5000)));
    }
    const auto got = fed::fed_avg(ps, w);
    const auto want = oracle::weighted_mean(raw, w);
    for (std::size_t j = 0; j < want.size(); ++j) worst = std::max(worst, std::abs(got.values[j] - want[j]));
  }
  return {worst <= kFedAvgTol, "max |diff| = " + fmt(worst)};
}

Outcome gradient_check() {
  Rng rng(1011);
  double worst = 0.0;
  int bad = 0;
  for (int t = 0; t < 50; ++t) {
    const model::Arch arch{2 + rng.below(6), rng.below(5)};
    auto params = model::init_model(arch, rng.next_u64());
    for (auto& v : params.values) v *= 10.0;  // leave the near-zero regime
    stream::LabeledBatch batch(arch.feature_dim);
    std::vector<double> x(arch.feature_dim);
    const std::size_t n = 4 + rng.below(12);
    for (std::size_t i = 0; i < n; ++i) {
      for (auto& v : x) v = rng.normal();
      batch.push_back(x, static_cast<std::uint8_t>(i % 2));
    }
    const auto w = model::class_weights(batch.labels);
    std::vector<double> g(params.values.size());
    model::loss_and_gradient(params, batch, w, g);
    const auto fd = oracle::finite_difference_gradient(params, batch, w);
    for (std::size_t i = 0; i < g.size(); ++i) {
      const double scale = std::max(std::abs(g[i]), std::abs(fd[i]));
      const double err = std::abs(g[i] - fd[i]);
      if (err > kGradRelTol * scale + kGradAbsFloor) ++bad;
      if (scale > kGradAbsFloor) worst = std::max(worst, err / scale);
    }
  }
  return {bad == 0, std::to_string(bad) + " components out of tolerance, max relative error " + fmt(worst)};
}

struct DeskRun {
  std::vector<fed::SimulationReport> reports;
  const fed::SimulationReport& get(const std::string& label) const {
    for (const auto& r : reports)
      if (r.strategy == label) return r;
    throw std::runtime_error("strategy '" + label + "' missing from the desk config");
  }
};

double pre_drift(const fed::SimulationReport& r) { return r.mean_f1(kPreFirst, kDriftMonth); }
double post_drift(const fed::SimulationReport& r) {
  return r.mean_f1(kDriftMonth + 1, kDriftMonth + 1 + kWindow);
}

int run_cli(const std::string& args) {
  const std::string cmd = "\"" DRIFTFED_CLI "\" " + args + " > /dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

Outcome cli_determinism(const fs::path& config) {
  const auto base = fs::temp_directory_path() / "driftfed_acceptance_determinism";
  fs::remove_all(base);
  if (run_cli("run " + config.string() + " --out " + (base / "a").string()) != 0 ||
      run_cli("run " + config.string() + " --out " + (base / "b").string()) != 0)
    return {false, "driftfed run failed"};
  std::size_t files = 0, differing = 0;
  for (const auto& entry : fs::recursive_directory_iterator(base / "a")) {
    if (!entry.is_regular_file()) continue;
    ++files;
    const auto twin = base / "b" / fs::relative(entry.path(), base / "a");
    if (!fs::exists(twin) || slurp(entry.path()) != slurp(twin)) ++differing;
  }
  fs::remove_all(base);
  return {files > 0 && differing == 0,
          std::to_string(files) + " files compared, " + std::to_string(differing) + " differ"};
}

}  // namespace

int main() {
  const auto suite_start = Clock::now();
  const fs::path config_path = fs::path(DRIFTFED_SOURCE_DIR) / "configs" / "abrupt.json";

  report(1, "retention sizes equal the direct formula on 200 random stores", retention_exactness);
  report(2, "KS statistic equals the brute-force ECDF distance on 1000 pairs", ks_equivalence);
  report(3, "ADWIN, PHT, KSWIN silent before the step and firing within 100 samples after", detector_step);
  report(4, "adaptive threshold of [0.1, 0.2, 0.3] and floor(n/3) pruning", threshold_arithmetic);
  report(5, "static stability table and gradient slope oracle", stability_checks);
  report(6, "fed_avg equals the weighted-mean oracle on 100 instances", fedavg_equivalence);

  DeskRun desk;
  std::string desk_error;
  try {
    const auto config = experiment::load_config(config_path);
    desk.reports = fed::run_strategies(config.sim, config.strategies);
  } catch (const std::exception& e) {
    desk_error = e.what();
  }
  auto need_desk = [&]() {
    if (!desk_error.empty()) throw std::runtime_error("desk run failed: " + desk_error);
  };

  report(7, "no adaptation loses at least 0.15 F1 after the drift", [&]() -> Outcome {
    need_desk();
    const auto& none = desk.get("none");
    const double drop = pre_drift(none) - post_drift(none);
    return {drop >= kDriftHarm, "pre " + fmt(pre_drift(none)) + ", post " + fmt(post_drift(none)) +
                                    ", drop " + fmt(drop)};
  });
  report(8, "FLAME recovers to within 0.05 of its pre-drift F1 and beats no adaptation",
         [&]() -> Outcome {
           need_desk();
           const auto& flame = desk.get("flame");
           const auto& none = desk.get("none");
           const double gap = pre_drift(flame) - post_drift(flame);
           return {gap <= kRecoveryTol && post_drift(flame) > post_drift(none),
                   "flame pre " + fmt(pre_drift(flame)) + ", post " + fmt(post_drift(flame)) +
                       ", none post " + fmt(post_drift(none))};
         });
  report(9, "cost orderings against periodic(1) and KSWIN", [&]() -> Outcome {
    need_desk();
    const auto& flame = desk.get("flame");
    const auto& kswin = desk.get("kswin");
    const auto& periodic = desk.get("periodic1");
    const bool bytes = flame.ledger.total() < periodic.ledger.total();
    const bool retrains = flame.retraining_months.size() <= kswin.retraining_months.size() &&
                          kswin.retraining_months.size() <= periodic.retraining_months.size();
    return {bytes && retrains,
            "bytes flame " + std::to_string(flame.ledger.total()) + " vs periodic1 " +
                std::to_string(periodic.ledger.total()) + "; retraining months flame " +
                std::to_string(flame.retraining_months.size()) + ", kswin " +
                std::to_string(kswin.retraining_months.size()) + ", periodic1 " +
                std::to_string(periodic.retraining_months.size())};
  });
  report(10, "two driftfed runs produce byte-identical outputs", [&] { return cli_determinism(config_path); });
  report(11, "analytic gradients match central differences on 50 models", gradient_check);

  const double total = seconds_since(suite_start);
  report(12, "whole acceptance suite under 5 minutes", [&]() -> Outcome {
    return {total < kSuiteSeconds, "suite took " + fmt(total) + " s"};
  });

  std::printf("%d criteria failed\n", failures);
  return failures == 0 ? 0 : 1;
}
