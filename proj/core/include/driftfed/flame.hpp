#pragma once

// Endpoint confidence monitoring with an adaptive KS threshold, client-side
// training-stability checks, and concept-aware retention datasets.

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "driftfed/model.hpp"
#include "driftfed/stream.hpp"

namespace driftfed::flame {

// ---------------------------------------------------------------------------
// Endpoint monitor

struct MonitorConfig {
  double static_phi = 0.8;     // fixed threshold; also the warm-up fallback
  std::size_t min_window = 5;  // KS statistics needed before adapting
  bool adaptive = true;        // false: static threshold only
};

struct MonitorState {
  std::vector<double> reference_confidences;
  std::vector<double> ks_window;  // statistics since the last drift, oldest first
  MonitorConfig config;
};

enum class Decision { no_drift, drift };

struct MonitorResult {
  Decision decision = Decision::no_drift;
  double statistic = 0.0;
  double threshold = 0.0;
  bool used_adaptive = false;
};

/// 3 * sigma + mu of the window, population standard deviation.
/// Throws InvalidArgument on an empty window.
double adaptive_threshold(std::span<const double> ks_window);

/// Drops the oldest floor(n/3) entries when n >= 6.
std::vector<double> prune_window(std::vector<double> ks_window);

inline constexpr std::size_t kPruneFloor = 6;

/// One monitoring step against the live confidences:
///   k = KS(reference, live)
///   |window| <  min_window: threshold = static_phi
///   |window| >= min_window: prune, threshold = adaptive_threshold(window)
/// k is appended; a drift (k > threshold) clears the window.
MonitorResult monitor_update(MonitorState& state, std::span<const double> live_confidences);

// ---------------------------------------------------------------------------
// Training stability

struct StabilityConfig {
  double beta = 0.2;
  std::size_t window_len = 5;
  std::size_t grad_window = 5;
  double grad_threshold = 1e-3;
};

struct StabilityState {
  StabilityConfig config;
  std::vector<double> sigma_history;  // sigma_w per evaluated window, current session
  std::optional<double> sigma_stable; // last stable sigma, kept across sessions
};

/// Population standard deviation of (val_loss - train_loss) over the last
/// `window_len` epochs. nullopt when the trace is shorter.
std::optional<double> window_sigma(const model::LossTrace& trace, std::size_t window_len);

/// sigma_w < sigma_s * (1 - beta). Appends sigma_w to the history; on success
/// sigma_s <- sigma_w. With no previous sigma_s the first sigma_w becomes the
/// reference and the model is not yet stable. Short traces return false.
bool stability_static(StabilityState& state, const model::LossTrace& trace);

/// Ordinary least-squares slope of `ys` against 0, 1, ..., n-1.
double least_squares_slope(std::span<const double> ys);

/// Plateau test: slope of the last grad_window sigma_w values >= -grad_threshold.
bool stability_gradient(const StabilityState& state);

// ---------------------------------------------------------------------------
// Concept retention

struct ConceptStore {
  std::vector<stream::LabeledBatch> concepts;  // oldest first

  std::size_t size() const noexcept { return concepts.size(); }
  void add_concept(stream::LabeledBatch samples) { concepts.push_back(std::move(samples)); }
};

/// Per-concept retention sizes, oldest first:
///   newest:            floor(|S_n| / 2)
///   x in [1, n-1]:     floor(x |S_x| / (2 * sum_{i=1}^{n-1} i)) = floor(x |S_x| / (n (n-1)))
std::vector<std::size_t> retention_sizes(std::span<const std::size_t> concept_sizes);

/// Sorted row indices drawn without replacement from each concept.
/// Throws InsufficientDataError when the newest concept contributes nothing.
std::vector<std::vector<std::size_t>> retention_selection(const ConceptStore& store,
                                                          std::uint64_t seed);

/// Concatenation of the selections, oldest concept first, original row order
/// within each concept.
stream::LabeledBatch build_retention_dataset(const ConceptStore& store, std::uint64_t seed);

}  // namespace driftfed::flame
