#include "driftfed/flame.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "driftfed/detectors.hpp"
#include "driftfed/errors.hpp"
#include "driftfed/rng.hpp"

namespace driftfed::flame {

namespace {

double mean_of(std::span<const double> xs) {
  return std::accumulate(xs.begin(), xs.end(), 0.0) / static_cast<double>(xs.size());
}

double population_stddev(std::span<const double> xs, double mean) {
  double ss = 0.0;
  for (double x : xs) ss += (x - mean) * (x - mean);
  return std::sqrt(ss / static_cast<double>(xs.size()));
}

}  // namespace

double adaptive_threshold(std::span<const double> ks_window) {
  if (ks_window.empty()) throw InvalidArgument("adaptive_threshold: empty window");
  const double mu = mean_of(ks_window);
  return 3.0 * population_stddev(ks_window, mu) + mu;
}

std::vector<double> prune_window(std::vector<double> ks_window) {
  const std::size_t n = ks_window.size();
  if (n >= kPruneFloor)
    ks_window.erase(ks_window.begin(), ks_window.begin() + static_cast<std::ptrdiff_t>(n / 3));
  return ks_window;
}

MonitorResult monitor_update(MonitorState& state, std::span<const double> live_confidences) {
  if (state.reference_confidences.empty())
    throw InvalidArgument("monitor_update: empty reference confidences");
  if (live_confidences.empty()) throw InvalidArgument("monitor_update: empty live confidences");

  MonitorResult result;
  result.statistic = detect::ks_two_sample(state.reference_confidences, live_confidences);

  if (!state.config.adaptive || state.ks_window.size() < state.config.min_window) {
    result.threshold = state.config.static_phi;
  } else {
    state.ks_window = prune_window(std::move(state.ks_window));
    result.threshold = adaptive_threshold(state.ks_window);
    result.used_adaptive = true;
  }

  state.ks_window.push_back(result.statistic);
  if (result.statistic > result.threshold) {
    state.ks_window.clear();
    result.decision = Decision::drift;
  }
  return result;
}

std::optional<double> window_sigma(const model::LossTrace& trace, std::size_t window_len) {
  if (window_len < 2 || trace.size() < window_len) return std::nullopt;
  std::vector<double> gaps;
  gaps.reserve(window_len);
  for (std::size_t i = trace.size() - window_len; i < trace.size(); ++i)
    gaps.push_back(trace.epochs[i].val_loss - trace.epochs[i].train_loss);
  return population_stddev(gaps, mean_of(gaps));
}

bool stability_static(StabilityState& state, const model::LossTrace& trace) {
  const auto sigma = window_sigma(trace, state.config.window_len);
  if (!sigma) return false;
  state.sigma_history.push_back(*sigma);
  if (!state.sigma_stable) {
    state.sigma_stable = *sigma;
    return false;
  }
  if (*sigma < *state.sigma_stable * (1.0 - state.config.beta)) {
    state.sigma_stable = *sigma;
    return true;
  }
  return false;
}

double least_squares_slope(std::span<const double> ys) {
  const std::size_t n = ys.size();
  if (n < 2) throw InvalidArgument("least_squares_slope needs at least two points");
  const double x_mean = static_cast<double>(n - 1) / 2.0;
  const double y_mean = mean_of(ys);
  double sxy = 0.0, sxx = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double dx = static_cast<double>(i) - x_mean;
    sxy += dx * (ys[i] - y_mean);
    sxx += dx * dx;
  }
  return sxy / sxx;
}

bool stability_gradient(const StabilityState& state) {
  const std::size_t k = state.config.grad_window;
  if (k < 2 || state.sigma_history.size() < k) return false;
  const std::span<const double> tail(state.sigma_history.end() - static_cast<std::ptrdiff_t>(k),
                                     state.sigma_history.end());
  return least_squares_slope(tail) >= -state.config.grad_threshold;
}

std::vector<std::size_t> retention_sizes(std::span<const std::size_t> concept_sizes) {
  const std::size_t n = concept_sizes.size();
  if (n == 0) throw InvalidArgument("retention_sizes: no concepts");
  std::vector<std::size_t> sizes(n);
  sizes[n - 1] = concept_sizes[n - 1] / 2;
  const std::size_t denom = n * (n - 1);
  for (std::size_t x = 1; x < n; ++x) sizes[x - 1] = x * concept_sizes[x - 1] / denom;
  return sizes;
}

std::vector<std::vector<std::size_t>> retention_selection(const ConceptStore& store,
                                                          std::uint64_t seed) {
  if (store.concepts.empty()) throw InsufficientDataError("concept store is empty");
  std::vector<std::size_t> available;
  for (std::size_t i = 0; i < store.size(); ++i) {
    if (store.concepts[i].empty())
      throw InsufficientDataError("concept " + std::to_string(i + 1) + " has no samples");
    available.push_back(store.concepts[i].size());
  }
  const auto sizes = retention_sizes(available);
  if (sizes.back() == 0)
    throw InsufficientDataError("newest concept has fewer than two samples");

  std::vector<std::vector<std::size_t>> picks(store.size());
  for (std::size_t c = 0; c < store.size(); ++c) {
    Rng rng(derive_seed(seed, "retention", c));
    std::vector<std::size_t> pool(available[c]);
    std::iota(pool.begin(), pool.end(), std::size_t{0});
    for (std::size_t k = 0; k < sizes[c]; ++k) {
      const std::size_t j = k + static_cast<std::size_t>(rng.below(pool.size() - k));
      std::swap(pool[k], pool[j]);
    }
    pool.resize(sizes[c]);
    std::sort(pool.begin(), pool.end());
    picks[c] = std::move(pool);
  }
  return picks;
}

stream::LabeledBatch build_retention_dataset(const ConceptStore& store, std::uint64_t seed) {
  const auto picks = retention_selection(store, seed);
  stream::LabeledBatch out(store.concepts.front().dim);
  for (std::size_t c = 0; c < store.size(); ++c) out.append(store.concepts[c].select(picks[c]));
  out.month = -1;
  return out;
}

}  // namespace driftfed::flame
