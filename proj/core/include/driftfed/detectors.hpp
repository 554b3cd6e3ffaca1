#pragma once

// Streaming drift detectors over scalar streams (here: model confidences).
// Each detector is a single-owner state object; update() appends one value
// and reports whether a drift was signalled by that value.

#include <cstddef>
#include <cstdint>
#include <deque>
#include <span>
#include <vector>

#include "driftfed/rng.hpp"

namespace driftfed::detect {

/// Two-sample Kolmogorov-Smirnov statistic: sup_t |F_a(t) - F_b(t)|.
/// Exact, via a merge over the sorted samples. Throws on empty or NaN input.
double ks_two_sample(std::span<const double> a, std::span<const double> b);

// ---------------------------------------------------------------------------
// ADWIN

struct AdwinParams {
  double delta = 0.002;
};

/// Hoeffding cut threshold for sub-windows of n0 and n1 samples within a
/// window of n = n0 + n1:  eps = sqrt( ln(4 n / delta) / (2 m) ),
/// where m = 1 / (1/n0 + 1/n1) (half the harmonic mean of n0 and n1).
double adwin_cut_threshold(std::size_t n0, std::size_t n1, double delta);

/// Explicit-buffer ADWIN. Every split of the window is tested after each
/// append; while some split's mean difference reaches its cut threshold the
/// older sub-window up to the first such split is dropped. O(n) per update.
class Adwin {
 public:
  explicit Adwin(AdwinParams params = {});

  bool update(double x);
  void reset();

  std::size_t width() const noexcept { return window_.size(); }
  double mean() const noexcept;
  double total() const noexcept { return total_; }
  const std::deque<double>& window() const noexcept { return window_; }
  const AdwinParams& params() const noexcept { return params_; }

 private:
  // Smallest split index (size of the older sub-window) whose means differ by
  // at least the cut threshold, or 0 when no split triggers.
  std::size_t find_cut();

  AdwinParams params_;
  std::deque<double> window_;
  std::vector<double> prefix_;
  double total_ = 0.0;
};

// ---------------------------------------------------------------------------
// Page-Hinkley (two-sided)

struct PhtParams {
  double tolerance = 0.005;  // slack subtracted from every deviation
  double lambda = 50.0;      // detection threshold
};

/// Upward statistic: U_t = sum (x - mean_t - tolerance), drift when U_t - min U > lambda.
/// Downward statistic: L_t = sum (mean_t - x - tolerance), drift when L_t - min L > lambda.
/// mean_t is the running mean including x. All accumulators reset on drift.
class PageHinkley {
 public:
  explicit PageHinkley(PhtParams params = {});

  bool update(double x);
  void reset();

  double running_mean() const noexcept { return mean_; }
  double upward_statistic() const noexcept { return sum_up_ - min_up_; }
  double downward_statistic() const noexcept { return sum_down_ - min_down_; }
  double sum_up() const noexcept { return sum_up_; }
  double sum_down() const noexcept { return sum_down_; }
  std::uint64_t count() const noexcept { return count_; }
  const PhtParams& params() const noexcept { return params_; }

 private:
  PhtParams params_;
  double mean_ = 0.0;
  double sum_up_ = 0.0, min_up_ = 0.0;
  double sum_down_ = 0.0, min_down_ = 0.0;
  std::uint64_t count_ = 0;
};

// ---------------------------------------------------------------------------
// KSWIN

struct KswinParams {
  double alpha = 0.005;
  std::size_t window_size = 100;  // w
  std::size_t recent_size = 30;   // r, 0 < r < w
  std::uint64_t seed = 0;
};

/// Fixed window of w values. Once full, the r most recent values are tested
/// against r values drawn without replacement from the older w - r; drift when
/// the KS statistic exceeds sqrt(-ln(alpha) / r). On drift only the recent
/// sub-window is kept.
class Kswin {
 public:
  explicit Kswin(KswinParams params = {});

  bool update(double x);
  void reset();

  double threshold() const noexcept { return threshold_; }
  double last_statistic() const noexcept { return last_stat_; }
  std::size_t size() const noexcept { return window_.size(); }
  const std::deque<double>& window() const noexcept { return window_; }
  const KswinParams& params() const noexcept { return params_; }

 private:
  KswinParams params_;
  double threshold_;
  std::deque<double> window_;
  Rng rng_;
  std::vector<std::size_t> pool_;
  std::vector<double> sample_, recent_;
  double last_stat_ = 0.0;
};

}  // namespace driftfed::detect
