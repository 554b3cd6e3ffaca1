#include "driftfed/detectors.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "driftfed/errors.hpp"

namespace driftfed::detect {

namespace {

void require_finite(double x, const char* who) {
  if (!std::isfinite(x)) throw InvalidArgument(std::string(who) + ": non-finite input");
}

}  // namespace

double ks_two_sample(std::span<const double> a, std::span<const double> b) {
  if (a.empty() || b.empty()) throw InvalidArgument("ks_two_sample: empty sample");
  std::vector<double> sa(a.begin(), a.end()), sb(b.begin(), b.end());
  for (double v : sa)
    if (std::isnan(v)) throw InvalidArgument("ks_two_sample: NaN in first sample");
  for (double v : sb)
    if (std::isnan(v)) throw InvalidArgument("ks_two_sample: NaN in second sample");
  std::sort(sa.begin(), sa.end());
  std::sort(sb.begin(), sb.end());

  const double n = static_cast<double>(sa.size());
  const double m = static_cast<double>(sb.size());
  std::size_t i = 0, j = 0;
  double d = 0.0;
  while (i < sa.size() && j < sb.size()) {
    const double t = std::min(sa[i], sb[j]);
    while (i < sa.size() && sa[i] == t) ++i;
    while (j < sb.size() && sb[j] == t) ++j;
    d = std::max(d, std::abs(static_cast<double>(i) / n - static_cast<double>(j) / m));
  }
  // Once one sample is exhausted its ECDF is 1 and the other only climbs toward 1.
  return std::clamp(d, 0.0, 1.0);
}

// ---------------------------------------------------------------------------

double adwin_cut_threshold(std::size_t n0, std::size_t n1, double delta) {
  const double n = static_cast<double>(n0 + n1);
  const double m = 1.0 / (1.0 / static_cast<double>(n0) + 1.0 / static_cast<double>(n1));
  return std::sqrt(std::log(4.0 * n / delta) / (2.0 * m));
}

Adwin::Adwin(AdwinParams params) : params_(params) {
  if (!(params_.delta > 0.0 && params_.delta < 1.0))
    throw InvalidArgument("ADWIN delta must lie in (0, 1)");
}

void Adwin::reset() {
  window_.clear();
  total_ = 0.0;
}

double Adwin::mean() const noexcept {
  return window_.empty() ? 0.0 : total_ / static_cast<double>(window_.size());
}

std::size_t Adwin::find_cut() {
  const std::size_t n = window_.size();
  prefix_.assign(n + 1, 0.0);
  for (std::size_t k = 0; k < n; ++k) prefix_[k + 1] = prefix_[k] + window_[k];
  total_ = prefix_[n];
  for (std::size_t i = 1; i < n; ++i) {
    const double mean_old = prefix_[i] / static_cast<double>(i);
    const double mean_new = (prefix_[n] - prefix_[i]) / static_cast<double>(n - i);
    if (std::abs(mean_old - mean_new) >= adwin_cut_threshold(i, n - i, params_.delta)) return i;
  }
  return 0;
}

bool Adwin::update(double x) {
  require_finite(x, "adwin_update");
  window_.push_back(x);
  bool drift = false;
  for (std::size_t cut = find_cut(); cut > 0; cut = find_cut()) {
    window_.erase(window_.begin(), window_.begin() + static_cast<std::ptrdiff_t>(cut));
    drift = true;
  }
  return drift;
}

// ---------------------------------------------------------------------------

PageHinkley::PageHinkley(PhtParams params) : params_(params) {
  if (!(params_.tolerance >= 0.0)) throw InvalidArgument("PHT tolerance must be >= 0");
  if (!(params_.lambda > 0.0)) throw InvalidArgument("PHT lambda must be > 0");
}

void PageHinkley::reset() {
  mean_ = 0.0;
  sum_up_ = min_up_ = 0.0;
  sum_down_ = min_down_ = 0.0;
  count_ = 0;
}

bool PageHinkley::update(double x) {
  require_finite(x, "pht_update");
  ++count_;
  mean_ += (x - mean_) / static_cast<double>(count_);
  sum_up_ += x - mean_ - params_.tolerance;
  sum_down_ += mean_ - x - params_.tolerance;
  min_up_ = std::min(min_up_, sum_up_);
  min_down_ = std::min(min_down_, sum_down_);
  if (upward_statistic() > params_.lambda || downward_statistic() > params_.lambda) {
    reset();
    return true;
  }
  return false;
}

// ---------------------------------------------------------------------------

Kswin::Kswin(KswinParams params) : params_(params), threshold_(0.0), rng_(params.seed) {
  if (!(params_.alpha > 0.0 && params_.alpha < 1.0))
    throw InvalidArgument("KSWIN alpha must lie in (0, 1)");
  if (params_.recent_size == 0 || params_.recent_size >= params_.window_size)
    throw InvalidArgument("KSWIN needs 0 < recent_size < window_size");
  if (params_.window_size - params_.recent_size < params_.recent_size)
    throw InvalidArgument("KSWIN needs window_size - recent_size >= recent_size");
  threshold_ = std::sqrt(-std::log(params_.alpha) / static_cast<double>(params_.recent_size));
}

void Kswin::reset() {
  window_.clear();
  last_stat_ = 0.0;
}

bool Kswin::update(double x) {
  require_finite(x, "kswin_update");
  if (window_.size() == params_.window_size) window_.pop_front();
  window_.push_back(x);
  if (window_.size() < params_.window_size) return false;

  const std::size_t r = params_.recent_size;
  const std::size_t older = params_.window_size - r;

  // Partial Fisher-Yates: first r entries of pool_ are a uniform draw without replacement.
  pool_.resize(older);
  std::iota(pool_.begin(), pool_.end(), std::size_t{0});
  sample_.resize(r);
  for (std::size_t k = 0; k < r; ++k) {
    const std::size_t pick = k + static_cast<std::size_t>(rng_.below(older - k));
    std::swap(pool_[k], pool_[pick]);
    sample_[k] = window_[pool_[k]];
  }
  recent_.assign(window_.end() - static_cast<std::ptrdiff_t>(r), window_.end());

  last_stat_ = ks_two_sample(recent_, sample_);
  if (last_stat_ > threshold_) {
    window_.erase(window_.begin(), window_.end() - static_cast<std::ptrdiff_t>(r));
    return true;
  }
  return false;
}

}  // namespace driftfed::detect
