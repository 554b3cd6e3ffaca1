#include "driftfed/stream.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <ostream>
#include <set>

#include "driftfed/errors.hpp"
#include "driftfed/rng.hpp"

namespace driftfed::stream {

const char* to_string(Transition t) noexcept {
  switch (t) {
    case Transition::abrupt: return "abrupt";
    case Transition::gradual: return "gradual";
    case Transition::incremental: return "incremental";
    case Transition::recurring: return "recurring";
  }
  return "abrupt";
}

Transition transition_from_string(const std::string& name) {
  if (name == "abrupt") return Transition::abrupt;
  if (name == "gradual") return Transition::gradual;
  if (name == "incremental") return Transition::incremental;
  if (name == "recurring") return Transition::recurring;
  throw ScheduleError("unknown transition kind '" + name + "'");
}

void ConceptParams::validate(const std::string& id) const {
  const std::string where = "concept '" + id + "': ";
  if (benign_mean.empty() || benign_mean.size() != malware_mean.size())
    throw ScheduleError(where + "class means must be nonempty and of equal dimension");
  if (benign_mean == malware_mean)
    throw ScheduleError(where + "class means must be distinct");
  for (std::size_t i = 0; i < benign_mean.size(); ++i) {
    if (!std::isfinite(benign_mean[i]) || !std::isfinite(malware_mean[i]))
      throw ScheduleError(where + "class means must be finite");
  }
  if (!(covariance_scale > 0.0) || !std::isfinite(covariance_scale))
    throw ScheduleError(where + "covariance scale must be positive");
  if (!(label_flip_rate >= 0.0 && label_flip_rate <= 0.5))
    throw ScheduleError(where + "label_flip_rate must lie in [0, 0.5]");
  if (!(malware_fraction > 0.0 && malware_fraction < 1.0))
    throw ScheduleError(where + "malware_fraction must lie in (0, 1)");
}

const ConceptParams& ConceptSchedule::concept_params(const std::string& id) const {
  auto it = concepts_.find(id);
  if (it == concepts_.end()) throw ScheduleError("unknown concept '" + id + "'");
  return it->second;
}

std::size_t ConceptSchedule::segment_index(int month) const {
  if (month < 0 || month >= months_)
    throw RangeError("month " + std::to_string(month) + " outside [0, " +
                     std::to_string(months_) + ")");
  auto it = std::upper_bound(segments_.begin(), segments_.end(), month,
                             [](int m, const Segment& s) { return m < s.start; });
  return static_cast<std::size_t>(std::distance(segments_.begin(), it)) - 1;
}

ConceptSchedule build_schedule(const ScheduleSpec& spec) {
  if (spec.months <= 0) throw ScheduleError("month count must be positive");
  if (spec.concepts.empty()) throw ScheduleError("schedule declares no concepts");
  if (spec.segments.empty()) throw ScheduleError("schedule declares no segments");

  std::size_t dim = spec.concepts.begin()->second.dim();
  for (const auto& [id, params] : spec.concepts) {
    params.validate(id);
    if (params.dim() != dim)
      throw ScheduleError("concept '" + id + "' has dimension " +
                          std::to_string(params.dim()) + ", expected " + std::to_string(dim));
  }

  int expected_start = 0;
  std::set<std::string> seen;
  for (std::size_t i = 0; i < spec.segments.size(); ++i) {
    const Segment& s = spec.segments[i];
    const std::string where = "segment " + std::to_string(i) + " [" + std::to_string(s.start) +
                              "," + std::to_string(s.end) + "): ";
    if (s.end <= s.start) throw ScheduleError(where + "empty or reversed range");
    if (s.start < expected_start)
      throw ScheduleError(where + "overlaps the previous segment");
    if (s.start > expected_start)
      throw ScheduleError(where + "leaves a gap starting at month " +
                          std::to_string(expected_start));
    if (!spec.concepts.contains(s.concept_id))
      throw ScheduleError(where + "references unknown concept '" + s.concept_id + "'");
    if (s.transition == Transition::recurring && !seen.contains(s.concept_id))
      throw ScheduleError(where + "recurring concept '" + s.concept_id +
                          "' has not appeared earlier");
    seen.insert(s.concept_id);
    expected_start = s.end;
  }
  if (expected_start != spec.months)
    throw ScheduleError("segments end at month " + std::to_string(expected_start) +
                        " but the schedule has " + std::to_string(spec.months) + " months");

  ConceptSchedule out;
  out.months_ = spec.months;
  out.feature_dim_ = dim;
  out.segments_ = spec.segments;
  out.concepts_ = spec.concepts;
  return out;
}

void LabeledBatch::push_back(std::span<const double> x, std::uint8_t label) {
  if (x.size() != dim) throw ShapeError("row has " + std::to_string(x.size()) +
                                        " features, batch expects " + std::to_string(dim));
  features.insert(features.end(), x.begin(), x.end());
  labels.push_back(label);
}

void LabeledBatch::append(const LabeledBatch& other) {
  if (other.empty()) return;
  if (empty() && dim == 0) dim = other.dim;
  if (other.dim != dim) throw ShapeError("cannot append batches of different dimension");
  features.insert(features.end(), other.features.begin(), other.features.end());
  labels.insert(labels.end(), other.labels.begin(), other.labels.end());
}

LabeledBatch LabeledBatch::select(std::span<const std::size_t> indices) const {
  LabeledBatch out(dim);
  out.month = month;
  out.true_concept = true_concept;
  out.features.reserve(indices.size() * dim);
  out.labels.reserve(indices.size());
  for (std::size_t i : indices) {
    if (i >= size()) throw RangeError("row index out of range");
    out.push_back(row(i), labels[i]);
  }
  return out;
}

std::size_t LabeledBatch::count_label(std::uint8_t label) const {
  return static_cast<std::size_t>(std::count(labels.begin(), labels.end(), label));
}

namespace {

ConceptParams interpolate(const ConceptParams& from, const ConceptParams& to, double t) {
  ConceptParams p = to;
  for (std::size_t i = 0; i < p.dim(); ++i) {
    p.benign_mean[i] = (1.0 - t) * from.benign_mean[i] + t * to.benign_mean[i];
    p.malware_mean[i] = (1.0 - t) * from.malware_mean[i] + t * to.malware_mean[i];
  }
  p.covariance_scale = (1.0 - t) * from.covariance_scale + t * to.covariance_scale;
  p.label_flip_rate = (1.0 - t) * from.label_flip_rate + t * to.label_flip_rate;
  p.malware_fraction = (1.0 - t) * from.malware_fraction + t * to.malware_fraction;
  return p;
}

void draw_sample(const ConceptParams& c, Rng& rng, std::vector<double>& x, std::uint8_t& label) {
  label = rng.bernoulli(c.malware_fraction) ? 1 : 0;
  const auto& mean = label ? c.malware_mean : c.benign_mean;
  for (std::size_t j = 0; j < x.size(); ++j) x[j] = mean[j] + c.covariance_scale * rng.normal();
  if (c.label_flip_rate > 0.0 && rng.bernoulli(c.label_flip_rate)) label ^= 1;
}

}  // namespace

LabeledBatch generate_month(const ConceptSchedule& schedule, int month, std::size_t count,
                            std::uint64_t seed) {
  if (count == 0) throw InvalidArgument("sample count must be positive");
  const std::size_t idx = schedule.segment_index(month);
  const Segment& seg = schedule.segments()[idx];
  const ConceptParams& target = schedule.concept_params(seg.concept_id);

  // Position within the transition segment, reaching 1 in its last month.
  const double t = static_cast<double>(month - seg.start + 1) / (seg.end - seg.start);
  const ConceptParams* previous =
      idx > 0 ? &schedule.concept_params(schedule.segments()[idx - 1].concept_id) : nullptr;

  LabeledBatch batch(schedule.feature_dim());
  batch.month = month;
  batch.true_concept = seg.concept_id;
  batch.features.reserve(count * batch.dim);
  batch.labels.reserve(count);

  Rng rng(seed);
  std::vector<double> x(batch.dim);
  std::uint8_t label = 0;

  if (previous && seg.transition == Transition::gradual) {
    for (std::size_t i = 0; i < count; ++i) {
      const bool use_new = rng.uniform() < t;
      draw_sample(use_new ? target : *previous, rng, x, label);
      batch.push_back(x, label);
    }
    return batch;
  }

  const ConceptParams active = (previous && seg.transition == Transition::incremental)
                                   ? interpolate(*previous, target, t)
                                   : target;
  for (std::size_t i = 0; i < count; ++i) {
    draw_sample(active, rng, x, label);
    batch.push_back(x, label);
  }
  return batch;
}

std::map<std::string, ConceptParams> default_concept_library(const LibraryOptions& opts) {
  if (opts.feature_dim < 8)
    throw InvalidArgument("the default concept library needs feature_dim >= 8");
  const std::size_t d = opts.feature_dim;
  const std::size_t block = std::min<std::size_t>(4, d / 2);

  // Two orthonormal directions: a spreads over the first block, b over the second.
  std::vector<double> a(d, 0.0), b(d, 0.0);
  const double norm = 1.0 / std::sqrt(static_cast<double>(block));
  for (std::size_t j = 0; j < block; ++j) {
    a[j] = norm;
    b[block + j] = norm;
  }

  std::map<std::string, ConceptParams> lib;
  const double step = opts.rotation_deg * std::numbers::pi / 180.0;
  for (int k = 0; k < 4; ++k) {
    ConceptParams c;
    c.benign_mean.assign(d, 0.0);
    c.malware_mean.assign(d, 0.0);
    const double angle = k * step;
    for (std::size_t j = 0; j < d; ++j) {
      c.benign_mean[j] = -opts.benign_shift * k * a[j];
      c.malware_mean[j] =
          c.benign_mean[j] + opts.separation * (std::cos(angle) * a[j] + std::sin(angle) * b[j]);
    }
    c.covariance_scale = opts.covariance_scale;
    c.malware_fraction = opts.malware_fraction;
    lib.emplace("C" + std::to_string(k + 1), std::move(c));
  }
  return lib;
}

void write_batch_csv(std::ostream& out, std::span<const LabeledBatch> batches) {
  const std::size_t d = batches.empty() ? 0 : batches.front().dim;
  out << "month,concept,label";
  for (std::size_t j = 0; j < d; ++j) out << ",f" << j;
  out << '\n';
  const auto old_precision = out.precision(17);
  for (const auto& b : batches) {
    if (b.dim != d) throw ShapeError("batches in one CSV must share a dimension");
    for (std::size_t i = 0; i < b.size(); ++i) {
      out << b.month << ',' << b.true_concept << ',' << static_cast<int>(b.labels[i]);
      for (double v : b.row(i)) out << ',' << v;
      out << '\n';
    }
  }
  out.precision(old_precision);
}

}  // namespace driftfed::stream
