#pragma once

// Seeded synthetic data streams with scheduled concept drift.

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <map>
#include <span>
#include <string>
#include <vector>

namespace driftfed::stream {

enum class Transition { abrupt, gradual, incremental, recurring };

const char* to_string(Transition t) noexcept;
Transition transition_from_string(const std::string& name);

/// Class-conditional isotropic Gaussians: x | y ~ N(class_means[y], scale^2 I).
struct ConceptParams {
  std::vector<double> benign_mean;
  std::vector<double> malware_mean;
  double covariance_scale = 1.0;
  double label_flip_rate = 0.0;
  double malware_fraction = 0.1;

  std::size_t dim() const noexcept { return benign_mean.size(); }
  /// Throws ScheduleError when an invariant does not hold.
  void validate(const std::string& id) const;

  bool operator==(const ConceptParams&) const = default;
};

struct Segment {
  int start = 0;  // inclusive month
  int end = 0;    // exclusive month
  std::string concept_id;
  Transition transition = Transition::abrupt;
};

/// Unvalidated schedule description, as read from a config file.
struct ScheduleSpec {
  int months = 0;
  std::map<std::string, ConceptParams> concepts;
  std::vector<Segment> segments;
};

class ConceptSchedule {
 public:
  int months() const noexcept { return months_; }
  std::size_t feature_dim() const noexcept { return feature_dim_; }
  const std::vector<Segment>& segments() const noexcept { return segments_; }
  const std::map<std::string, ConceptParams>& concepts() const noexcept { return concepts_; }
  const ConceptParams& concept_params(const std::string& id) const;

  /// Index of the segment covering `month`. Throws RangeError outside [0, months).
  std::size_t segment_index(int month) const;
  const Segment& segment_at(int month) const { return segments_[segment_index(month)]; }

 private:
  friend ConceptSchedule build_schedule(const ScheduleSpec& spec);

  int months_ = 0;
  std::size_t feature_dim_ = 0;
  std::vector<Segment> segments_;
  std::map<std::string, ConceptParams> concepts_;
};

/// Validates tiling and concept references. Throws ScheduleError.
ConceptSchedule build_schedule(const ScheduleSpec& spec);

/// Row-major sample matrix plus binary labels (0 = benign, 1 = malware).
struct LabeledBatch {
  std::size_t dim = 0;
  std::vector<double> features;
  std::vector<std::uint8_t> labels;
  int month = -1;
  std::string true_concept;

  LabeledBatch() = default;
  explicit LabeledBatch(std::size_t d) : dim(d) {}

  std::size_t size() const noexcept { return labels.size(); }
  bool empty() const noexcept { return labels.empty(); }
  std::span<const double> row(std::size_t i) const {
    return {features.data() + i * dim, dim};
  }
  void push_back(std::span<const double> x, std::uint8_t label);
  void append(const LabeledBatch& other);
  /// Rows listed in `indices`, in that order.
  LabeledBatch select(std::span<const std::size_t> indices) const;
  std::size_t count_label(std::uint8_t label) const;
};

/// Draws `count` samples for `month`. Pure function of its arguments.
LabeledBatch generate_month(const ConceptSchedule& schedule, int month, std::size_t count,
                            std::uint64_t seed);

/// Severity knobs of the built-in concept library.
struct LibraryOptions {
  std::size_t feature_dim = 16;
  double separation = 7.0;      // distance between class means within a concept
  double rotation_deg = 50.0;   // malware-mean rotation between consecutive concepts
  double benign_shift = 1.0;    // benign-mean displacement per concept step
  double covariance_scale = 1.0;
  double malware_fraction = 0.1;
};

/// Four concepts "C1".."C4". Requires feature_dim >= 8.
std::map<std::string, ConceptParams> default_concept_library(const LibraryOptions& opts = {});

/// CSV dump with header `month,concept,label,f0..f{d-1}`.
void write_batch_csv(std::ostream& out, std::span<const LabeledBatch> batches);

}  // namespace driftfed::stream
