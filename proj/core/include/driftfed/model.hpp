#pragma once

// Stand-in binary classifier: logistic regression, or one ReLU hidden layer
// feeding a sigmoid output. Parameters live in one flat vector so that
// federated averaging and deployment treat every architecture alike.
//
// Layout (hidden_dim == 0):  [w_0 .. w_{d-1}, b]
// Layout (hidden_dim == h):  [W1 (h x d, row-major), b1 (h), w2 (h), b2]

#include <cstddef>
#include <cstdint>
#include <span>
#include <utility>
#include <vector>

#include "driftfed/stream.hpp"

namespace driftfed::model {

struct Arch {
  std::size_t feature_dim = 16;
  std::size_t hidden_dim = 0;

  std::size_t param_count() const noexcept {
    return hidden_dim == 0 ? feature_dim + 1
                           : feature_dim * hidden_dim + 2 * hidden_dim + 1;
  }
  bool operator==(const Arch&) const = default;
};

struct ModelParams {
  Arch arch;
  std::vector<double> values;

  /// Throws ShapeError / InvalidArgument when the invariants are broken.
  void validate() const;
  bool operator==(const ModelParams&) const = default;
};

/// Adam with the usual constants (beta1 = 0.9, beta2 = 0.999, eps = 1e-8).
struct TrainHyper {
  double learning_rate = 0.003;
  std::size_t batch_size = 4;
  int max_epochs = 200;
  std::uint64_t seed = 0;

  void validate() const;
};

inline constexpr double kAdamBeta1 = 0.9;
inline constexpr double kAdamBeta2 = 0.999;
inline constexpr double kAdamEpsilon = 1e-8;
inline constexpr double kDecisionThreshold = 0.5;

struct LossEntry {
  double train_loss = 0.0;
  double val_loss = 0.0;
};

struct LossTrace {
  std::vector<LossEntry> epochs;

  std::size_t size() const noexcept { return epochs.size(); }
  bool empty() const noexcept { return epochs.empty(); }
};

struct ClassWeights {
  double benign = 1.0;
  double malware = 1.0;

  double operator[](std::uint8_t label) const noexcept { return label ? malware : benign; }
};

/// Draws every entry from U(-0.1, 0.1). Deterministic in (arch, seed).
ModelParams init_model(const Arch& arch, std::uint64_t seed);

/// w_c = 1/sqrt(n_c), rescaled so the two weights average to 1.
/// Throws DegenerateDataError when a class is absent.
ClassWeights class_weights(std::span<const std::uint8_t> labels);
ClassWeights class_weights_from_counts(std::size_t benign, std::size_t malware);

/// Mean weighted binary cross-entropy over the batch.
double loss(const ModelParams& params, const stream::LabeledBatch& batch,
            const ClassWeights& weights = {});

/// Same loss; writes d(loss)/d(params) into `grad` (size param_count()).
double loss_and_gradient(const ModelParams& params, const stream::LabeledBatch& batch,
                         const ClassWeights& weights, std::span<double> grad);

/// Positive-class probabilities for a row-major feature matrix.
std::vector<double> predict_confidence(const ModelParams& params,
                                       std::span<const double> features);
std::vector<double> predict_confidence(const ModelParams& params,
                                       const stream::LabeledBatch& batch);

/// F1 of the positive class; predictions >= threshold count as positive.
double f1_score(std::span<const double> predictions, std::span<const std::uint8_t> labels,
                double threshold = kDecisionThreshold);
double f1_from_counts(std::size_t tp, std::size_t fp, std::size_t fn) noexcept;

/// Mini-batch Adam, one epoch at a time. Holds references to the data sets,
/// which must outlive the trainer.
class Trainer {
 public:
  Trainer(ModelParams init, const stream::LabeledBatch& train, const stream::LabeledBatch& val,
          const TrainHyper& hyper, bool weighted);

  /// Runs one epoch and records full-set train/val losses.
  /// Throws DivergenceError when a loss is not finite.
  const LossEntry& step_epoch();

  const ModelParams& params() const noexcept { return params_; }
  const LossTrace& trace() const noexcept { return trace_; }
  int epochs() const noexcept { return static_cast<int>(trace_.size()); }
  const ClassWeights& weights() const noexcept { return weights_; }

 private:
  ModelParams params_;
  const stream::LabeledBatch& train_;
  const stream::LabeledBatch& val_;
  TrainHyper hyper_;
  ClassWeights weights_;
  std::vector<double> m_, v_, grad_;
  std::vector<std::size_t> order_;
  std::uint64_t step_ = 0;
  std::uint64_t shuffle_seed_;
  LossTrace trace_;
};

/// Trains for exactly hyper.max_epochs epochs.
std::pair<ModelParams, LossTrace> train(const ModelParams& params,
                                        const stream::LabeledBatch& train_set,
                                        const stream::LabeledBatch& val_set,
                                        const TrainHyper& hyper, bool weighted);

}  // namespace driftfed::model
