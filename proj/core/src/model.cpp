#include "driftfed/model.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "driftfed/errors.hpp"
#include "driftfed/rng.hpp"

namespace driftfed::model {

using stream::LabeledBatch;

void ModelParams::validate() const {
  if (arch.feature_dim == 0) throw InvalidArgument("feature_dim must be positive");
  if (values.size() != arch.param_count())
    throw ShapeError("parameter vector has " + std::to_string(values.size()) +
                     " entries, architecture needs " + std::to_string(arch.param_count()));
  for (double v : values)
    if (!std::isfinite(v)) throw InvalidArgument("parameter vector contains a non-finite value");
}

void TrainHyper::validate() const {
  if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate))
    throw InvalidArgument("learning_rate must be a finite non-negative number");
  if (batch_size < 1) throw InvalidArgument("batch_size must be at least 1");
  if (max_epochs < 1) throw InvalidArgument("max_epochs must be at least 1");
}

ModelParams init_model(const Arch& arch, std::uint64_t seed) {
  if (arch.feature_dim == 0) throw InvalidArgument("feature_dim must be positive");
  ModelParams p{arch, std::vector<double>(arch.param_count())};
  Rng rng(derive_seed(seed, "model.init"));
  for (double& v : p.values) v = rng.uniform(-0.1, 0.1);
  return p;
}

ClassWeights class_weights_from_counts(std::size_t benign, std::size_t malware) {
  if (benign == 0 || malware == 0)
    throw DegenerateDataError("class weights need both classes (benign=" +
                              std::to_string(benign) + ", malware=" + std::to_string(malware) +
                              ")");
  const double raw_benign = 1.0 / std::sqrt(static_cast<double>(benign));
  const double raw_malware = 1.0 / std::sqrt(static_cast<double>(malware));
  const double scale = 2.0 / (raw_benign + raw_malware);
  return {raw_benign * scale, raw_malware * scale};
}

ClassWeights class_weights(std::span<const std::uint8_t> labels) {
  std::size_t malware = 0;
  for (auto y : labels) malware += (y != 0);
  return class_weights_from_counts(labels.size() - malware, malware);
}

namespace {

double sigmoid(double z) {
  if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

double softplus(double z) {
  return z > 0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z));
}

// Forward pass for one row. `hidden` receives pre-activations when non-empty.
double logit(const ModelParams& p, std::span<const double> x, std::span<double> hidden) {
  const std::size_t d = p.arch.feature_dim;
  const double* v = p.values.data();
  if (p.arch.hidden_dim == 0) {
    double z = v[d];
    for (std::size_t k = 0; k < d; ++k) z += v[k] * x[k];
    return z;
  }
  const std::size_t h = p.arch.hidden_dim;
  const double* b1 = v + h * d;
  const double* w2 = b1 + h;
  double z = w2[h];
  for (std::size_t j = 0; j < h; ++j) {
    double a = b1[j];
    const double* row = v + j * d;
    for (std::size_t k = 0; k < d; ++k) a += row[k] * x[k];
    if (!hidden.empty()) hidden[j] = a;
    if (a > 0) z += w2[j] * a;
  }
  return z;
}

// Adds weight * dz/dparams for one row into grad.
void accumulate_gradient(const ModelParams& p, std::span<const double> x,
                         std::span<const double> hidden, double scale, std::span<double> grad) {
  const std::size_t d = p.arch.feature_dim;
  if (p.arch.hidden_dim == 0) {
    for (std::size_t k = 0; k < d; ++k) grad[k] += scale * x[k];
    grad[d] += scale;
    return;
  }
  const std::size_t h = p.arch.hidden_dim;
  const double* w2 = p.values.data() + h * d + h;
  double* g_w1 = grad.data();
  double* g_b1 = g_w1 + h * d;
  double* g_w2 = g_b1 + h;
  for (std::size_t j = 0; j < h; ++j) {
    if (hidden[j] <= 0) continue;
    g_w2[j] += scale * hidden[j];
    const double back = scale * w2[j];
    g_b1[j] += back;
    double* row = g_w1 + j * d;
    for (std::size_t k = 0; k < d; ++k) row[k] += back * x[k];
  }
  g_w2[h] += scale;
}

void check_batch(const ModelParams& p, const LabeledBatch& batch) {
  if (batch.dim != p.arch.feature_dim)
    throw ShapeError("batch has " + std::to_string(batch.dim) + " features, model expects " +
                     std::to_string(p.arch.feature_dim));
}

// Mean weighted BCE over `rows`; gradient written when grad is non-empty.
double loss_over(const ModelParams& p, const LabeledBatch& batch,
                 std::span<const std::size_t> rows, const ClassWeights& w,
                 std::span<double> grad) {
  if (!grad.empty()) std::fill(grad.begin(), grad.end(), 0.0);
  if (rows.empty()) return 0.0;
  std::vector<double> hidden(p.arch.hidden_dim);
  const double inv_n = 1.0 / static_cast<double>(rows.size());
  double total = 0.0;
  for (std::size_t i : rows) {
    const auto x = batch.row(i);
    const double y = batch.labels[i] ? 1.0 : 0.0;
    const double z = logit(p, x, hidden);
    const double wy = w[batch.labels[i]];
    total += wy * (softplus(z) - y * z);
    if (!grad.empty()) accumulate_gradient(p, x, hidden, wy * (sigmoid(z) - y) * inv_n, grad);
  }
  return total * inv_n;
}

std::vector<std::size_t> all_rows(const LabeledBatch& batch) {
  std::vector<std::size_t> rows(batch.size());
  std::iota(rows.begin(), rows.end(), std::size_t{0});
  return rows;
}

}  // namespace

double loss(const ModelParams& params, const LabeledBatch& batch, const ClassWeights& weights) {
  check_batch(params, batch);
  const auto rows = all_rows(batch);
  return loss_over(params, batch, rows, weights, {});
}

double loss_and_gradient(const ModelParams& params, const LabeledBatch& batch,
                         const ClassWeights& weights, std::span<double> grad) {
  check_batch(params, batch);
  if (grad.size() != params.values.size())
    throw ShapeError("gradient buffer does not match the parameter count");
  const auto rows = all_rows(batch);
  return loss_over(params, batch, rows, weights, grad);
}

std::vector<double> predict_confidence(const ModelParams& params,
                                       std::span<const double> features) {
  const std::size_t d = params.arch.feature_dim;
  if (d == 0 || features.size() % d != 0)
    throw ShapeError("feature matrix of " + std::to_string(features.size()) +
                     " values is not a multiple of feature_dim " + std::to_string(d));
  if (params.values.size() != params.arch.param_count())
    throw ShapeError("parameter vector does not match its architecture");
  const std::size_t n = features.size() / d;
  std::vector<double> out(n);
  std::vector<double> hidden(params.arch.hidden_dim);
  for (std::size_t i = 0; i < n; ++i)
    out[i] = sigmoid(logit(params, features.subspan(i * d, d), hidden));
  return out;
}

std::vector<double> predict_confidence(const ModelParams& params, const LabeledBatch& batch) {
  check_batch(params, batch);
  return predict_confidence(params, std::span<const double>(batch.features));
}

double f1_from_counts(std::size_t tp, std::size_t fp, std::size_t fn) noexcept {
  if (tp == 0) return 0.0;
  const double precision = static_cast<double>(tp) / static_cast<double>(tp + fp);
  const double recall = static_cast<double>(tp) / static_cast<double>(tp + fn);
  return 2.0 * precision * recall / (precision + recall);
}

double f1_score(std::span<const double> predictions, std::span<const std::uint8_t> labels,
                double threshold) {
  if (predictions.empty()) throw InvalidArgument("f1_score on empty input");
  if (predictions.size() != labels.size())
    throw ShapeError("f1_score: predictions and labels differ in length");
  std::size_t tp = 0, fp = 0, fn = 0;
  for (std::size_t i = 0; i < predictions.size(); ++i) {
    const bool pred = predictions[i] >= threshold;
    const bool truth = labels[i] != 0;
    tp += pred && truth;
    fp += pred && !truth;
    fn += !pred && truth;
  }
  return f1_from_counts(tp, fp, fn);
}

Trainer::Trainer(ModelParams init, const LabeledBatch& train, const LabeledBatch& val,
                 const TrainHyper& hyper, bool weighted)
    : params_(std::move(init)),
      train_(train),
      val_(val),
      hyper_(hyper),
      m_(params_.values.size(), 0.0),
      v_(params_.values.size(), 0.0),
      grad_(params_.values.size(), 0.0),
      order_(all_rows(train)),
      shuffle_seed_(derive_seed(hyper.seed, "model.shuffle")) {
  hyper_.validate();
  params_.validate();
  if (train.empty() || val.empty()) throw InvalidArgument("training and validation sets must be nonempty");
  check_batch(params_, train);
  check_batch(params_, val);
  if (weighted) weights_ = class_weights(train.labels);
}

const LossEntry& Trainer::step_epoch() {
  const int epoch = epochs();
  Rng rng(derive_seed(shuffle_seed_, "epoch", static_cast<std::uint64_t>(epoch)));
  std::iota(order_.begin(), order_.end(), std::size_t{0});
  rng.shuffle(std::span<std::size_t>(order_));

  const double lr = hyper_.learning_rate;
  for (std::size_t start = 0; start < order_.size(); start += hyper_.batch_size) {
    const std::size_t len = std::min(hyper_.batch_size, order_.size() - start);
    loss_over(params_, train_, std::span<const std::size_t>(order_).subspan(start, len), weights_,
              grad_);
    ++step_;
    const double c1 = 1.0 - std::pow(kAdamBeta1, static_cast<double>(step_));
    const double c2 = 1.0 - std::pow(kAdamBeta2, static_cast<double>(step_));
    for (std::size_t k = 0; k < params_.values.size(); ++k) {
      m_[k] = kAdamBeta1 * m_[k] + (1.0 - kAdamBeta1) * grad_[k];
      v_[k] = kAdamBeta2 * v_[k] + (1.0 - kAdamBeta2) * grad_[k] * grad_[k];
      params_.values[k] -= lr * (m_[k] / c1) / (std::sqrt(v_[k] / c2) + kAdamEpsilon);
    }
  }

  LossEntry entry{loss(params_, train_, weights_), loss(params_, val_, weights_)};
  if (!std::isfinite(entry.train_loss) || !std::isfinite(entry.val_loss))
    throw DivergenceError(epoch, "training diverged: non-finite loss at epoch " +
                                     std::to_string(epoch));
  trace_.epochs.push_back(entry);
  return trace_.epochs.back();
}

std::pair<ModelParams, LossTrace> train(const ModelParams& params, const LabeledBatch& train_set,
                                        const LabeledBatch& val_set, const TrainHyper& hyper,
                                        bool weighted) {
  Trainer trainer(params, train_set, val_set, hyper, weighted);
  for (int e = 0; e < hyper.max_epochs; ++e) trainer.step_epoch();
  return {trainer.params(), trainer.trace()};
}

}  // namespace driftfed::model
