#include <cmath>

#include "doctest.h"
#include "driftfed/errors.hpp"
#include "driftfed/model.hpp"
#include "driftfed/rng.hpp"
#include "oracles.hpp"

using namespace driftfed;
using namespace driftfed::model;
using stream::LabeledBatch;

namespace {

LabeledBatch gaussian_set(std::size_t n, std::size_t d, double malware_fraction, double sep,
                          std::uint64_t seed) {
  Rng rng(seed);
  LabeledBatch b(d);
  std::vector<double> x(d);
  for (std::size_t i = 0; i < n; ++i) {
    const std::uint8_t y = rng.bernoulli(malware_fraction) ? 1 : 0;
    for (std::size_t j = 0; j < d; ++j) x[j] = rng.normal() + (y && j < 2 ? sep : 0.0);
    b.push_back(x, y);
  }
  return b;
}

double recall(const ModelParams& p, const LabeledBatch& b) {
  const auto conf = predict_confidence(p, b);
  std::size_t tp = 0, pos = 0;
  for (std::size_t i = 0; i < b.size(); ++i) {
    if (!b.labels[i]) continue;
    ++pos;
    tp += conf[i] >= kDecisionThreshold ? 1 : 0;
  }
  return static_cast<double>(tp) / static_cast<double>(pos);
}

}  // namespace

TEST_CASE("parameter counts") {
  CHECK(Arch{16, 0}.param_count() == 17);
  CHECK(Arch{16, 8}.param_count() == 145);
  CHECK(init_model({16, 0}, 1).values.size() == 17);
  CHECK(init_model({16, 8}, 1).values.size() == 145);
}

TEST_CASE("init_model is deterministic and bounded") {
  const auto a = init_model({16, 8}, 5);
  const auto b = init_model({16, 8}, 5);
  CHECK(a == b);
  CHECK(a != init_model({16, 8}, 6));
  for (double v : a.values) {
    CHECK(v >= -0.1);
    CHECK(v < 0.1);
  }
}

TEST_CASE("params validation") {
  auto p = init_model({4, 0}, 1);
  p.values.pop_back();
  CHECK_THROWS_AS(p.validate(), ShapeError);
  p = init_model({4, 0}, 1);
  p.values[0] = std::nan("");
  CHECK_THROWS(p.validate());
}

TEST_CASE("class weights") {
  const auto w = class_weights_from_counts(900, 100);
  CHECK(w.benign == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(w.malware == doctest::Approx(1.5).epsilon(1e-12));
  const auto eq = class_weights_from_counts(100, 100);
  CHECK(eq.benign == doctest::Approx(1.0));
  CHECK(eq.malware == doctest::Approx(1.0));
  CHECK_THROWS_AS(class_weights_from_counts(400, 0), DegenerateDataError);
  const std::vector<std::uint8_t> labels{0, 0, 0, 1};
  const auto from_labels = class_weights(labels);
  // raw 1/sqrt(3), 1; scaled to mean 1
  const double s = 2.0 / (1.0 / std::sqrt(3.0) + 1.0);
  CHECK(from_labels.benign == doctest::Approx(s / std::sqrt(3.0)));
  CHECK(from_labels.malware == doctest::Approx(s));
}

TEST_CASE("predictions") {
  ModelParams zero{{3, 0}, std::vector<double>(4, 0.0)};
  const std::vector<double> x{1, 2, 3, -4, 5, -6};
  for (double c : predict_confidence(zero, x)) CHECK(c == 0.5);

  const auto p = init_model({3, 4}, 2);
  for (double c : predict_confidence(p, x)) {
    CHECK(c >= 0.0);
    CHECK(c <= 1.0);
  }
  CHECK_THROWS_AS(predict_confidence(p, std::vector<double>{1, 2}), ShapeError);

  // Logistic arch: raising a feature with positive weight raises the output.
  ModelParams lin{{3, 0}, {0.7, -0.2, 0.1, 0.05}};
  const std::vector<double> base{0.3, 0.1, -0.4};
  auto bumped = base;
  bumped[0] += 1e-3;
  CHECK(predict_confidence(lin, bumped)[0] > predict_confidence(lin, base)[0]);
}

TEST_CASE("f1 score") {
  const std::vector<std::uint8_t> labels{1, 0, 1, 0};
  CHECK(f1_score(std::vector<double>{0.9, 0.1, 0.8, 0.2}, labels) == 1.0);
  CHECK(f1_score(std::vector<double>{0.1, 0.1, 0.1, 0.1}, labels) == 0.0);
  CHECK(f1_from_counts(8, 2, 4) == doctest::Approx(oracle::f1(8, 2, 4)).epsilon(1e-15));
  CHECK(f1_from_counts(8, 2, 4) == doctest::Approx(0.7273).epsilon(1e-4));
  CHECK_THROWS_AS(f1_score(std::vector<double>{}, std::vector<std::uint8_t>{}), InvalidArgument);
  CHECK_THROWS_AS(f1_score(std::vector<double>{0.5}, labels), ShapeError);
}

TEST_CASE("analytic gradient matches finite differences") {
  for (std::size_t hidden : {0u, 3u}) {
    const auto p = init_model({5, hidden}, 17 + hidden);
    const auto batch = gaussian_set(12, 5, 0.3, 1.5, 4);
    const auto w = class_weights(batch.labels);
    std::vector<double> g(p.values.size());
    const double l = loss_and_gradient(p, batch, w, g);
    CHECK(l == doctest::Approx(loss(p, batch, w)).epsilon(1e-14));
    const auto fd = oracle::finite_difference_gradient(p, batch, w);
    for (std::size_t i = 0; i < g.size(); ++i)
      CHECK(g[i] == doctest::Approx(fd[i]).epsilon(1e-5).scale(1e-3));
  }
}

TEST_CASE("loss on a hand-computed example") {
  ModelParams p{{1, 0}, {2.0, -1.0}};
  LabeledBatch b(1);
  b.push_back(std::vector<double>{1.0}, 1);
  b.push_back(std::vector<double>{0.0}, 0);
  // z = 1 (y=1): log(1 + e^-1); z = -1 (y=0): log(1 + e^-1)
  const double expected = std::log1p(std::exp(-1.0));
  CHECK(loss(p, b) == doctest::Approx(expected).epsilon(1e-14));
}

TEST_CASE("training descends on separable data") {
  const auto train_set = gaussian_set(200, 4, 0.5, 4.0, 1);
  const auto val_set = gaussian_set(50, 4, 0.5, 4.0, 2);
  TrainHyper h;
  h.max_epochs = 50;
  h.seed = 3;
  const auto init = init_model({4, 0}, 9);
  const auto [params, trace] = train(init, train_set, val_set, h, true);
  REQUIRE(trace.size() == 50);
  CHECK(trace.epochs.back().train_loss < loss(init, train_set, class_weights(train_set.labels)));
  CHECK(trace.epochs.back().train_loss < trace.epochs.front().train_loss);
}

TEST_CASE("zero learning rate leaves parameters unchanged") {
  const auto train_set = gaussian_set(40, 3, 0.5, 2.0, 1);
  TrainHyper h;
  h.learning_rate = 0.0;
  h.max_epochs = 5;
  const auto init = init_model({3, 2}, 4);
  const auto [params, trace] = train(init, train_set, train_set, h, false);
  CHECK(params == init);
  for (const auto& e : trace.epochs) CHECK(e.train_loss == trace.epochs.front().train_loss);
}

TEST_CASE("training is reproducible") {
  const auto train_set = gaussian_set(60, 3, 0.3, 2.0, 1);
  TrainHyper h;
  h.max_epochs = 10;
  h.seed = 12;
  const auto init = init_model({3, 4}, 4);
  const auto a = train(init, train_set, train_set, h, true);
  const auto b = train(init, train_set, train_set, h, true);
  CHECK(a.first == b.first);
}

TEST_CASE("class weighting raises minority recall") {
  // 90/10 imbalance with overlapping classes: the unweighted loss favours
  // predicting benign, the weighted loss trades precision for recall.
  const auto train_set = gaussian_set(1000, 4, 0.1, 1.5, 21);
  const auto val_set = gaussian_set(200, 4, 0.1, 1.5, 22);
  const auto held_out = gaussian_set(4000, 4, 0.1, 1.5, 23);
  TrainHyper h;
  h.max_epochs = 20;
  h.seed = 5;
  const auto init = init_model({4, 0}, 6);
  const auto weighted = train(init, train_set, val_set, h, true).first;
  const auto plain = train(init, train_set, val_set, h, false).first;
  CHECK(recall(weighted, held_out) > recall(plain, held_out));
}

TEST_CASE("divergence is reported") {
  auto train_set = gaussian_set(20, 2, 0.5, 1.0, 1);
  train_set.features[0] = 1e308;
  TrainHyper h;
  h.learning_rate = 1e6;
  h.max_epochs = 3;
  const auto init = init_model({2, 0}, 1);
  Trainer t(init, train_set, train_set, h, false);
  CHECK_THROWS_AS(
      [&] {
        for (int i = 0; i < 3; ++i) t.step_epoch();
      }(),
      DivergenceError);
}
