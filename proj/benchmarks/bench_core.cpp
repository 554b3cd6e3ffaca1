#include <benchmark/benchmark.h>

#include "driftfed/detectors.hpp"
#include "driftfed/flame.hpp"
#include "driftfed/model.hpp"
#include "driftfed/rng.hpp"
#include "driftfed/stream.hpp"

using namespace driftfed;

namespace {

std::vector<double> uniform_values(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<double> v(n);
  for (auto& x : v) x = rng.uniform();
  return v;
}

void BM_KsTwoSample(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const auto a = uniform_values(n, 1), b = uniform_values(n, 2);
  for (auto _ : state) benchmark::DoNotOptimize(detect::ks_two_sample(a, b));
  state.SetComplexityN(state.range(0));
}
BENCHMARK(BM_KsTwoSample)->RangeMultiplier(4)->Range(16, 4096)->Complexity();

template <typename Detector>
void run_detector(benchmark::State& state, Detector proto) {
  const auto xs = uniform_values(4096, 3);
  for (auto _ : state) {
    Detector d = proto;
    int hits = 0;
    for (double x : xs) hits += d.update(x);
    benchmark::DoNotOptimize(hits);
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(xs.size()));
}

void BM_Adwin(benchmark::State& state) { run_detector(state, detect::Adwin()); }
void BM_PageHinkley(benchmark::State& state) { run_detector(state, detect::PageHinkley()); }
void BM_Kswin(benchmark::State& state) { run_detector(state, detect::Kswin()); }
BENCHMARK(BM_Adwin);
BENCHMARK(BM_PageHinkley);
BENCHMARK(BM_Kswin);

void BM_MonitorUpdate(benchmark::State& state) {
  flame::MonitorState s;
  s.reference_confidences = uniform_values(240, 4);
  const auto live = uniform_values(400, 5);
  for (auto _ : state) benchmark::DoNotOptimize(flame::monitor_update(s, live));
}
BENCHMARK(BM_MonitorUpdate);

void BM_TrainEpoch(benchmark::State& state) {
  const auto lib = stream::default_concept_library();
  stream::ScheduleSpec spec;
  spec.months = 1;
  spec.concepts["C1"] = lib.at("C1");
  spec.segments = {{0, 1, "C1", stream::Transition::abrupt}};
  const auto sched = stream::build_schedule(spec);
  const auto train_set = stream::generate_month(sched, 0, 2160, 6);
  const auto val_set = stream::generate_month(sched, 0, 240, 7);
  const model::Arch arch{16, static_cast<std::size_t>(state.range(0))};
  model::Trainer t(model::init_model(arch, 1), train_set, val_set, {}, true);
  for (auto _ : state) benchmark::DoNotOptimize(t.step_epoch());
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(train_set.size()));
}
BENCHMARK(BM_TrainEpoch)->Arg(0)->Arg(8);

}  // namespace

BENCHMARK_MAIN();
