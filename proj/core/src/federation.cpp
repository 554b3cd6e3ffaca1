#include "driftfed/federation.hpp"

#include <algorithm>
#include <cmath>
#include <future>
#include <limits>
#include <numeric>
#include <sstream>

#include "driftfed/errors.hpp"
#include "driftfed/rng.hpp"

namespace driftfed::fed {

using model::ModelParams;
using stream::LabeledBatch;

// ---------------------------------------------------------------------------
// Topology

Topology Topology::round_robin(std::size_t clients, std::size_t endpoints) {
  Topology t{clients, endpoints, {}};
  for (std::size_t e = 0; e < endpoints; ++e)
    t.endpoint_to_client.push_back(clients == 0 ? 0 : e % clients);
  return t;
}

void Topology::validate() const {
  if (n_clients == 0) throw ConfigError("topology.clients", "need at least one client");
  if (n_endpoints == 0) throw ConfigError("topology.endpoints", "need at least one endpoint");
  if (endpoint_to_client.size() != n_endpoints)
    throw ConfigError("topology.endpoint_to_client", "must list one client per endpoint");
  std::vector<bool> covered(n_clients, false);
  for (std::size_t c : endpoint_to_client) {
    if (c >= n_clients)
      throw ConfigError("topology.endpoint_to_client",
                        "client index " + std::to_string(c) + " out of range");
    covered[c] = true;
  }
  for (std::size_t c = 0; c < n_clients; ++c)
    if (!covered[c])
      throw ConfigError("topology", "client " + std::to_string(c) + " has no endpoint");
}

std::vector<std::size_t> Topology::endpoints_of(std::size_t client) const {
  std::vector<std::size_t> out;
  for (std::size_t e = 0; e < endpoint_to_client.size(); ++e)
    if (endpoint_to_client[e] == client) out.push_back(e);
  return out;
}

// ---------------------------------------------------------------------------
// Ledger

const char* to_string(MessageKind kind) noexcept {
  switch (kind) {
    case MessageKind::model_down: return "model_down";
    case MessageKind::data_up: return "data_up";
    case MessageKind::weights_up: return "weights_up";
  }
  return "model_down";
}

std::string NodeId::str() const {
  switch (role) {
    case Role::server: return "server";
    case Role::client: return "client:" + std::to_string(index);
    case Role::endpoint: return "endpoint:" + std::to_string(index);
  }
  return "server";
}

void ByteLedger::append(LedgerEntry entry) {
  if (entry.bytes == 0) throw InvalidArgument("ledger entries must carry at least one byte");
  entries_.push_back(std::move(entry));
}

std::uint64_t ByteLedger::total() const noexcept {
  std::uint64_t sum = 0;
  for (const auto& e : entries_) sum += e.bytes;
  return sum;
}

std::uint64_t ByteLedger::total(MessageKind kind) const noexcept {
  std::uint64_t sum = 0;
  for (const auto& e : entries_)
    if (e.kind == kind) sum += e.bytes;
  return sum;
}

std::size_t ByteLedger::count(MessageKind kind) const noexcept {
  return static_cast<std::size_t>(std::count_if(
      entries_.begin(), entries_.end(), [kind](const LedgerEntry& e) { return e.kind == kind; }));
}

void account_bytes(ByteLedger& ledger, int month, const NodeId& sender, const NodeId& receiver,
                   MessageKind kind, Payload payload) {
  ledger.append({month, sender.str(), receiver.str(), kind, payload.bytes});
}

// ---------------------------------------------------------------------------
// Strategy

const char* to_string(StrategyKind kind) noexcept {
  switch (kind) {
    case StrategyKind::none: return "none";
    case StrategyKind::periodic: return "periodic";
    case StrategyKind::detector: return "detector";
    case StrategyKind::flame_static: return "flame_static";
    case StrategyKind::flame_adaptive: return "flame_adaptive";
  }
  return "none";
}

const char* to_string(DetectorKind kind) noexcept {
  switch (kind) {
    case DetectorKind::adwin: return "adwin";
    case DetectorKind::pht: return "pht";
    case DetectorKind::kswin: return "kswin";
  }
  return "kswin";
}

Strategy Strategy::periodic(int months) {
  Strategy s;
  s.kind = StrategyKind::periodic;
  s.period = months;
  return s;
}

Strategy Strategy::with_detector(DetectorKind d) {
  Strategy s;
  s.kind = StrategyKind::detector;
  s.detector = d;
  return s;
}

Strategy Strategy::flame_static() {
  Strategy s;
  s.kind = StrategyKind::flame_static;
  return s;
}

Strategy Strategy::flame_adaptive() {
  Strategy s;
  s.kind = StrategyKind::flame_adaptive;
  return s;
}

std::string Strategy::label() const {
  if (!name.empty()) return name;
  switch (kind) {
    case StrategyKind::none: return "none";
    case StrategyKind::periodic: return "periodic" + std::to_string(period);
    case StrategyKind::detector: return to_string(detector);
    case StrategyKind::flame_static: return "flare";
    case StrategyKind::flame_adaptive: return "flame";
  }
  return "none";
}

void Strategy::validate() const {
  if (kind == StrategyKind::periodic && period < 1)
    throw ConfigError("strategies.months", "periodic strategies need months >= 1");
  if (kind == StrategyKind::detector) {
    // Constructing the detector runs its own parameter checks.
    try {
      switch (detector) {
        case DetectorKind::adwin: detect::Adwin{adwin}; break;
        case DetectorKind::pht: detect::PageHinkley{pht}; break;
        case DetectorKind::kswin: detect::Kswin{kswin}; break;
      }
    } catch (const InvalidArgument& e) {
      throw ConfigError("strategies." + std::string(to_string(detector)), e.what());
    }
  }
}

void SimulationConfig::validate() const {
  topology.validate();
  if (training_months < 1 || training_months >= schedule.months())
    throw ConfigError("training_months", "must lie in [1, months)");
  if (arch.feature_dim != schedule.feature_dim())
    throw ConfigError("model", "feature_dim does not match the concept dimension");
  try {
    hyper.validate();
  } catch (const InvalidArgument& e) {
    throw ConfigError("model", e.what());
  }
  if (client_samples_per_month == 0 || endpoint_samples_per_month == 0)
    throw ConfigError("samples", "per-month sample counts must be positive");
  if (!(validation_fraction > 0.0 && validation_fraction < 1.0))
    throw ConfigError("samples.validation_fraction", "must lie in (0, 1)");
  if (monitor_updates_per_month == 0)
    throw ConfigError("flame.monitor_updates_per_month", "must be positive");
  if (!(monitor.static_phi > 0.0 && monitor.static_phi <= 1.0))
    throw ConfigError("flame.static_phi", "must lie in (0, 1]");
  if (!(stability.beta > 0.0 && stability.beta < 1.0))
    throw ConfigError("flame.beta", "must lie in (0, 1)");
  if (stability.window_len < 2) throw ConfigError("flame.window_len", "must be >= 2");
  if (stability.grad_window < 2) throw ConfigError("flame.grad_window", "must be >= 2");
  if (!(stability.grad_threshold >= 0.0))
    throw ConfigError("flame.grad_threshold", "must be >= 0");
}

double SimulationReport::mean_f1(int first, int last) const {
  double sum = 0.0;
  int n = 0;
  for (const auto& r : f1) {
    if (r.month >= first && r.month < last) {
      sum += r.global_f1;
      ++n;
    }
  }
  if (n == 0) throw InvalidArgument("mean_f1: no months in range");
  return sum / n;
}

// ---------------------------------------------------------------------------
// FedAvg

ModelParams fed_avg(std::span<const ModelParams> params, std::span<const double> weights) {
  if (params.empty()) throw InvalidArgument("fed_avg: no client parameters");
  if (params.size() != weights.size())
    throw InvalidArgument("fed_avg: one weight per client required");
  const model::Arch arch = params.front().arch;
  double total = 0.0;
  for (std::size_t c = 0; c < params.size(); ++c) {
    if (params[c].arch != arch || params[c].values.size() != arch.param_count())
      throw ShapeError("fed_avg: client " + std::to_string(c) + " has a different architecture");
    if (!(weights[c] > 0.0) || !std::isfinite(weights[c]))
      throw InvalidArgument("fed_avg: weights must be positive");
    total += weights[c];
  }
  ModelParams out{arch, std::vector<double>(arch.param_count(), 0.0)};
  for (std::size_t c = 0; c < params.size(); ++c) {
    const double w = weights[c] / total;
    for (std::size_t k = 0; k < out.values.size(); ++k) out.values[k] += w * params[c].values[k];
  }
  return out;
}

// ---------------------------------------------------------------------------
// Simulation state

namespace {

using DetectorState = std::variant<std::monostate, detect::Adwin, detect::PageHinkley, detect::Kswin>;

struct ClientState {
  ModelParams params;
  ModelParams upload;
  flame::ConceptStore store;  // concept-aware retention (flame_adaptive)
  LabeledBatch fifo;          // constant-size sliding set (every other strategy)
  flame::StabilityState stability;
  LabeledBatch reference_val; // validation rows of the last training set
  double sample_count = 0.0;
};

struct EndpointState {
  ModelParams deployed;
  flame::MonitorState monitor;
  DetectorState detector;
};

// Splits each block (month or concept) into train/validation rows.
struct Split {
  LabeledBatch train;
  LabeledBatch val;
};

Split split_blocks(const LabeledBatch& data, std::span<const std::size_t> block_sizes,
                   double val_fraction, std::uint64_t seed) {
  Split out{LabeledBatch(data.dim), LabeledBatch(data.dim)};
  std::size_t offset = 0;
  for (std::size_t b = 0; b < block_sizes.size(); ++b) {
    const std::size_t n = block_sizes[b];
    std::vector<std::size_t> rows(n);
    std::iota(rows.begin(), rows.end(), offset);
    offset += n;
    if (n == 0) continue;
    Rng rng(derive_seed(seed, "split", b));
    rng.shuffle(std::span<std::size_t>(rows));
    std::size_t n_val = static_cast<std::size_t>(std::floor(val_fraction * static_cast<double>(n)));
    if (n >= 2) n_val = std::clamp<std::size_t>(n_val, 1, n - 1);
    else n_val = 0;
    std::vector<std::size_t> val_rows(rows.begin(), rows.begin() + static_cast<std::ptrdiff_t>(n_val));
    std::vector<std::size_t> train_rows(rows.begin() + static_cast<std::ptrdiff_t>(n_val), rows.end());
    std::sort(val_rows.begin(), val_rows.end());
    std::sort(train_rows.begin(), train_rows.end());
    out.train.append(data.select(train_rows));
    out.val.append(data.select(val_rows));
  }
  return out;
}

}  // namespace

struct Simulation::State {
  SimulationConfig config;
  Strategy strategy;
  SimulationHooks hooks;
  SimulationReport report;
  std::vector<ClientState> clients;
  std::vector<EndpointState> endpoints;
  ModelParams global;
  bool deployed = false;

  bool uses_retention() const { return strategy.kind == StrategyKind::flame_adaptive; }
  bool uses_gradient_stability() const { return strategy.kind == StrategyKind::flame_adaptive; }

  LabeledBatch endpoint_batch(std::size_t e, int month) const {
    return stream::generate_month(config.schedule, month, config.endpoint_samples_per_month,
                                  derive_seed(config.seed, "endpoint.data", e, static_cast<std::uint64_t>(month)));
  }

  DetectorState fresh_detector(std::size_t e, int month) const {
    if (strategy.kind != StrategyKind::detector) return std::monostate{};
    switch (strategy.detector) {
      case DetectorKind::adwin: return detect::Adwin(strategy.adwin);
      case DetectorKind::pht: return detect::PageHinkley(strategy.pht);
      case DetectorKind::kswin: {
        auto p = strategy.kswin;
        p.seed = derive_seed(config.seed ^ strategy.kswin.seed, "kswin", e,
                             static_cast<std::uint64_t>(month + 1));
        return detect::Kswin(p);
      }
    }
    return std::monostate{};
  }

  // Train from the client's current parameters until the strategy's stability
  // rule fires; fall back to the best-validation epoch after max_epochs.
  void train_client(std::size_t c, const LabeledBatch& data, std::span<const std::size_t> blocks,
                    int month) {
    ClientState& client = clients[c];
    const std::uint64_t seed = derive_seed(config.seed, "client.train", c, static_cast<std::uint64_t>(month));
    Split split = split_blocks(data, blocks, config.validation_fraction, seed);

    bool weighted = config.weighted_loss;
    if (weighted && (split.train.count_label(0) == 0 || split.train.count_label(1) == 0)) {
      weighted = false;
      report.warnings.push_back("month " + std::to_string(month) + ": client " + std::to_string(c) +
                                " training set lacks a class; using unweighted loss");
    }

    model::TrainHyper hyper = config.hyper;
    hyper.seed = seed;
    model::Trainer trainer(client.params, split.train, split.val, hyper, weighted);
    client.stability.sigma_history.clear();

    ModelParams best = client.params;
    double best_val = std::numeric_limits<double>::infinity();
    bool stable = false;
    const std::size_t window = config.stability.window_len;
    for (int epoch = 1; epoch <= hyper.max_epochs && !stable; ++epoch) {
      const auto& entry = trainer.step_epoch();
      if (entry.val_loss < best_val) {
        best_val = entry.val_loss;
        best = trainer.params();
      }
      if (static_cast<std::size_t>(epoch) % window != 0) continue;
      if (uses_gradient_stability()) {
        if (auto sigma = flame::window_sigma(trainer.trace(), window))
          client.stability.sigma_history.push_back(*sigma);
        stable = flame::stability_gradient(client.stability);
      } else {
        stable = flame::stability_static(client.stability, trainer.trace());
      }
    }
    if (stable) {
      client.params = trainer.params();
    } else {
      client.params = best;
      report.warnings.push_back("month " + std::to_string(month) + ": client " + std::to_string(c) +
                                " did not reach stability in " + std::to_string(hyper.max_epochs) +
                                " epochs; using best validation epoch");
    }
    client.upload = client.params;
    client.reference_val = std::move(split.val);
    client.sample_count = static_cast<double>(data.size());
  }

  void aggregate() {
    std::vector<ModelParams> uploads;
    std::vector<double> weights;
    for (const auto& c : clients) {
      uploads.push_back(c.params);
      weights.push_back(c.sample_count);
    }
    global = fed_avg(uploads, weights);
  }

  void deploy(std::size_t client_index, int month) {
    ClientState& client = clients[client_index];
    client.params = global;
    const auto reference = model::predict_confidence(global, client.reference_val);
    for (std::size_t e : config.topology.endpoints_of(client_index)) {
      EndpointState& ep = endpoints[e];
      ep.deployed = global;
      ep.monitor.reference_confidences = reference;
      ep.monitor.ks_window.clear();
      ep.detector = fresh_detector(e, month);
      account_bytes(report.ledger, month, {Role::server, 0}, {Role::endpoint, e},
                    MessageKind::model_down, Payload::model(global.values.size()));
    }
  }

  // Returns a description of the signal, or nullopt.
  std::optional<std::string> observe(std::size_t e, int month, std::span<const double> conf) {
    EndpointState& ep = endpoints[e];
    switch (strategy.kind) {
      case StrategyKind::none:
        return std::nullopt;
      case StrategyKind::periodic:
        if ((month - config.training_months + 1) % strategy.period == 0) return "periodic";
        return std::nullopt;
      case StrategyKind::detector: {
        std::size_t hits = 0;
        std::visit(
            [&](auto& det) {
              if constexpr (!std::is_same_v<std::decay_t<decltype(det)>, std::monostate>) {
                for (double x : conf) hits += det.update(x) ? 1 : 0;
              }
            },
            ep.detector);
        if (hits == 0) return std::nullopt;
        return std::string(to_string(strategy.detector)) + " detections=" + std::to_string(hits);
      }
      case StrategyKind::flame_static:
      case StrategyKind::flame_adaptive: {
        const std::size_t q = std::min(config.monitor_updates_per_month, conf.size());
        std::optional<std::string> signal;
        for (std::size_t k = 0; k < q; ++k) {
          const std::size_t lo = k * conf.size() / q, hi = (k + 1) * conf.size() / q;
          const auto r = flame::monitor_update(ep.monitor, conf.subspan(lo, hi - lo));
          if (r.decision == flame::Decision::drift && !signal) {
            std::ostringstream os;
            os.precision(4);
            os << "ks=" << r.statistic << (r.used_adaptive ? " > adaptive " : " > static ")
               << r.threshold;
            signal = os.str();
          }
        }
        return signal;
      }
    }
    return std::nullopt;
  }

  void retrain(int month, const std::vector<std::optional<LabeledBatch>>& uploads) {
    const int next = month + 1;
    std::vector<bool> retrained(clients.size(), false);
    for (std::size_t c = 0; c < clients.size(); ++c) {
      LabeledBatch received(config.schedule.feature_dim());
      for (std::size_t e : config.topology.endpoints_of(c)) {
        if (!uploads[e]) continue;
        account_bytes(report.ledger, month, {Role::endpoint, e}, {Role::client, c},
                      MessageKind::data_up, Payload::data(uploads[e]->size(), uploads[e]->dim));
        received.append(*uploads[e]);
      }
      if (received.empty()) continue;
      received.month = month;

      ClientState& client = clients[c];
      if (uses_retention()) {
        client.store.add_concept(std::move(received));
        const auto picks = flame::retention_selection(
            client.store, derive_seed(config.seed, "retention", c, static_cast<std::uint64_t>(month)));
        LabeledBatch data(config.schedule.feature_dim());
        std::vector<std::size_t> blocks;
        for (std::size_t k = 0; k < picks.size(); ++k) {
          data.append(client.store.concepts[k].select(picks[k]));
          blocks.push_back(picks[k].size());
        }
        train_client(c, data, blocks, month);
      } else {
        // Constant-size window: the oldest rows make room for the new ones.
        LabeledBatch& fifo = client.fifo;
        const std::size_t keep = fifo.size() > received.size() ? fifo.size() - received.size() : 0;
        std::vector<std::size_t> rows(keep);
        std::iota(rows.begin(), rows.end(), fifo.size() - keep);
        LabeledBatch next_set = fifo.select(rows);
        next_set.append(received);
        fifo = std::move(next_set);
        const std::size_t blocks[] = {keep, received.size()};
        train_client(c, fifo, blocks, month);
      }
      account_bytes(report.ledger, next, {Role::client, c}, {Role::server, 0},
                    MessageKind::weights_up, Payload::model(client.params.values.size()));
      retrained[c] = true;
    }
    aggregate();
    for (std::size_t c = 0; c < clients.size(); ++c)
      if (retrained[c]) deploy(c, next);
    report.retraining_months.insert(next);
  }
};

Simulation::Simulation(SimulationConfig config, Strategy strategy, SimulationHooks hooks)
    : state_(std::make_unique<State>()) {
  config.validate();
  strategy.validate();
  state_->config = std::move(config);
  state_->strategy = std::move(strategy);
  state_->hooks = std::move(hooks);
  auto& r = state_->report;
  r.strategy = state_->strategy.label();
  r.seed = state_->config.seed;
  r.months = state_->config.schedule.months();
  r.training_months = state_->config.training_months;
  state_->clients.resize(state_->config.topology.n_clients);
  state_->endpoints.resize(state_->config.topology.n_endpoints);
  for (auto& c : state_->clients) c.stability.config = state_->config.stability;
  for (auto& e : state_->endpoints) {
    e.monitor.config = state_->config.monitor;
    e.monitor.config.adaptive = state_->strategy.kind == StrategyKind::flame_adaptive;
  }
}

Simulation::~Simulation() = default;
Simulation::Simulation(Simulation&&) noexcept = default;
Simulation& Simulation::operator=(Simulation&&) noexcept = default;

const model::ModelParams& Simulation::initial_training() {
  return initial_training(0, state_->config.training_months);
}

const model::ModelParams& Simulation::initial_training(int first, int last) {
  State& s = *state_;
  if (first < 0 || last <= first || last > s.config.schedule.months())
    throw RangeError("initial_training: empty or out-of-range month range");
  const ModelParams init =
      model::init_model(s.config.arch, derive_seed(s.config.seed, "server.init"));

  for (std::size_t c = 0; c < s.clients.size(); ++c) {
    ClientState& client = s.clients[c];
    LabeledBatch data(s.config.schedule.feature_dim());
    for (int m = first; m < last; ++m)
      data.append(stream::generate_month(s.config.schedule, m, s.config.client_samples_per_month,
                                         derive_seed(s.config.seed, "client.data", c,
                                                     static_cast<std::uint64_t>(m))));
    data.month = -1;
    client.params = init;
    client.store = {};
    client.store.add_concept(data);
    client.fifo = data;
    const std::size_t blocks[] = {data.size()};
    s.train_client(c, data, blocks, last - 1);
    account_bytes(s.report.ledger, last - 1, {Role::client, c}, {Role::server, 0},
                  MessageKind::weights_up, Payload::model(client.params.values.size()));
  }
  s.aggregate();
  for (std::size_t c = 0; c < s.clients.size(); ++c) s.deploy(c, last - 1);
  s.deployed = true;
  return s.global;
}

void Simulation::simulate_month(int month) {
  State& s = *state_;
  if (!s.deployed) throw InvalidArgument("simulate_month before initial_training");
  if (month < 0 || month >= s.config.schedule.months())
    throw RangeError("month " + std::to_string(month) + " outside the schedule");

  const bool inference = month >= s.config.training_months;
  MonthRecord record{month, 0.0, {}};
  std::vector<double> pooled_conf;
  std::vector<std::uint8_t> pooled_labels;
  std::vector<std::optional<LabeledBatch>> uploads(s.endpoints.size());
  bool any_signal = false;

  for (std::size_t e = 0; e < s.endpoints.size(); ++e) {
    LabeledBatch batch = s.endpoint_batch(e, month);
    const auto conf = model::predict_confidence(s.endpoints[e].deployed, batch);
    // Labels stop here: they feed the evaluator, never the strategy.
    record.endpoint_f1.push_back(model::f1_score(conf, batch.labels));
    pooled_conf.insert(pooled_conf.end(), conf.begin(), conf.end());
    pooled_labels.insert(pooled_labels.end(), batch.labels.begin(), batch.labels.end());
    if (!inference) continue;

    if (s.hooks.on_strategy_input) s.hooks.on_strategy_input(month, e, conf);
    if (auto signal = s.observe(e, month, conf)) {
      s.report.drift_events.push_back({month, e, *signal});
      uploads[e] = std::move(batch);
      any_signal = true;
    }
  }
  record.global_f1 = model::f1_score(pooled_conf, pooled_labels);
  s.report.f1.push_back(std::move(record));

  // A signal in the final month has no following month to retrain in.
  if (any_signal && month + 1 < s.config.schedule.months()) s.retrain(month, uploads);
}

SimulationReport Simulation::run() {
  initial_training();
  for (int m = 0; m < state_->config.schedule.months(); ++m) simulate_month(m);
  return state_->report;
}

const SimulationReport& Simulation::report() const noexcept { return state_->report; }
const SimulationConfig& Simulation::config() const noexcept { return state_->config; }
const Strategy& Simulation::strategy() const noexcept { return state_->strategy; }
const model::ModelParams& Simulation::global_params() const { return state_->global; }
const model::ModelParams& Simulation::client_params(std::size_t c) const {
  return state_->clients.at(c).params;
}
const model::ModelParams& Simulation::client_upload(std::size_t c) const {
  return state_->clients.at(c).upload;
}
const model::ModelParams& Simulation::deployed_params(std::size_t e) const {
  return state_->endpoints.at(e).deployed;
}
const flame::MonitorState& Simulation::monitor(std::size_t e) const {
  return state_->endpoints.at(e).monitor;
}

SimulationReport run_simulation(const SimulationConfig& config, const Strategy& strategy,
                                SimulationHooks hooks) {
  Simulation sim(config, strategy, std::move(hooks));
  return sim.run();
}

std::vector<SimulationReport> run_strategies(const SimulationConfig& config,
                                             std::span<const Strategy> strategies, bool parallel) {
  std::vector<SimulationReport> out;
  out.reserve(strategies.size());
  if (!parallel) {
    for (const auto& s : strategies) out.push_back(run_simulation(config, s));
    return out;
  }
  std::vector<std::future<SimulationReport>> jobs;
  for (const auto& s : strategies)
    jobs.push_back(std::async(std::launch::async, [&config, s] { return run_simulation(config, s); }));
  for (auto& j : jobs) out.push_back(j.get());
  return out;
}

}  // namespace driftfed::fed
