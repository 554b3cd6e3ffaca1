#pragma once

// Discrete-time simulator of a parameter server, its FL clients and their
// inference endpoints. One simulated month = one monitoring step per endpoint.
//
// Month loop (inference months):
//   1. every endpoint draws its batch, scores it with its deployed model and
//      hands the confidences (never the labels) to its strategy;
//   2. labels are used only to record F1;
//   3. signalling endpoints upload their batch to their client (data_up);
//   4. clients that received data rebuild their training set, retrain to
//      stability and send weights (weights_up, next month);
//   5. the server averages every client's current parameters and redeploys to
//      the endpoints of retrained clients (model_down, next month).
// The month after a signal is a retraining month.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "driftfed/detectors.hpp"
#include "driftfed/flame.hpp"
#include "driftfed/model.hpp"
#include "driftfed/stream.hpp"

namespace driftfed::fed {

// ---------------------------------------------------------------------------
// Topology

struct Topology {
  std::size_t n_clients = 0;
  std::size_t n_endpoints = 0;
  std::vector<std::size_t> endpoint_to_client;

  /// Endpoint e belongs to client e % n_clients.
  static Topology round_robin(std::size_t clients, std::size_t endpoints);

  /// Throws ConfigError unless every endpoint maps to a valid client and
  /// every client owns at least one endpoint.
  void validate() const;
  std::vector<std::size_t> endpoints_of(std::size_t client) const;
};

// ---------------------------------------------------------------------------
// Byte accounting

enum class Role { server, client, endpoint };
enum class MessageKind { model_down, data_up, weights_up };

const char* to_string(MessageKind kind) noexcept;

struct NodeId {
  Role role = Role::server;
  std::size_t index = 0;

  std::string str() const;  // "server", "client:1", "endpoint:3"
};

inline constexpr std::size_t kBytesPerParameter = 4;
inline constexpr std::size_t kBytesPerFeature = 8;
inline constexpr std::size_t kBytesPerLabel = 1;

/// Size of one message body.
struct Payload {
  std::uint64_t bytes = 0;

  static Payload model(std::size_t parameter_count) {
    return {parameter_count * kBytesPerParameter};
  }
  static Payload data(std::size_t samples, std::size_t feature_dim) {
    return {samples * (feature_dim * kBytesPerFeature + kBytesPerLabel)};
  }
};

struct LedgerEntry {
  int month = 0;
  std::string sender;
  std::string receiver;
  MessageKind kind = MessageKind::model_down;
  std::uint64_t bytes = 0;
};

/// Append-only list of messages.
class ByteLedger {
 public:
  void append(LedgerEntry entry);
  const std::vector<LedgerEntry>& entries() const noexcept { return entries_; }
  std::size_t size() const noexcept { return entries_.size(); }

  std::uint64_t total() const noexcept;
  std::uint64_t total(MessageKind kind) const noexcept;
  std::size_t count(MessageKind kind) const noexcept;

 private:
  std::vector<LedgerEntry> entries_;
};

void account_bytes(ByteLedger& ledger, int month, const NodeId& sender, const NodeId& receiver,
                   MessageKind kind, Payload payload);

// ---------------------------------------------------------------------------
// Strategies

enum class StrategyKind { none, periodic, detector, flame_static, flame_adaptive };
enum class DetectorKind { adwin, pht, kswin };

const char* to_string(StrategyKind kind) noexcept;
const char* to_string(DetectorKind kind) noexcept;

struct Strategy {
  StrategyKind kind = StrategyKind::none;
  int period = 1;  // periodic only
  DetectorKind detector = DetectorKind::kswin;
  detect::AdwinParams adwin;
  detect::PhtParams pht;
  detect::KswinParams kswin;
  std::string name;  // empty: derived from kind

  static Strategy none() { return {}; }
  static Strategy periodic(int months);
  static Strategy with_detector(DetectorKind d);
  static Strategy flame_static();
  static Strategy flame_adaptive();

  /// "none", "periodic1", "kswin", "flare", "flame", ... unless `name` is set.
  std::string label() const;
  void validate() const;
};

// ---------------------------------------------------------------------------
// Simulation

struct SimulationConfig {
  stream::ConceptSchedule schedule;
  int training_months = 12;
  Topology topology;
  model::Arch arch;
  model::TrainHyper hyper;
  bool weighted_loss = true;
  std::size_t client_samples_per_month = 400;
  std::size_t endpoint_samples_per_month = 400;
  double validation_fraction = 0.1;
  std::size_t monitor_updates_per_month = 1;
  flame::MonitorConfig monitor;
  flame::StabilityConfig stability;
  std::uint64_t seed = 0;

  /// Throws ConfigError on inconsistent settings.
  void validate() const;
};

struct DriftEvent {
  int month = 0;
  std::size_t endpoint = 0;
  std::string signal;
};

struct MonthRecord {
  int month = 0;
  double global_f1 = 0.0;  // F1 over all endpoints' samples pooled
  std::vector<double> endpoint_f1;
};

struct SimulationReport {
  std::string strategy;
  std::uint64_t seed = 0;
  int months = 0;
  int training_months = 0;
  std::vector<MonthRecord> f1;  // one record per simulated month
  std::vector<DriftEvent> drift_events;
  std::set<int> retraining_months;
  ByteLedger ledger;
  std::vector<std::string> warnings;

  /// Mean global F1 over months in [first, last).
  double mean_f1(int first, int last) const;
};

/// Test and audit hooks. `on_strategy_input` sees exactly what a strategy
/// receives for each endpoint-month.
struct SimulationHooks {
  std::function<void(int month, std::size_t endpoint, std::span<const double> confidences)>
      on_strategy_input;
};

/// Element-wise weighted mean, accumulated in list order.
model::ModelParams fed_avg(std::span<const model::ModelParams> params,
                           std::span<const double> weights);

class Simulation {
 public:
  Simulation(SimulationConfig config, Strategy strategy, SimulationHooks hooks = {});
  ~Simulation();
  Simulation(Simulation&&) noexcept;
  Simulation& operator=(Simulation&&) noexcept;

  /// Trains every client on months [first, last), averages and deploys.
  /// Defaults to [0, training_months).
  const model::ModelParams& initial_training();
  const model::ModelParams& initial_training(int first, int last);

  /// Training months are evaluated only; inference months run the full loop.
  void simulate_month(int month);

  /// initial_training() followed by every month.
  SimulationReport run();

  const SimulationReport& report() const noexcept;
  const SimulationConfig& config() const noexcept;
  const Strategy& strategy() const noexcept;
  const model::ModelParams& global_params() const;
  const model::ModelParams& client_params(std::size_t client) const;
  /// Client parameters as uploaded before the most recent aggregation.
  const model::ModelParams& client_upload(std::size_t client) const;
  const model::ModelParams& deployed_params(std::size_t endpoint) const;
  const flame::MonitorState& monitor(std::size_t endpoint) const;

 private:
  struct State;
  std::unique_ptr<State> state_;
};

SimulationReport run_simulation(const SimulationConfig& config, const Strategy& strategy,
                                SimulationHooks hooks = {});

/// Runs each strategy on identically seeded data. Results in strategy order.
std::vector<SimulationReport> run_strategies(const SimulationConfig& config,
                                             std::span<const Strategy> strategies,
                                             bool parallel = true);

}  // namespace driftfed::fed
