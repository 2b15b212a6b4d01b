#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <string_view>
#include <vector>

#include "gdc/ebm.hpp"
#include "gdc/estimators.hpp"
#include "gdc/lm.hpp"
#include "gdc/metrics.hpp"

namespace gdc {

enum class Adaptivity { Kl, Tvd, None };

std::string_view to_string(Adaptivity a);
/// "kl", "tvd" or "none"; throws ConfigError otherwise.
Adaptivity parse_adaptivity(std::string_view name);

struct DpgConfig {
  std::size_t iterations = 100;
  std::size_t steps_per_iteration = 1024;  // K
  double learning_rate = 0.1;
  Adaptivity adaptivity = Adaptivity::Kl;
  /// Accumulate the K per-sample gradients and apply their mean once per
  /// iteration; false applies each sample's update immediately.
  bool batch_update = true;
  std::size_t eval_every = 0;  // 0 disables snapshots
  std::size_t eval_samples = 1000;
  std::uint64_t seed = 0;
  /// Policy context order; 0 selects the full-history order.
  int policy_order = 0;
};

/// Enumeration-exact reference used to attach exact columns to snapshots.
struct ExactReference {
  std::vector<double> target;  // p
  std::vector<double> base;    // a
  std::vector<std::vector<double>> features;

  static ExactReference build(const Ebm& ebm);
};

struct TrainState {
  TabularARModel policy;
  TabularARModel proposal;  // frozen snapshot, never an alias of `policy`
  ZMovingAverage zma;
  std::vector<MetricsRecord> history;
  std::size_t proposal_updates = 0;
  std::size_t iterations_done = 0;
  std::size_t samples_drawn = 0;
  /// One entry per iteration: whether the proposal was replaced.
  std::vector<bool> decisions;
  /// Divergence estimates behind each decision (policy, proposal); NaN when skipped.
  std::vector<std::pair<double, double>> decision_estimates;
};

/// policy = trainable copy of `initial` at the configured order; proposal = frozen copy.
TrainState init_state(const TabularARModel& initial, const DpgConfig& config);

/// One iteration: K samples from q, importance-weighted score-function
/// update with weights P/q, Z_MA fold, then the adaptivity test on the same
/// samples (replacing q when the policy's estimated divergence is strictly
/// smaller). Adaptivity is skipped while Z_MA is not positive.
void dpg_iteration(TrainState& state, const Ebm& ebm, const DpgConfig& config, Rng& rng);

using IterationObserver = std::function<void(const TrainState&)>;

/// config.iterations of dpg_iteration from q = policy = base, with metric
/// snapshots at step 0 and every eval_every iterations.
TrainState train(const TabularARModel& base, const Ebm& ebm, const DpgConfig& config,
                 const ExactReference* exact = nullptr, const IterationObserver& observer = {});

/// Snapshot of the current policy on a fresh evaluation sample.
MetricsRecord snapshot(std::size_t step, const Ebm& ebm, const TabularARModel& policy, double z,
                       std::size_t eval_samples, Rng& rng, const ExactReference* exact);

/// sum_x q(x) (P(x)/q(x)) grad log pi(x) by enumeration: the exact expected
/// per-sample DPG update direction.
LogitGradient exact_expected_update(const TabularARModel& policy, const Ebm& ebm, const TabularARModel& proposal);

}  // namespace gdc
