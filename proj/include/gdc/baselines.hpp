#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string_view>
#include <vector>

#include "gdc/dpg.hpp"
#include "gdc/ebm.hpp"
#include "gdc/lm.hpp"

namespace gdc {

enum class BaselineKind { ReinforcePhi, ReinforceP, KlPenalized, RejectionMle };

std::string_view to_string(BaselineKind kind);
/// "reinforce-phi", "reinforce-P", "kl-penalized", "rejection-mle".
BaselineKind parse_baseline(std::string_view name);

struct BaselineConfig {
  BaselineKind kind = BaselineKind::ReinforcePhi;
  double learning_rate = 0.1;
  std::size_t iterations = 100;
  std::size_t steps_per_iteration = 1024;  // K
  /// KL penalty weight; only meaningful for kl-penalized.
  double beta = 0.0;
  bool beta_adaptive = false;
  double kl_target = 0.0;
  double beta_rate = 0.1;  // eta: beta moves by a factor (1 + eta) per iteration
  std::size_t eval_every = 0;
  std::size_t eval_samples = 1000;
  std::uint64_t seed = 0;
  int policy_order = 0;  // 0 selects the full-history order
  /// rejection-mle: samples drawn from the base, fitted order and smoothing.
  std::size_t sample_budget = 0;
  int mle_order = 0;  // 0 selects the full-history order
  double mle_smoothing = 0.0;

  /// beta present iff kind is kl-penalized. Throws ConfigError.
  void validate() const;
};

using Reward = std::function<double(const Sequence&)>;

/// theta += alpha * mean_k r(x_k) grad log pi(x_k) over samples from pi.
void reinforce_step(TabularARModel& policy, const Reward& reward, std::span<const Sequence> samples,
                    double learning_rate);

/// Reward r(x) = phi(x) - beta log(pi(x)/a(x)); returns the updated beta.
/// With adaptation on, beta grows by (1 + eta) when the sample estimate of
/// KL(pi || a) exceeds the target and shrinks by the same factor otherwise.
double kl_penalized_step(TabularARModel& policy, const TabularARModel& base, const Reward& phi, double beta,
                         std::span<const Sequence> samples, double learning_rate, bool adapt = false,
                         double kl_target = 0.0, double eta = 0.1);

struct RejectionResult {
  TabularARModel model;
  std::size_t budget = 0;
  std::size_t accepted = 0;
  double acceptance_rate = 0.0;
};

/// Keeps samples from `base` satisfying b and fits an MLE model on them.
/// Throws NoAcceptedSamples.
RejectionResult rejection_mle(const TabularARModel& base, const Reward& predicate, std::size_t budget, int order,
                              double smoothing, Rng& rng);

struct BaselineRun {
  TabularARModel policy;
  std::vector<MetricsRecord> history;
  std::vector<double> beta_trace;
  std::size_t samples_drawn = 0;
  std::size_t accepted = 0;  // rejection-mle only
};

/// Runs a baseline trainer from pi = base. Rewards: reinforce-phi and
/// kl-penalized use b(x), the product of pointwise features; reinforce-P
/// uses the EBM score.
using PolicyObserver = std::function<void(std::size_t iteration, std::size_t samples_drawn, const TabularARModel&)>;

BaselineRun train_baseline(const TabularARModel& base, const Ebm& ebm, const BaselineConfig& config,
                           const ExactReference* exact = nullptr, const PolicyObserver& observer = {});

}  // namespace gdc
