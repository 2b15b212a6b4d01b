#include "gdc/baselines.hpp"

#include <cmath>

#include "gdc/error.hpp"

namespace gdc {

std::string_view to_string(BaselineKind kind) {
  switch (kind) {
    case BaselineKind::ReinforcePhi: return "reinforce-phi";
    case BaselineKind::ReinforceP: return "reinforce-P";
    case BaselineKind::KlPenalized: return "kl-penalized";
    case BaselineKind::RejectionMle: return "rejection-mle";
  }
  return "unknown";
}

BaselineKind parse_baseline(std::string_view name) {
  if (name == "reinforce-phi") return BaselineKind::ReinforcePhi;
  if (name == "reinforce-P") return BaselineKind::ReinforceP;
  if (name == "kl-penalized") return BaselineKind::KlPenalized;
  if (name == "rejection-mle") return BaselineKind::RejectionMle;
  throw Error(ErrorKind::ConfigError, "unknown baseline '" + std::string(name) + "'");
}

void BaselineConfig::validate() const {
  const bool penalized = kind == BaselineKind::KlPenalized;
  if (!penalized && (beta != 0.0 || beta_adaptive)) {
    throw Error(ErrorKind::ConfigError, "beta is only meaningful for kl-penalized");
  }
  if (penalized && !(beta >= 0.0)) throw Error(ErrorKind::ConfigError, "beta must be >= 0");
  if (penalized && beta_adaptive && !(kl_target > 0.0)) {
    throw Error(ErrorKind::ConfigError, "adaptive beta needs a positive kl_target");
  }
  if (kind == BaselineKind::RejectionMle) {
    if (sample_budget == 0) throw Error(ErrorKind::ConfigError, "rejection-mle needs a sample budget");
  } else {
    if (!(learning_rate > 0.0)) throw Error(ErrorKind::ConfigError, "learning_rate must be positive");
    if (steps_per_iteration == 0) throw Error(ErrorKind::ConfigError, "steps_per_iteration must be >= 1");
  }
}

void reinforce_step(TabularARModel& policy, const Reward& reward, std::span<const Sequence> samples,
                    double learning_rate) {
  if (samples.empty()) return;
  LogitGradient g(policy);
  for (const auto& x : samples) {
    const double r = reward(x);
    if (r != 0.0) g.add(policy.grad_log_prob(x), r);
  }
  policy.apply_update(g, learning_rate / static_cast<double>(samples.size()));
}

double kl_penalized_step(TabularARModel& policy, const TabularARModel& base, const Reward& phi, double beta,
                         std::span<const Sequence> samples, double learning_rate, bool adapt, double kl_target,
                         double eta) {
  if (samples.empty()) return beta;
  LogitGradient g(policy);
  double kl = 0.0;
  for (const auto& x : samples) {
    const double log_ratio = policy.log_prob(x) - base.log_prob(x);
    if (!std::isfinite(log_ratio)) throw Error(ErrorKind::SupportViolation, "base model lacks support of a sample");
    kl += log_ratio;
    const double r = phi(x) - beta * log_ratio;
    if (r != 0.0) g.add(policy.grad_log_prob(x), r);
  }
  policy.apply_update(g, learning_rate / static_cast<double>(samples.size()));
  if (adapt) {
    kl /= static_cast<double>(samples.size());
    beta = kl > kl_target ? beta * (1.0 + eta) : beta / (1.0 + eta);
  }
  return beta;
}

RejectionResult rejection_mle(const TabularARModel& base, const Reward& predicate, std::size_t budget, int order,
                              double smoothing, Rng& rng) {
  std::vector<Sequence> kept;
  for (std::size_t i = 0; i < budget; ++i) {
    auto x = base.sample_one(rng);
    if (predicate(x) == 1.0) kept.push_back(std::move(x));
  }
  if (kept.empty()) {
    throw Error(ErrorKind::NoAcceptedSamples, "no sample satisfied the predicate in " + std::to_string(budget) + " draws");
  }
  RejectionResult out;
  out.model = mle_fit(kept, base.space(), order, smoothing);
  out.budget = budget;
  out.accepted = kept.size();
  out.acceptance_rate = static_cast<double>(kept.size()) / static_cast<double>(budget);
  return out;
}

BaselineRun train_baseline(const TabularARModel& base, const Ebm& ebm, const BaselineConfig& config,
                           const ExactReference* exact, const PolicyObserver& observer) {
  config.validate();
  const auto& constraints = ebm.constraints();
  Rng rng(config.seed);
  Rng eval_rng = rng.split();
  BaselineRun run;

  const Reward predicate = [&constraints](const Sequence& x) { return pointwise_predicate(constraints, x); };

  auto record = [&](std::size_t step, double z) {
    run.history.push_back(snapshot(step, ebm, run.policy, z, config.eval_samples, eval_rng, exact));
  };

  if (config.kind == BaselineKind::RejectionMle) {
    const int order = config.mle_order > 0 ? config.mle_order : TabularARModel::full_history_order(base.space());
    auto result = rejection_mle(base, predicate, config.sample_budget, order, config.mle_smoothing, rng);
    run.policy = std::move(result.model);
    run.samples_drawn = result.budget;
    run.accepted = result.accepted;
    if (config.eval_every > 0) record(0, 0.0);
    return run;
  }

  if (config.kind != BaselineKind::ReinforceP && constraints.pointwise_count() == 0) {
    throw Error(ErrorKind::NoPointwiseConstraints, std::string(to_string(config.kind)) + " needs a pointwise reward");
  }
  const int order = config.policy_order > 0 ? config.policy_order : TabularARModel::full_history_order(base.space());
  run.policy = base.with_order(order);
  run.policy.set_trainable(true);

  const Reward score = [&ebm](const Sequence& x) { return ebm.score(x); };
  double beta = config.beta;
  if (config.eval_every > 0) record(0, 0.0);
  for (std::size_t it = 1; it <= config.iterations; ++it) {
    const auto samples = run.policy.sample(rng, config.steps_per_iteration);
    run.samples_drawn += samples.size();
    switch (config.kind) {
      case BaselineKind::ReinforcePhi:
        reinforce_step(run.policy, predicate, samples, config.learning_rate);
        break;
      case BaselineKind::ReinforceP:
        reinforce_step(run.policy, score, samples, config.learning_rate);
        break;
      case BaselineKind::KlPenalized:
        beta = kl_penalized_step(run.policy, base, predicate, beta, samples, config.learning_rate,
                                 config.beta_adaptive, config.kl_target, config.beta_rate);
        run.beta_trace.push_back(beta);
        break;
      case BaselineKind::RejectionMle:
        break;
    }
    if (observer) observer(it, run.samples_drawn, run.policy);
    if (config.eval_every > 0 && it % config.eval_every == 0) record(it, 0.0);
  }
  return run;
}

}  // namespace gdc
