#include "gdc/dpg.hpp"

#include <cmath>
#include <limits>

#include "gdc/error.hpp"

namespace gdc {

std::string_view to_string(Adaptivity a) {
  switch (a) {
    case Adaptivity::Kl: return "kl";
    case Adaptivity::Tvd: return "tvd";
    case Adaptivity::None: return "none";
  }
  return "none";
}

Adaptivity parse_adaptivity(std::string_view name) {
  if (name == "kl") return Adaptivity::Kl;
  if (name == "tvd") return Adaptivity::Tvd;
  if (name == "none") return Adaptivity::None;
  throw Error(ErrorKind::ConfigError, "unknown adaptivity '" + std::string(name) + "'");
}

ExactReference ExactReference::build(const Ebm& ebm) {
  ExactReference ref;
  ref.target = exact_normalize(ebm).probs;
  ref.base = exact_distribution(ebm.base());
  ref.features = feature_table(ebm.space(), ebm.constraints());
  return ref;
}

TrainState init_state(const TabularARModel& initial, const DpgConfig& config) {
  if (config.steps_per_iteration == 0) throw Error(ErrorKind::ConfigError, "steps_per_iteration must be >= 1");
  if (!(config.learning_rate > 0.0)) throw Error(ErrorKind::ConfigError, "learning_rate must be positive");
  const int order = config.policy_order > 0 ? config.policy_order : TabularARModel::full_history_order(initial.space());
  TrainState state;
  state.policy = initial.with_order(order);
  state.policy.set_trainable(true);
  state.proposal = state.policy;
  state.proposal.set_trainable(false);
  return state;
}

void dpg_iteration(TrainState& state, const Ebm& ebm, const DpgConfig& config, Rng& rng) {
  const std::size_t k = config.steps_per_iteration;
  const auto samples = state.proposal.sample(rng, k);
  const auto scored = score_samples(ebm, state.proposal, samples);

  std::vector<double> weights(k);
  double weight_sum = 0.0;
  for (std::size_t i = 0; i < k; ++i) {
    if (scored.log_proposal[i] == kNegInf && scored.log_target[i] != kNegInf) {
      throw Error(ErrorKind::SupportViolation, "proposal lost support of the target");
    }
    weights[i] = scored.log_target[i] == kNegInf ? 0.0 : std::exp(scored.log_target[i] - scored.log_proposal[i]);
    weight_sum += weights[i];
  }

  if (config.batch_update) {
    LogitGradient accumulated(state.policy);
    for (std::size_t i = 0; i < k; ++i) {
      if (weights[i] != 0.0) accumulated.add(state.policy.grad_log_prob(samples[i]), weights[i]);
    }
    state.policy.apply_update(accumulated, config.learning_rate / static_cast<double>(k));
  } else {
    for (std::size_t i = 0; i < k; ++i) {
      if (weights[i] != 0.0) {
        state.policy.apply_update(state.policy.grad_log_prob(samples[i]), config.learning_rate * weights[i]);
      }
    }
  }

  state.zma = fold_z(state.zma, weight_sum / static_cast<double>(k));
  state.samples_drawn += k;
  ++state.iterations_done;

  bool replace = false;
  double policy_divergence = std::numeric_limits<double>::quiet_NaN();
  double proposal_divergence = std::numeric_limits<double>::quiet_NaN();
  if (config.adaptivity != Adaptivity::None && state.zma.valid()) {
    std::vector<double> log_policy(k);
    for (std::size_t i = 0; i < k; ++i) log_policy[i] = state.policy.log_prob(samples[i]);
    if (config.adaptivity == Adaptivity::Kl) {
      policy_divergence = estimate_kl_p_from(scored, log_policy, state.zma.value).value;
      proposal_divergence = estimate_kl_p_from(scored, scored.log_proposal, state.zma.value).value;
    } else {
      policy_divergence = estimate_tvd(scored, log_policy, state.zma.value).value;
      proposal_divergence = estimate_tvd(scored, scored.log_proposal, state.zma.value).value;
    }
    replace = policy_divergence < proposal_divergence;
  }
  if (replace) {
    state.proposal = state.policy;
    state.proposal.set_trainable(false);
    ++state.proposal_updates;
  }
  state.decisions.push_back(replace);
  state.decision_estimates.emplace_back(policy_divergence, proposal_divergence);
}

MetricsRecord snapshot(std::size_t step, const Ebm& ebm, const TabularARModel& policy, double z,
                       std::size_t eval_samples, Rng& rng, const ExactReference* exact) {
  const auto samples = policy.sample(rng, eval_samples);
  if (!(z > 0.0)) z = estimate_z(ebm, policy, samples).value;
  auto record = evaluate_policy(step, ebm, policy, samples, z);
  if (exact) attach_exact(record, policy, exact->target, exact->base, exact->features);
  return record;
}

TrainState train(const TabularARModel& base, const Ebm& ebm, const DpgConfig& config, const ExactReference* exact,
                 const IterationObserver& observer) {
  auto state = init_state(base, config);
  Rng rng(config.seed);
  Rng eval_rng = rng.split();
  auto maybe_snapshot = [&] {
    if (config.eval_every == 0 || state.iterations_done % config.eval_every != 0) return;
    const double z = state.zma.valid() ? state.zma.value : 0.0;
    state.history.push_back(snapshot(state.iterations_done, ebm, state.policy, z, config.eval_samples, eval_rng, exact));
  };
  maybe_snapshot();
  for (std::size_t it = 0; it < config.iterations; ++it) {
    dpg_iteration(state, ebm, config, rng);
    if (observer) observer(state);
    maybe_snapshot();
  }
  return state;
}

LogitGradient exact_expected_update(const TabularARModel& policy, const Ebm& ebm, const TabularARModel& proposal) {
  const auto universe = enumerate(policy.space());
  const auto proposal_table = proposal.log_prob_table();
  LogitGradient g(policy);
  for (std::size_t i = 0; i < universe.size(); ++i) {
    const double lq = proposal_table[i];
    const double lp = ebm.log_score(universe[i]);
    if (lp == kNegInf) continue;
    if (lq == kNegInf) throw Error(ErrorKind::SupportViolation, "proposal lacks support of the target");
    const double q = std::exp(lq);
    g.add(policy.grad_log_prob(universe[i]), q * std::exp(lp - lq));
  }
  return g;
}

}  // namespace gdc
