#include "gdc/estimators.hpp"

#include <cmath>

#include "gdc/error.hpp"

namespace gdc {

namespace {

// Mean and standard error of the mean of per-sample terms.
Estimate summarize(std::span<const double> terms) {
  Estimate e;
  e.sample_count = terms.size();
  if (terms.empty()) throw Error(ErrorKind::InvalidArgument, "estimate needs at least one sample");
  double mean = 0.0;
  for (const double t : terms) mean += t;
  mean /= static_cast<double>(terms.size());
  double ss = 0.0;
  for (const double t : terms) ss += (t - mean) * (t - mean);
  e.value = mean;
  if (terms.size() > 1) {
    const double n = static_cast<double>(terms.size());
    e.standard_error = std::sqrt(ss / (n - 1.0) / n);
  }
  return e;
}

void check_support(double log_target, double log_proposal) {
  if (log_proposal == kNegInf && log_target != kNegInf) {
    throw Error(ErrorKind::SupportViolation, "proposal assigns zero probability to a sample with positive score");
  }
}

void check_z(double z) {
  if (!(z > 0.0) || !std::isfinite(z)) throw Error(ErrorKind::NonpositiveZ, "partition estimate must be positive");
}

std::vector<double> log_probs_of(const TabularARModel& model, std::span<const Sequence> samples) {
  std::vector<double> out;
  out.reserve(samples.size());
  for (const auto& x : samples) out.push_back(model.log_prob(x));
  return out;
}

}  // namespace

ZMovingAverage fold_z(ZMovingAverage zma, double batch_estimate) {
  const double i = static_cast<double>(zma.iterations);
  zma.value = (i * zma.value + batch_estimate) / (i + 1.0);
  ++zma.iterations;
  return zma;
}

ScoredSample score_samples(const Ebm& ebm, const TabularARModel& proposal, std::span<const Sequence> samples) {
  ScoredSample scored;
  scored.log_target.reserve(samples.size());
  scored.log_proposal.reserve(samples.size());
  for (const auto& x : samples) {
    scored.log_target.push_back(ebm.log_score(x));
    scored.log_proposal.push_back(proposal.log_prob(x));
  }
  return scored;
}

Estimate estimate_z(const ScoredSample& scored) {
  std::vector<double> terms(scored.size());
  for (std::size_t k = 0; k < scored.size(); ++k) {
    check_support(scored.log_target[k], scored.log_proposal[k]);
    terms[k] = scored.log_target[k] == kNegInf ? 0.0 : std::exp(scored.log_target[k] - scored.log_proposal[k]);
  }
  return summarize(terms);
}

Estimate estimate_z(const Ebm& ebm, const TabularARModel& proposal, std::span<const Sequence> samples) {
  return estimate_z(score_samples(ebm, proposal, samples));
}

DivergenceEstimate estimate_kl_p_from(const ScoredSample& scored, std::span<const double> log_policy, double z) {
  check_z(z);
  std::vector<double> terms(scored.size());
  for (std::size_t k = 0; k < scored.size(); ++k) {
    const double lt = scored.log_target[k];
    check_support(lt, scored.log_proposal[k]);
    if (lt == kNegInf) {
      terms[k] = 0.0;  // 0 log 0
      continue;
    }
    if (log_policy[k] == kNegInf) {
      throw Error(ErrorKind::SupportViolation, "policy assigns zero probability inside the target support");
    }
    terms[k] = std::exp(lt - scored.log_proposal[k]) * (lt - log_policy[k]) / z;
  }
  auto e = summarize(terms);
  e.value -= std::log(z);
  return e;
}

DivergenceEstimate estimate_kl_p_from(const Ebm& ebm, const TabularARModel& policy, const TabularARModel& proposal,
                                      std::span<const Sequence> samples, double z) {
  const auto scored = score_samples(ebm, proposal, samples);
  return estimate_kl_p_from(scored, log_probs_of(policy, samples), z);
}

DivergenceEstimate estimate_tvd(const ScoredSample& scored, std::span<const double> log_policy, double z) {
  check_z(z);
  std::vector<double> terms(scored.size());
  for (std::size_t k = 0; k < scored.size(); ++k) {
    const double lq = scored.log_proposal[k];
    check_support(scored.log_target[k], lq);
    const double policy_ratio = std::exp(log_policy[k] - lq);
    const double target_ratio = scored.log_target[k] == kNegInf ? 0.0 : std::exp(scored.log_target[k] - lq) / z;
    terms[k] = 0.5 * std::abs(policy_ratio - target_ratio);
  }
  return summarize(terms);
}

DivergenceEstimate estimate_tvd(const Ebm& ebm, const TabularARModel& policy, const TabularARModel& proposal,
                                std::span<const Sequence> samples, double z) {
  const auto scored = score_samples(ebm, proposal, samples);
  return estimate_tvd(scored, log_probs_of(policy, samples), z);
}

DivergenceEstimate estimate_kl_between_models(const TabularARModel& policy, const TabularARModel& base,
                                              std::span<const Sequence> samples_from_policy) {
  std::vector<double> terms;
  terms.reserve(samples_from_policy.size());
  for (const auto& x : samples_from_policy) {
    const double lb = base.log_prob(x);
    if (lb == kNegInf) throw Error(ErrorKind::SupportViolation, "base model assigns zero probability to a sample");
    terms.push_back(policy.log_prob(x) - lb);
  }
  return summarize(terms);
}

double exact_kl(std::span<const double> d1, std::span<const double> d2) {
  if (d1.size() != d2.size()) throw Error(ErrorKind::InvalidArgument, "distributions differ in size");
  double kl = 0.0;
  for (std::size_t i = 0; i < d1.size(); ++i) {
    if (d1[i] == 0.0) continue;
    if (d2[i] == 0.0) throw Error(ErrorKind::SupportViolation, "second distribution is zero inside the first's support");
    kl += d1[i] * std::log(d1[i] / d2[i]);
  }
  return kl;
}

double exact_tvd(std::span<const double> d1, std::span<const double> d2) {
  if (d1.size() != d2.size()) throw Error(ErrorKind::InvalidArgument, "distributions differ in size");
  double s = 0.0;
  for (std::size_t i = 0; i < d1.size(); ++i) s += std::abs(d1[i] - d2[i]);
  return 0.5 * s;
}

double exact_entropy(std::span<const double> d) {
  double h = 0.0;
  for (const double p : d) {
    if (p > 0.0) h -= p * std::log(p);
  }
  return h;
}

std::vector<double> exact_distribution(const TabularARModel& model) {
  auto table = model.log_prob_table();
  for (auto& v : table) v = std::exp(v);
  return table;
}

}  // namespace gdc
