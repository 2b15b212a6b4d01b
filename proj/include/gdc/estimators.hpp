#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "gdc/ebm.hpp"
#include "gdc/lm.hpp"

namespace gdc {

/// Monte Carlo estimate with the standard error of its per-sample mean.
struct Estimate {
  double value = 0.0;
  double standard_error = 0.0;
  std::size_t sample_count = 0;
};

using DivergenceEstimate = Estimate;

/// Running mean of unbiased per-batch partition-function estimates.
struct ZMovingAverage {
  double value = 0.0;
  std::size_t iterations = 0;

  bool valid() const { return iterations > 0 && value > 0.0; }
};

/// Z_MA <- (i Z_MA + z_batch) / (i + 1).
ZMovingAverage fold_z(ZMovingAverage zma, double batch_estimate);

/// Log-densities of a sample under the EBM and the proposal, shared by the
/// estimators below so each sample is scored once.
struct ScoredSample {
  std::vector<double> log_target;    // log P(x)
  std::vector<double> log_proposal;  // log q(x)

  std::size_t size() const { return log_target.size(); }
};

ScoredSample score_samples(const Ebm& ebm, const TabularARModel& proposal, std::span<const Sequence> samples);

/// Mean of P(x)/q(x) over samples from q. Throws SupportViolation.
Estimate estimate_z(const Ebm& ebm, const TabularARModel& proposal, std::span<const Sequence> samples);
Estimate estimate_z(const ScoredSample& scored);

/// D_KL(p || pi) = -log z + (1/z) mean[(P/q) log(P/pi)] with samples from q.
/// Throws NonpositiveZ, SupportViolation.
DivergenceEstimate estimate_kl_p_from(const Ebm& ebm, const TabularARModel& policy, const TabularARModel& proposal,
                                      std::span<const Sequence> samples, double z);
/// Same with precomputed log P, log q and the policy's log-probabilities.
DivergenceEstimate estimate_kl_p_from(const ScoredSample& scored, std::span<const double> log_policy, double z);

/// TVD(p || pi) = 1/2 mean |pi/q - P/(z q)| with samples from q.
DivergenceEstimate estimate_tvd(const Ebm& ebm, const TabularARModel& policy, const TabularARModel& proposal,
                                std::span<const Sequence> samples, double z);
DivergenceEstimate estimate_tvd(const ScoredSample& scored, std::span<const double> log_policy, double z);

/// D_KL(pi || a) = mean log(pi/a) with samples from pi.
DivergenceEstimate estimate_kl_between_models(const TabularARModel& policy, const TabularARModel& base,
                                              std::span<const Sequence> samples_from_policy);

/// Exact sum d1 log(d1/d2). Throws SupportViolation when d2 = 0 < d1.
double exact_kl(std::span<const double> d1, std::span<const double> d2);
double exact_tvd(std::span<const double> d1, std::span<const double> d2);
double exact_entropy(std::span<const double> d);

/// Normalized probabilities of a model over enumerate(space).
std::vector<double> exact_distribution(const TabularARModel& model);

}  // namespace gdc
