#pragma once

#include <cstddef>
#include <memory>
#include <optional>
#include <span>
#include <vector>

#include "gdc/features.hpp"
#include "gdc/lm.hpp"

namespace gdc {

enum class EbmMode { Exponential, PointwiseProduct };

std::string_view to_string(EbmMode mode);

inline constexpr double kDefaultLambdaClamp = 20.0;

/// Unnormalized target P(x): a(x) exp<lambda, phi(x)> in exponential mode,
/// a(x) b(x) in pointwise-product mode.
class Ebm {
 public:
  Ebm() = default;

  /// Lambda entries are clamped to [-clamp, clamp].
  static Ebm exponential(std::shared_ptr<const TabularARModel> base, ConstraintSet constraints,
                         std::vector<double> lambda, double lambda_clamp = kDefaultLambdaClamp);
  static Ebm pointwise_product(std::shared_ptr<const TabularARModel> base, ConstraintSet constraints);

  EbmMode mode() const { return mode_; }
  const TabularARModel& base() const { return *base_; }
  std::shared_ptr<const TabularARModel> base_ptr() const { return base_; }
  const ConstraintSet& constraints() const { return constraints_; }
  std::span<const double> lambda() const { return lambda_; }
  double lambda_clamp() const { return lambda_clamp_; }
  const SequenceSpace& space() const { return base_->space(); }

  /// Same EBM with every score multiplied by `factor` > 0.
  Ebm scaled(double factor) const;
  double log_scale() const { return log_scale_; }

  double log_score(const Sequence& x) const;
  double score(const Sequence& x) const;
  /// log_score given a precomputed log a(x) and phi(x).
  double log_score(double base_log_prob, std::span<const double> phi) const;

 private:
  std::shared_ptr<const TabularARModel> base_;
  ConstraintSet constraints_;
  std::vector<double> lambda_;
  EbmMode mode_ = EbmMode::Exponential;
  double lambda_clamp_ = kDefaultLambdaClamp;
  double log_scale_ = 0.0;
};

/// Feature vectors of a sample drawn from the base model, with duplicate
/// vectors merged. The SNIS estimator only depends on phi, so the merged
/// form is exact and keeps fitting cost independent of N.
class FeatureSample {
 public:
  FeatureSample(std::span<const Sequence> samples, const ConstraintSet& constraints);
  /// Rows given directly, one per sample.
  explicit FeatureSample(std::span<const std::vector<double>> rows);

  std::size_t dimension() const { return dimension_; }
  std::size_t sample_count() const { return sample_rows_.size(); }
  std::size_t distinct_count() const { return rows_.size(); }
  const std::vector<double>& row(std::size_t i) const { return rows_[i]; }
  double multiplicity(std::size_t i) const { return counts_[i]; }
  /// Distinct-row index of the i-th original sample.
  std::size_t row_of_sample(std::size_t i) const { return sample_rows_[i]; }

  double min(std::size_t j) const;
  double max(std::size_t j) const;

  /// Sub-sample made of the given original sample indices.
  FeatureSample subset(std::span<const std::size_t> sample_indices) const;

 private:
  FeatureSample() = default;
  void add_rows(std::span<const std::vector<double>> rows);

  std::size_t dimension_ = 0;
  std::vector<std::vector<double>> rows_;
  std::vector<double> counts_;
  std::vector<std::size_t> sample_rows_;
};

/// mu_hat(lambda) = sum w_i phi(x_i) / sum w_i with w_i = exp<lambda, phi(x_i)>.
/// Throws DegenerateWeights when the weights do not normalize.
std::vector<double> snis_moments(std::span<const double> lambda, const FeatureSample& sample);

struct SnisObjective {
  double value = 0.0;                 // ||target - mu_hat||^2
  std::vector<double> moments;        // mu_hat
  std::vector<double> gradient;       // d value / d lambda
};

/// Objective and its analytic gradient: -2 sum_j (target_j - mu_j) Cov_w(phi_j, phi_k).
SnisObjective snis_objective(std::span<const double> lambda, std::span<const double> targets,
                             const FeatureSample& sample);

struct FitConfig {
  std::size_t sample_count = 100'000;
  /// sgd.steps is the step budget; sgd.batch_size 0 means full batch.
  SgdConfig sgd{0.5, 10'000, 0, 0};
  double tolerance = 0.01;
  double lambda_clamp = kDefaultLambdaClamp;
};

struct FitReport {
  EbmMode mode = EbmMode::Exponential;
  std::vector<std::string> ids;
  std::vector<double> targets;
  std::vector<double> lambda;
  std::vector<double> achieved_moments;
  double objective = 0.0;
  std::size_t steps_used = 0;
  bool converged = false;
};

struct FitResult {
  FitReport report;
  Ebm ebm;
};

/// Draws config.sample_count sequences from `base` once, then runs SGD on
/// lambda against the SNIS objective until it drops below the tolerance or
/// the step budget runs out. Throws UnattainableTarget when a target lies
/// outside the range of sampled feature values.
FitResult fit_lambda(std::shared_ptr<const TabularARModel> base, const ConstraintSet& constraints,
                     const FitConfig& config, std::optional<std::vector<double>> warm_start = std::nullopt);

/// Same, on a caller-provided feature sample (assumed drawn from `base`).
FitResult fit_lambda(std::shared_ptr<const TabularARModel> base, const ConstraintSet& constraints,
                     const FeatureSample& sample, const FitConfig& config,
                     std::optional<std::vector<double>> warm_start = std::nullopt);

/// Warm-start vector for `extended` from a fit on a subset of its constraints:
/// lambdas are carried over by feature id, new constraints start at 0.
std::vector<double> warm_start_lambda(const FitReport& previous, const ConstraintSet& extended);

/// P = a b. Throws MixedConstraints unless every constraint is pointwise.
Ebm build_pointwise(std::shared_ptr<const TabularARModel> base, const ConstraintSet& constraints);

/// Builds the EBM a config asks for: the product shortcut when every
/// constraint is pointwise, a lambda fit otherwise.
FitResult build_ebm(std::shared_ptr<const TabularARModel> base, const ConstraintSet& constraints,
                    const FitConfig& config);

/// Exact normalization by enumeration. Aligned with enumerate(space).
struct ExactDistribution {
  double z = 0.0;
  double log_z = 0.0;
  std::vector<double> probs;
};

/// Throws EmptySupport when Z = 0, UniverseTooLarge past the guard.
ExactDistribution exact_normalize(const Ebm& ebm);

/// phi of every sequence of the universe, aligned with enumerate(space).
std::vector<std::vector<double>> feature_table(const SequenceSpace& space, const ConstraintSet& constraints);

/// E_dist[phi] for a distribution aligned with enumerate(space).
std::vector<double> exact_moments(std::span<const double> probs, const std::vector<std::vector<double>>& features);

/// Exact moment matching by damped Newton on log Z(lambda) - <lambda, target>
/// over the enumerated universe, lambdas clamped. Oracle for small spaces.
std::vector<double> exact_fit_lambda(const TabularARModel& base, const ConstraintSet& constraints,
                                     double lambda_clamp = kDefaultLambdaClamp, double tolerance = 1e-12,
                                     std::size_t max_iterations = 200);

}  // namespace gdc
