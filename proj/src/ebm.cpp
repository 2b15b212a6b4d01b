#include "gdc/ebm.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>

#include "gdc/error.hpp"

namespace gdc {

namespace {

double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

double clamp_lambda(double v, double bound) { return std::clamp(v, -bound, bound); }

// Solves (m + ridge I) x = rhs by Gaussian elimination with partial pivoting.
std::vector<double> solve(std::vector<std::vector<double>> m, std::vector<double> rhs, double ridge) {
  const std::size_t n = rhs.size();
  for (std::size_t i = 0; i < n; ++i) m[i][i] += ridge;
  for (std::size_t col = 0; col < n; ++col) {
    std::size_t pivot = col;
    for (std::size_t r = col + 1; r < n; ++r) {
      if (std::abs(m[r][col]) > std::abs(m[pivot][col])) pivot = r;
    }
    std::swap(m[col], m[pivot]);
    std::swap(rhs[col], rhs[pivot]);
    if (m[col][col] == 0.0) continue;
    for (std::size_t r = col + 1; r < n; ++r) {
      const double f = m[r][col] / m[col][col];
      for (std::size_t c = col; c < n; ++c) m[r][c] -= f * m[col][c];
      rhs[r] -= f * rhs[col];
    }
  }
  std::vector<double> x(n, 0.0);
  for (std::size_t i = n; i-- > 0;) {
    double s = rhs[i];
    for (std::size_t c = i + 1; c < n; ++c) s -= m[i][c] * x[c];
    x[i] = m[i][i] == 0.0 ? 0.0 : s / m[i][i];
  }
  return x;
}

}  // namespace

std::string_view to_string(EbmMode mode) {
  return mode == EbmMode::Exponential ? "exponential" : "pointwise_product";
}

Ebm Ebm::exponential(std::shared_ptr<const TabularARModel> base, ConstraintSet constraints, std::vector<double> lambda,
                     double lambda_clamp) {
  if (!base) throw Error(ErrorKind::InvalidArgument, "EBM needs a base model");
  if (lambda.size() != constraints.size()) {
    throw Error(ErrorKind::InvalidArgument, "one lambda per constraint expected");
  }
  if (!(lambda_clamp > 0.0)) throw Error(ErrorKind::InvalidArgument, "lambda clamp must be positive");
  Ebm ebm;
  ebm.base_ = std::move(base);
  ebm.constraints_ = std::move(constraints);
  for (auto& l : lambda) l = clamp_lambda(l, lambda_clamp);
  ebm.lambda_ = std::move(lambda);
  ebm.mode_ = EbmMode::Exponential;
  ebm.lambda_clamp_ = lambda_clamp;
  return ebm;
}

Ebm Ebm::pointwise_product(std::shared_ptr<const TabularARModel> base, ConstraintSet constraints) {
  if (!base) throw Error(ErrorKind::InvalidArgument, "EBM needs a base model");
  if (constraints.pointwise_count() == 0) {
    throw Error(ErrorKind::NoPointwiseConstraints, "pointwise-product EBM needs pointwise constraints");
  }
  Ebm ebm;
  ebm.base_ = std::move(base);
  ebm.constraints_ = std::move(constraints);
  ebm.mode_ = EbmMode::PointwiseProduct;
  return ebm;
}

Ebm Ebm::scaled(double factor) const {
  if (!(factor > 0.0)) throw Error(ErrorKind::InvalidArgument, "scale factor must be positive");
  Ebm out = *this;
  out.log_scale_ += std::log(factor);
  return out;
}

double Ebm::log_score(double base_log_prob, std::span<const double> phi) const {
  if (mode_ == EbmMode::PointwiseProduct) {
    for (std::size_t i = 0; i < constraints_.size(); ++i) {
      if (constraints_[i].pointwise && phi[i] == 0.0) return kNegInf;
    }
    return base_log_prob + log_scale_;
  }
  return base_log_prob + dot(lambda_, phi) + log_scale_;
}

double Ebm::log_score(const Sequence& x) const {
  const auto phi = evaluate_vector(constraints_, x);
  return log_score(base_->log_prob(x), phi);
}

double Ebm::score(const Sequence& x) const { return std::exp(log_score(x)); }

FeatureSample::FeatureSample(std::span<const Sequence> samples, const ConstraintSet& constraints) {
  std::vector<std::vector<double>> rows;
  rows.reserve(samples.size());
  for (const auto& x : samples) rows.push_back(evaluate_vector(constraints, x));
  dimension_ = constraints.size();
  add_rows(rows);
}

FeatureSample::FeatureSample(std::span<const std::vector<double>> rows) {
  dimension_ = rows.empty() ? 0 : rows.front().size();
  add_rows(rows);
}

void FeatureSample::add_rows(std::span<const std::vector<double>> rows) {
  std::map<std::vector<double>, std::size_t> index;
  sample_rows_.reserve(rows.size());
  for (const auto& r : rows) {
    if (r.size() != dimension_) throw Error(ErrorKind::InvalidArgument, "feature rows differ in dimension");
    auto [it, inserted] = index.try_emplace(r, rows_.size());
    if (inserted) {
      rows_.push_back(r);
      counts_.push_back(0.0);
    }
    counts_[it->second] += 1.0;
    sample_rows_.push_back(it->second);
  }
}

double FeatureSample::min(std::size_t j) const {
  double m = std::numeric_limits<double>::infinity();
  for (const auto& r : rows_) m = std::min(m, r[j]);
  return m;
}

double FeatureSample::max(std::size_t j) const {
  double m = -std::numeric_limits<double>::infinity();
  for (const auto& r : rows_) m = std::max(m, r[j]);
  return m;
}

FeatureSample FeatureSample::subset(std::span<const std::size_t> sample_indices) const {
  std::vector<std::vector<double>> rows;
  rows.reserve(sample_indices.size());
  for (const auto i : sample_indices) rows.push_back(rows_[sample_rows_.at(i)]);
  FeatureSample out;
  out.dimension_ = dimension_;
  out.add_rows(rows);
  return out;
}

namespace {

// Normalized SNIS weights over the distinct rows.
std::vector<double> snis_weights(std::span<const double> lambda, const FeatureSample& sample) {
  if (sample.sample_count() == 0) throw Error(ErrorKind::InvalidArgument, "SNIS needs at least one sample");
  if (lambda.size() != sample.dimension()) throw Error(ErrorKind::InvalidArgument, "lambda/feature dimension mismatch");
  const std::size_t n = sample.distinct_count();
  std::vector<double> w(n);
  double top = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < n; ++i) {
    w[i] = dot(lambda, sample.row(i)) + std::log(sample.multiplicity(i));
    top = std::max(top, w[i]);
  }
  double total = 0.0;
  for (auto& v : w) {
    v = std::exp(v - top);
    total += v;
  }
  if (!(total > 0.0) || !std::isfinite(total)) {
    throw Error(ErrorKind::DegenerateWeights, "importance weights do not normalize");
  }
  for (auto& v : w) v /= total;
  return w;
}

}  // namespace

std::vector<double> snis_moments(std::span<const double> lambda, const FeatureSample& sample) {
  const auto w = snis_weights(lambda, sample);
  std::vector<double> mu(sample.dimension(), 0.0);
  for (std::size_t i = 0; i < w.size(); ++i) {
    const auto& r = sample.row(i);
    for (std::size_t j = 0; j < mu.size(); ++j) mu[j] += w[i] * r[j];
  }
  return mu;
}

SnisObjective snis_objective(std::span<const double> lambda, std::span<const double> targets,
                             const FeatureSample& sample) {
  const std::size_t d = sample.dimension();
  if (targets.size() != d) throw Error(ErrorKind::InvalidArgument, "target/feature dimension mismatch");
  const auto w = snis_weights(lambda, sample);
  SnisObjective out;
  out.moments.assign(d, 0.0);
  for (std::size_t i = 0; i < w.size(); ++i) {
    const auto& r = sample.row(i);
    for (std::size_t j = 0; j < d; ++j) out.moments[j] += w[i] * r[j];
  }
  std::vector<double> residual(d);
  for (std::size_t j = 0; j < d; ++j) {
    residual[j] = targets[j] - out.moments[j];
    out.value += residual[j] * residual[j];
  }
  // grad_k = -2 sum_i w_i (<residual, phi_i - mu>) (phi_ik - mu_k)
  out.gradient.assign(d, 0.0);
  for (std::size_t i = 0; i < w.size(); ++i) {
    const auto& r = sample.row(i);
    double projected = 0.0;
    for (std::size_t j = 0; j < d; ++j) projected += residual[j] * (r[j] - out.moments[j]);
    for (std::size_t k = 0; k < d; ++k) out.gradient[k] -= 2.0 * w[i] * projected * (r[k] - out.moments[k]);
  }
  return out;
}

FitResult fit_lambda(std::shared_ptr<const TabularARModel> base, const ConstraintSet& constraints,
                     const FitConfig& config, std::optional<std::vector<double>> warm_start) {
  if (!base) throw Error(ErrorKind::InvalidArgument, "fit_lambda needs a base model");
  if (config.sample_count == 0) throw Error(ErrorKind::InvalidArgument, "sample_count must be positive");
  Rng rng(config.sgd.seed);
  const auto samples = base->sample(rng, config.sample_count);
  const FeatureSample sample(samples, constraints);
  return fit_lambda(std::move(base), constraints, sample, config, std::move(warm_start));
}

FitResult fit_lambda(std::shared_ptr<const TabularARModel> base, const ConstraintSet& constraints,
                     const FeatureSample& sample, const FitConfig& config,
                     std::optional<std::vector<double>> warm_start) {
  if (constraints.empty()) throw Error(ErrorKind::InvalidArgument, "no constraints to fit");
  if (constraints.all_pointwise()) {
    throw Error(ErrorKind::InvalidArgument, "all-pointwise constraint sets use build_pointwise");
  }
  if (!(config.tolerance > 0.0)) throw Error(ErrorKind::InvalidArgument, "tolerance must be positive");
  if (!(config.sgd.learning_rate > 0.0)) throw Error(ErrorKind::InvalidArgument, "learning rate must be positive");
  if (sample.dimension() != constraints.size()) {
    throw Error(ErrorKind::InvalidArgument, "feature sample does not match the constraint set");
  }

  const auto targets = constraints.targets();
  // Per-coordinate hull check; a finite lambda needs the target strictly
  // inside the sampled range, pointwise targets only need one satisfying sample.
  for (std::size_t j = 0; j < constraints.size(); ++j) {
    const double lo = sample.min(j);
    const double hi = sample.max(j);
    const auto& c = constraints[j];
    const bool ok = c.pointwise ? hi == 1.0 : (lo < c.target && c.target < hi);
    if (!ok) {
      throw Error(ErrorKind::UnattainableTarget, "constraint '" + c.feature.id() + "' target " +
                                                     std::to_string(c.target) + " outside sampled range [" +
                                                     std::to_string(lo) + ", " + std::to_string(hi) + "]");
    }
  }

  std::vector<double> lambda(constraints.size(), 0.0);
  if (warm_start) {
    if (warm_start->size() != constraints.size()) {
      throw Error(ErrorKind::InvalidArgument, "warm start has the wrong dimension");
    }
    lambda = *warm_start;
  }
  for (auto& l : lambda) l = clamp_lambda(l, config.lambda_clamp);

  const std::size_t n = sample.sample_count();
  const bool minibatch = config.sgd.batch_size > 0 && config.sgd.batch_size < n;
  Rng batch_rng(config.sgd.seed ^ 0x5eedULL);
  std::vector<std::size_t> batch(minibatch ? config.sgd.batch_size : 0);

  FitReport report;
  report.mode = EbmMode::Exponential;
  report.ids = constraints.ids();
  report.targets = targets;
  std::size_t step = 0;
  auto current = snis_objective(lambda, targets, sample);
  while (current.value >= config.tolerance && step < config.sgd.steps) {
    std::vector<double> gradient;
    if (minibatch) {
      for (auto& b : batch) b = static_cast<std::size_t>(batch_rng.below(n));
      gradient = snis_objective(lambda, targets, sample.subset(batch)).gradient;
    } else {
      gradient = std::move(current.gradient);
    }
    for (std::size_t k = 0; k < lambda.size(); ++k) {
      lambda[k] = clamp_lambda(lambda[k] - config.sgd.learning_rate * gradient[k], config.lambda_clamp);
    }
    ++step;
    current = snis_objective(lambda, targets, sample);
  }
  report.lambda = lambda;
  report.achieved_moments = current.moments;
  report.objective = current.value;
  report.steps_used = step;
  report.converged = current.value < config.tolerance;

  return {report, Ebm::exponential(std::move(base), constraints, lambda, config.lambda_clamp)};
}

std::vector<double> warm_start_lambda(const FitReport& previous, const ConstraintSet& extended) {
  std::vector<double> lambda(extended.size(), 0.0);
  for (std::size_t i = 0; i < previous.ids.size() && i < previous.lambda.size(); ++i) {
    const int j = extended.find(previous.ids[i]);
    if (j >= 0) lambda[static_cast<std::size_t>(j)] = previous.lambda[i];
  }
  return lambda;
}

Ebm build_pointwise(std::shared_ptr<const TabularARModel> base, const ConstraintSet& constraints) {
  if (constraints.empty()) throw Error(ErrorKind::InvalidArgument, "no constraints");
  if (!constraints.all_pointwise()) {
    throw Error(ErrorKind::MixedConstraints, "pointwise shortcut requires every constraint to be pointwise");
  }
  return Ebm::pointwise_product(std::move(base), constraints);
}

FitResult build_ebm(std::shared_ptr<const TabularARModel> base, const ConstraintSet& constraints,
                    const FitConfig& config) {
  if (constraints.all_pointwise()) {
    FitReport report;
    report.mode = EbmMode::PointwiseProduct;
    report.ids = constraints.ids();
    report.targets = constraints.targets();
    report.converged = true;
    return {report, build_pointwise(std::move(base), constraints)};
  }
  return fit_lambda(std::move(base), constraints, config);
}

std::vector<std::vector<double>> feature_table(const SequenceSpace& space, const ConstraintSet& constraints) {
  const auto universe = enumerate(space);
  std::vector<std::vector<double>> out;
  out.reserve(universe.size());
  for (const auto& x : universe) out.push_back(evaluate_vector(constraints, x));
  return out;
}

ExactDistribution exact_normalize(const Ebm& ebm) {
  const auto base_table = ebm.base().log_prob_table();
  const auto features = feature_table(ebm.space(), ebm.constraints());
  std::vector<double> log_scores(base_table.size());
  double top = kNegInf;
  for (std::size_t i = 0; i < base_table.size(); ++i) {
    log_scores[i] = ebm.log_score(base_table[i], features[i]);
    top = std::max(top, log_scores[i]);
  }
  if (top == kNegInf) throw Error(ErrorKind::EmptySupport, "every sequence has zero score");
  ExactDistribution out;
  out.probs.resize(log_scores.size());
  double total = 0.0;
  for (std::size_t i = 0; i < log_scores.size(); ++i) {
    out.probs[i] = std::exp(log_scores[i] - top);
    total += out.probs[i];
  }
  for (auto& p : out.probs) p /= total;
  out.log_z = top + std::log(total);
  out.z = std::exp(out.log_z);
  return out;
}

std::vector<double> exact_moments(std::span<const double> probs, const std::vector<std::vector<double>>& features) {
  const std::size_t d = features.empty() ? 0 : features.front().size();
  std::vector<double> mu(d, 0.0);
  for (std::size_t i = 0; i < probs.size(); ++i) {
    if (probs[i] == 0.0) continue;
    for (std::size_t j = 0; j < d; ++j) mu[j] += probs[i] * features[i][j];
  }
  return mu;
}

std::vector<double> exact_fit_lambda(const TabularARModel& base, const ConstraintSet& constraints, double lambda_clamp,
                                     double tolerance, std::size_t max_iterations) {
  const auto base_table = base.log_prob_table();
  const auto features = feature_table(base.space(), constraints);
  const auto targets = constraints.targets();
  const std::size_t d = constraints.size();

  // Dual objective log Z(lambda) - <lambda, target>, its gradient mu - target
  // and Hessian Cov(phi), all under the tilted distribution.
  struct Eval {
    double value;
    std::vector<double> grad;
    std::vector<std::vector<double>> hess;
  };
  auto evaluate_at = [&](const std::vector<double>& lambda) {
    std::vector<double> logs(base_table.size());
    double top = kNegInf;
    for (std::size_t i = 0; i < logs.size(); ++i) {
      logs[i] = base_table[i] + dot(lambda, features[i]);
      top = std::max(top, logs[i]);
    }
    double total = 0.0;
    for (auto& l : logs) {
      l = std::exp(l - top);
      total += l;
    }
    Eval e{top + std::log(total) - dot(lambda, targets), std::vector<double>(d, 0.0),
           std::vector<std::vector<double>>(d, std::vector<double>(d, 0.0))};
    std::vector<double> mu(d, 0.0);
    for (std::size_t i = 0; i < logs.size(); ++i) {
      const double p = logs[i] / total;
      for (std::size_t j = 0; j < d; ++j) {
        mu[j] += p * features[i][j];
        for (std::size_t k = 0; k < d; ++k) e.hess[j][k] += p * features[i][j] * features[i][k];
      }
    }
    for (std::size_t j = 0; j < d; ++j) {
      e.grad[j] = mu[j] - targets[j];
      for (std::size_t k = 0; k < d; ++k) e.hess[j][k] -= mu[j] * mu[k];
    }
    return e;
  };

  std::vector<double> lambda(d, 0.0);
  auto current = evaluate_at(lambda);
  for (std::size_t it = 0; it < max_iterations; ++it) {
    double gnorm = 0.0;
    for (const auto g : current.grad) gnorm = std::max(gnorm, std::abs(g));
    if (gnorm < tolerance) break;
    std::vector<double> neg_grad(d);
    for (std::size_t j = 0; j < d; ++j) neg_grad[j] = -current.grad[j];
    const auto step = solve(current.hess, neg_grad, 1e-12);
    double t = 1.0;
    bool moved = false;
    for (int backtrack = 0; backtrack < 60; ++backtrack, t *= 0.5) {
      std::vector<double> trial(d);
      for (std::size_t j = 0; j < d; ++j) trial[j] = clamp_lambda(lambda[j] + t * step[j], lambda_clamp);
      auto next = evaluate_at(trial);
      if (next.value <= current.value) {
        moved = trial != lambda;
        lambda = std::move(trial);
        current = std::move(next);
        break;
      }
    }
    if (!moved) break;
  }
  return lambda;
}

}  // namespace gdc
