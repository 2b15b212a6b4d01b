#pragma once

#include <array>
#include <cstddef>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "gdc/estimators.hpp"
#include "gdc/features.hpp"
#include "gdc/seqspace.hpp"

namespace gdc {

/// Per-feature sample mean. Empty constraint set gives an empty vector.
std::vector<double> expectation_phi(std::span<const Sequence> samples, const ConstraintSet& constraints);

/// Distinct n-grams over total n-grams within one sequence; 1.0 when the
/// sequence is shorter than n.
double dist_n(const Sequence& x, std::size_t n);
double corpus_dist_n(std::span<const Sequence> samples, std::size_t n);

/// Zero clipped precisions are floored here before the geometric mean.
inline constexpr double kBleuPrecisionFloor = 1e-9;

/// BLEU-n of one candidate against a reference set: uniform weights over
/// orders 1..n, clipped precisions, brevity penalty against the closest
/// reference length (shorter wins ties).
double bleu_n(const Sequence& candidate, std::span<const Sequence> references, std::size_t n);

/// Mean BLEU-n of each sample against all the others. Samples shorter than
/// n are not scored as candidates but still serve as references; NaN when
/// no sample is long enough. Throws TooFewSamples below two samples.
double self_bleu_n(std::span<const Sequence> samples, std::size_t n);

struct ZipfRow {
  std::size_t rank;
  std::string token;
  std::size_t frequency;
};

struct ZipfTable {
  std::vector<ZipfRow> rows;
  std::size_t total_tokens = 0;
};

/// Observed body tokens by descending frequency, ties by vocabulary index.
/// Throws EmptyCorpus when the samples hold no token.
ZipfTable zipf_table(std::span<const Sequence> samples, const Vocabulary& vocabulary);
void write_zipf_csv(std::ostream& out, const ZipfTable& table);

struct ExactColumns {
  double kl_p_pi = 0.0;
  double kl_pi_a = 0.0;
  std::vector<double> e_phi;
};

struct MetricsRecord {
  std::size_t step = 0;
  std::vector<double> e_phi;
  DivergenceEstimate kl_p_pi;
  DivergenceEstimate kl_pi_a;
  std::array<double, 3> dist{};       // Dist-1, 2, 3
  std::array<double, 3> self_bleu{};  // Self-BLEU-3, 4, 5
  double z_estimate = 0.0;
  std::optional<ExactColumns> exact;
};

/// Diversity and constraint metrics of an evaluation sample from the policy.
/// `z` feeds the KL(p||pi) estimate.
MetricsRecord evaluate_policy(std::size_t step, const Ebm& ebm, const TabularARModel& policy,
                              std::span<const Sequence> policy_samples, double z);

/// Adds enumeration-exact KL and moments; `target` is aligned with enumerate().
void attach_exact(MetricsRecord& record, const TabularARModel& policy, std::span<const double> target,
                  std::span<const double> base, const std::vector<std::vector<double>>& features);

/// Metrics CSV: [prefix columns], method, step, e_phi_<id>..., kl_p_pi,
/// kl_p_pi_se, kl_pi_a, kl_pi_a_se, dist_1..3, self_bleu_3..5, z_ma, then
/// kl_p_pi_exact, kl_pi_a_exact, e_phi_exact_<id>... when exact columns are on.
class MetricsCsv {
 public:
  MetricsCsv(std::vector<std::string> feature_ids, bool exact, std::vector<std::string> prefix_columns = {});

  void write_header(std::ostream& out) const;
  void write_row(std::ostream& out, const std::string& method, const MetricsRecord& record,
                 const std::vector<std::string>& prefix_values = {}) const;

 private:
  std::vector<std::string> ids_;
  bool exact_;
  std::vector<std::string> prefix_;
};

/// Fixed-format number rendering shared by every CSV writer.
std::string format_number(double v);

}  // namespace gdc
