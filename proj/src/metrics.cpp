#include "gdc/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <map>
#include <ostream>
#include <set>

#include "gdc/error.hpp"

namespace gdc {

namespace {

using Ngram = std::vector<TokenId>;

std::map<Ngram, std::size_t> ngram_counts(const Sequence& x, std::size_t n) {
  std::map<Ngram, std::size_t> counts;
  if (x.length() < n) return counts;
  for (std::size_t i = 0; i + n <= x.length(); ++i) {
    ++counts[Ngram(x.tokens.begin() + static_cast<std::ptrdiff_t>(i),
                   x.tokens.begin() + static_cast<std::ptrdiff_t>(i + n))];
  }
  return counts;
}

double brevity_penalty(std::size_t candidate, std::size_t closest_reference) {
  if (candidate > closest_reference) return 1.0;
  return std::exp(1.0 - static_cast<double>(closest_reference) / static_cast<double>(candidate));
}

// Closest length with a positive count; the shorter one on ties.
std::size_t closest_length(const std::map<std::size_t, std::size_t>& lengths, std::size_t target) {
  std::size_t best = 0;
  std::size_t best_gap = std::numeric_limits<std::size_t>::max();
  for (const auto& [len, count] : lengths) {
    if (count == 0) continue;
    const std::size_t gap = len > target ? len - target : target - len;
    if (gap < best_gap) {
      best_gap = gap;
      best = len;
    }
  }
  return best;
}

double combine(const std::vector<double>& log_precisions, double bp) {
  double s = 0.0;
  for (const double lp : log_precisions) s += lp;
  return bp * std::exp(s / static_cast<double>(log_precisions.size()));
}

}  // namespace

std::vector<double> expectation_phi(std::span<const Sequence> samples, const ConstraintSet& constraints) {
  if (samples.empty()) throw Error(ErrorKind::InvalidArgument, "expectation needs at least one sample");
  std::vector<double> mean(constraints.size(), 0.0);
  for (const auto& x : samples) {
    for (std::size_t j = 0; j < constraints.size(); ++j) mean[j] += constraints[j].feature.evaluate(x);
  }
  for (auto& m : mean) m /= static_cast<double>(samples.size());
  return mean;
}

double dist_n(const Sequence& x, std::size_t n) {
  if (n == 0) throw Error(ErrorKind::InvalidArgument, "n must be positive");
  if (x.length() < n) return 1.0;
  const auto counts = ngram_counts(x, n);
  return static_cast<double>(counts.size()) / static_cast<double>(x.length() - n + 1);
}

double corpus_dist_n(std::span<const Sequence> samples, std::size_t n) {
  if (samples.empty()) throw Error(ErrorKind::InvalidArgument, "Dist-n needs at least one sample");
  double s = 0.0;
  for (const auto& x : samples) s += dist_n(x, n);
  return s / static_cast<double>(samples.size());
}

double bleu_n(const Sequence& candidate, std::span<const Sequence> references, std::size_t n) {
  if (n == 0) throw Error(ErrorKind::InvalidArgument, "n must be positive");
  if (references.empty()) throw Error(ErrorKind::TooFewSamples, "BLEU needs at least one reference");
  if (candidate.length() < n) throw Error(ErrorKind::InvalidArgument, "candidate shorter than n");
  std::vector<double> log_precisions;
  for (std::size_t m = 1; m <= n; ++m) {
    const auto cand = ngram_counts(candidate, m);
    std::map<Ngram, std::size_t> max_ref;
    for (const auto& r : references) {
      for (const auto& [g, c] : ngram_counts(r, m)) {
        auto& slot = max_ref[g];
        slot = std::max(slot, c);
      }
    }
    std::size_t clipped = 0;
    for (const auto& [g, c] : cand) {
      const auto it = max_ref.find(g);
      if (it != max_ref.end()) clipped += std::min(c, it->second);
    }
    const double p = static_cast<double>(clipped) / static_cast<double>(candidate.length() - m + 1);
    log_precisions.push_back(std::log(std::max(p, kBleuPrecisionFloor)));
  }
  std::map<std::size_t, std::size_t> lengths;
  for (const auto& r : references) ++lengths[r.length()];
  return combine(log_precisions, brevity_penalty(candidate.length(), closest_length(lengths, candidate.length())));
}

double self_bleu_n(std::span<const Sequence> samples, std::size_t n) {
  if (samples.size() < 2) throw Error(ErrorKind::TooFewSamples, "Self-BLEU needs at least two samples");
  if (n == 0) throw Error(ErrorKind::InvalidArgument, "n must be positive");
  const std::size_t count = samples.size();

  // For every n-gram, the two largest per-sample counts and the owner of the
  // largest, so "max over all other samples" is O(1) per candidate n-gram.
  struct Top {
    std::size_t first = 0;
    std::size_t second = 0;
    std::size_t owner = std::numeric_limits<std::size_t>::max();
  };
  std::vector<std::map<Ngram, Top>> tops(n + 1);
  std::vector<std::vector<std::map<Ngram, std::size_t>>> per_sample(n + 1, std::vector<std::map<Ngram, std::size_t>>(count));
  for (std::size_t m = 1; m <= n; ++m) {
    for (std::size_t s = 0; s < count; ++s) {
      per_sample[m][s] = ngram_counts(samples[s], m);
      for (const auto& [g, c] : per_sample[m][s]) {
        auto& t = tops[m][g];
        if (c > t.first) {
          t.second = t.first;
          t.first = c;
          t.owner = s;
        } else if (c > t.second) {
          t.second = c;
        }
      }
    }
  }
  std::map<std::size_t, std::size_t> lengths;
  for (const auto& x : samples) ++lengths[x.length()];

  double total = 0.0;
  std::size_t scored = 0;
  for (std::size_t s = 0; s < count; ++s) {
    const auto& cand = samples[s];
    if (cand.length() < n) continue;
    std::vector<double> log_precisions;
    for (std::size_t m = 1; m <= n; ++m) {
      std::size_t clipped = 0;
      for (const auto& [g, c] : per_sample[m][s]) {
        const auto& t = tops[m].at(g);
        const std::size_t others = t.owner == s ? t.second : t.first;
        clipped += std::min(c, others);
      }
      const double p = static_cast<double>(clipped) / static_cast<double>(cand.length() - m + 1);
      log_precisions.push_back(std::log(std::max(p, kBleuPrecisionFloor)));
    }
    --lengths[cand.length()];
    const auto closest = closest_length(lengths, cand.length());
    ++lengths[cand.length()];
    total += combine(log_precisions, brevity_penalty(cand.length(), closest));
    ++scored;
  }
  if (scored == 0) return std::numeric_limits<double>::quiet_NaN();
  return total / static_cast<double>(scored);
}

ZipfTable zipf_table(std::span<const Sequence> samples, const Vocabulary& vocabulary) {
  std::vector<std::size_t> counts(vocabulary.size(), 0);
  ZipfTable table;
  for (const auto& x : samples) {
    for (const auto t : x.tokens) {
      ++counts.at(static_cast<std::size_t>(t));
      ++table.total_tokens;
    }
  }
  if (table.total_tokens == 0) throw Error(ErrorKind::EmptyCorpus, "no tokens to count");
  std::vector<std::size_t> order;
  for (std::size_t id = 0; id < counts.size(); ++id) {
    if (counts[id] > 0) order.push_back(id);
  }
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return counts[a] > counts[b]; });
  for (std::size_t r = 0; r < order.size(); ++r) {
    table.rows.push_back({r + 1, vocabulary.token(static_cast<TokenId>(order[r])), counts[order[r]]});
  }
  return table;
}

void write_zipf_csv(std::ostream& out, const ZipfTable& table) {
  out << "rank,token,frequency\n";
  for (const auto& row : table.rows) out << row.rank << ',' << row.token << ',' << row.frequency << '\n';
}

MetricsRecord evaluate_policy(std::size_t step, const Ebm& ebm, const TabularARModel& policy,
                              std::span<const Sequence> policy_samples, double z) {
  MetricsRecord r;
  r.step = step;
  r.e_phi = expectation_phi(policy_samples, ebm.constraints());
  if (z > 0.0) {
    r.kl_p_pi = estimate_kl_p_from(ebm, policy, policy, policy_samples, z);
  } else {
    // no sample carried target mass; the estimate is undefined
    r.kl_p_pi.value = r.kl_p_pi.standard_error = std::numeric_limits<double>::quiet_NaN();
    r.kl_p_pi.sample_count = policy_samples.size();
  }
  r.kl_pi_a = estimate_kl_between_models(policy, ebm.base(), policy_samples);
  for (std::size_t n = 1; n <= 3; ++n) r.dist[n - 1] = corpus_dist_n(policy_samples, n);
  for (std::size_t n = 3; n <= 5; ++n) {
    r.self_bleu[n - 3] = policy_samples.size() >= 2 ? self_bleu_n(policy_samples, n)
                                                    : std::numeric_limits<double>::quiet_NaN();
  }
  r.z_estimate = z;
  return r;
}

void attach_exact(MetricsRecord& record, const TabularARModel& policy, std::span<const double> target,
                  std::span<const double> base, const std::vector<std::vector<double>>& features) {
  const auto pi = exact_distribution(policy);
  ExactColumns exact;
  auto kl_or_inf = [](std::span<const double> d1, std::span<const double> d2) {
    try {
      return exact_kl(d1, d2);
    } catch (const Error& e) {
      if (e.kind() != ErrorKind::SupportViolation) throw;
      return std::numeric_limits<double>::infinity();
    }
  };
  exact.kl_p_pi = kl_or_inf(target, pi);
  exact.kl_pi_a = kl_or_inf(pi, base);
  exact.e_phi = exact_moments(pi, features);
  record.exact = std::move(exact);
}

std::string format_number(double v) {
  if (std::isnan(v)) return "nan";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

MetricsCsv::MetricsCsv(std::vector<std::string> feature_ids, bool exact, std::vector<std::string> prefix_columns)
    : ids_(std::move(feature_ids)), exact_(exact), prefix_(std::move(prefix_columns)) {}

void MetricsCsv::write_header(std::ostream& out) const {
  for (const auto& p : prefix_) out << p << ',';
  out << "method,step";
  for (const auto& id : ids_) out << ",e_phi_" << id;
  out << ",kl_p_pi,kl_p_pi_se,kl_pi_a,kl_pi_a_se,dist_1,dist_2,dist_3,self_bleu_3,self_bleu_4,self_bleu_5,z_ma";
  if (exact_) {
    out << ",kl_p_pi_exact,kl_pi_a_exact";
    for (const auto& id : ids_) out << ",e_phi_exact_" << id;
  }
  out << '\n';
}

void MetricsCsv::write_row(std::ostream& out, const std::string& method, const MetricsRecord& r,
                           const std::vector<std::string>& prefix_values) const {
  if (prefix_values.size() != prefix_.size()) throw Error(ErrorKind::InvalidArgument, "prefix column count mismatch");
  for (const auto& p : prefix_values) out << p << ',';
  out << method << ',' << r.step;
  for (const double e : r.e_phi) out << ',' << format_number(e);
  out << ',' << format_number(r.kl_p_pi.value) << ',' << format_number(r.kl_p_pi.standard_error) << ','
      << format_number(r.kl_pi_a.value) << ',' << format_number(r.kl_pi_a.standard_error);
  for (const double d : r.dist) out << ',' << format_number(d);
  for (const double b : r.self_bleu) out << ',' << format_number(b);
  out << ',' << format_number(r.z_estimate);
  if (exact_) {
    if (!r.exact) throw Error(ErrorKind::InvalidArgument, "record lacks exact columns");
    out << ',' << format_number(r.exact->kl_p_pi) << ',' << format_number(r.exact->kl_pi_a);
    for (const double e : r.exact->e_phi) out << ',' << format_number(e);
  }
  out << '\n';
}

}  // namespace gdc
