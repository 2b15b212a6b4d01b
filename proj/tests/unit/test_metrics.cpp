#include <algorithm>
#include <cmath>
#include <map>
#include <sstream>
#include <string>

#include "doctest.h"
#include "fixtures.hpp"
#include "gdc/error.hpp"
#include "gdc/metrics.hpp"

using namespace gdc;

namespace {

Sequence s(std::initializer_list<TokenId> t) { return Sequence{std::vector<TokenId>(t)}; }

// Reference BLEU written separately from the library: n-grams keyed as
// strings, references scanned one at a time.
std::map<std::string, int> grams(const Sequence& x, std::size_t n) {
  std::map<std::string, int> out;
  for (std::size_t i = 0; i + n <= x.length(); ++i) {
    std::string key;
    for (std::size_t j = 0; j < n; ++j) key += std::to_string(x.tokens[i + j]) + ",";
    ++out[key];
  }
  return out;
}

double reference_bleu(const Sequence& cand, const std::vector<Sequence>& refs, std::size_t n) {
  double log_sum = 0.0;
  for (std::size_t m = 1; m <= n; ++m) {
    const auto c = grams(cand, m);
    int clipped = 0, total = 0;
    for (const auto& [g, count] : c) {
      int best = 0;
      for (const auto& r : refs) {
        const auto rg = grams(r, m);
        const auto it = rg.find(g);
        if (it != rg.end()) best = std::max(best, it->second);
      }
      clipped += std::min(count, best);
      total += count;
    }
    double p = static_cast<double>(clipped) / static_cast<double>(total);
    if (p == 0.0) p = 1e-9;
    log_sum += std::log(p) / static_cast<double>(n);
  }
  const double c = static_cast<double>(cand.length());
  double r = 0.0;
  double best_gap = 1e300;
  for (const auto& ref : refs) {
    const double len = static_cast<double>(ref.length());
    const double gap = std::abs(len - c);
    if (gap < best_gap || (gap == best_gap && len < r)) {
      best_gap = gap;
      r = len;
    }
  }
  const double bp = c > r ? 1.0 : std::exp(1.0 - r / c);
  return bp * std::exp(log_sum);
}

double reference_self_bleu(const std::vector<Sequence>& corpus, std::size_t n) {
  double total = 0.0;
  int scored = 0;
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    if (corpus[i].length() < n) continue;
    std::vector<Sequence> refs;
    for (std::size_t j = 0; j < corpus.size(); ++j) {
      if (j != i) refs.push_back(corpus[j]);
    }
    total += reference_bleu(corpus[i], refs, n);
    ++scored;
  }
  return total / scored;
}

void expect_kind(const auto& fn, ErrorKind kind) {
  try {
    fn();
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.kind() == kind);
  }
}

}  // namespace

TEST_CASE("expectation_phi") {
  const auto v = testing::abcd_vocabulary();
  const ConstraintSet cs({ConstraintSpec::make(Feature::token_presence("a", v.index("a")), 0.5, false)});
  const std::vector<Sequence> all_a{s({0}), s({0, 1}), s({2, 0})};
  CHECK(expectation_phi(all_a, cs) == std::vector<double>{1.0});
  CHECK(expectation_phi(all_a, ConstraintSet{}).empty());
}

TEST_CASE("expectation_phi matches the exact expectation") {
  const auto task = testing::distributional_task(4);
  const auto all = enumerate(task.base->space());
  double exact = 0.0;
  for (const auto& x : all) exact += task.base->prob(x) * task.constraints[0].feature.evaluate(x);
  Rng rng(3);
  const auto xs = task.base->sample(rng, 100000);
  const double mean = expectation_phi(xs, task.constraints)[0];
  const double se = std::sqrt(mean * (1.0 - mean) / 100000.0);
  CHECK(std::abs(mean - exact) < 3.0 * se);
}

TEST_CASE("dist_n fixtures") {
  CHECK(dist_n(s({7, 7, 7, 7}), 1) == doctest::Approx(0.25).epsilon(1e-15));
  CHECK(dist_n(s({0, 1, 0, 1}), 1) == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(std::abs(dist_n(s({0, 1, 0, 1}), 2) - 2.0 / 3.0) < 1e-9);
  CHECK(dist_n(s({0, 1, 2}), 3) == 1.0);
  CHECK(dist_n(s({0, 1}), 3) == 1.0);
  CHECK(dist_n(Sequence{}, 1) == 1.0);
}

TEST_CASE("corpus Dist-n is a permutation-invariant mean") {
  std::vector<Sequence> corpus{s({0, 0, 1}), s({1, 2, 3, 1}), s({2}), s({3, 3, 3, 3})};
  const double d = corpus_dist_n(corpus, 1);
  double manual = 0.0;
  for (const auto& x : corpus) manual += dist_n(x, 1);
  CHECK(d == doctest::Approx(manual / 4.0).epsilon(1e-15));
  std::reverse(corpus.begin(), corpus.end());
  CHECK(corpus_dist_n(corpus, 1) == doctest::Approx(d).epsilon(1e-15));
}

TEST_CASE("duplicating a sample moves corpus Dist-n toward that sample") {
  const std::vector<Sequence> corpus{s({0, 0, 1}), s({1, 2, 3, 1}), s({3, 3, 3, 3}), s({0, 1, 2, 3})};
  for (std::size_t n = 1; n <= 3; ++n) {
    const double before = corpus_dist_n(corpus, n);
    for (const auto& dup : corpus) {
      auto more = corpus;
      more.push_back(dup);
      const double after = corpus_dist_n(more, n);
      CHECK(after == doctest::Approx((4.0 * before + dist_n(dup, n)) / 5.0).epsilon(1e-12));
      if (dist_n(dup, n) <= before) CHECK(after <= before + 1e-15);
    }
  }
}

TEST_CASE("bleu_n: hand values") {
  const std::vector<Sequence> refs{s({0, 1, 2})};
  CHECK(std::abs(bleu_n(s({0, 1, 2, 3}), refs, 1) - 0.75) < 1e-9);
  CHECK(std::abs(bleu_n(s({0, 1, 2, 3}), refs, 2) - std::sqrt(0.75 * 2.0 / 3.0)) < 1e-9);
  // Candidate shorter than the only reference: brevity penalty exp(1 - 4/2).
  const std::vector<Sequence> longer{s({0, 1, 2, 3})};
  CHECK(std::abs(bleu_n(s({0, 1}), longer, 1) - std::exp(-1.0)) < 1e-9);
  // Equidistant references of lengths 2 and 4 for a length-3 candidate: the shorter wins.
  const std::vector<Sequence> tie{s({0, 1, 2, 3}), s({0, 1})};
  CHECK(std::abs(bleu_n(s({0, 1, 2}), tie, 1) - 1.0) < 1e-9);
}

TEST_CASE("self_bleu: identical corpus is 1") {
  const std::vector<Sequence> corpus(4, s({0, 1, 2, 3, 0}));
  for (std::size_t n = 3; n <= 5; ++n) CHECK(std::abs(self_bleu_n(corpus, n) - 1.0) < 1e-9);
}

TEST_CASE("self_bleu: disjoint vocabularies score zero") {
  const std::vector<Sequence> corpus{s({0, 0, 0, 0, 0}), s({1, 1, 1, 1, 1})};
  for (std::size_t n = 3; n <= 5; ++n) {
    const double v = self_bleu_n(corpus, n);
    CHECK(v >= 0.0);
    CHECK(v <= 1e-9 * (1.0 + 1e-12));
  }
}

TEST_CASE("self_bleu matches an independent implementation") {
  const std::vector<Sequence> three{s({0, 1, 2, 3, 1}), s({0, 1, 2, 2}), s({3, 1, 2, 3, 1, 0})};
  for (std::size_t n = 3; n <= 5; ++n) {
    CHECK(std::abs(self_bleu_n(three, n) - reference_self_bleu(three, n)) < 1e-9);
  }
  Rng rng(21);
  const auto task = testing::distributional_task(6);
  for (int rep = 0; rep < 20; ++rep) {
    const auto corpus = task.base->sample(rng, 12);
    for (std::size_t n = 3; n <= 5; ++n) {
      const bool any = std::any_of(corpus.begin(), corpus.end(), [&](const Sequence& x) { return x.length() >= n; });
      if (!any) {
        CHECK(std::isnan(self_bleu_n(corpus, n)));
        continue;
      }
      CHECK(std::abs(self_bleu_n(corpus, n) - reference_self_bleu(corpus, n)) < 1e-9);
    }
  }
}

TEST_CASE("self_bleu: invariances and errors") {
  std::vector<Sequence> corpus{s({0, 1, 2, 3}), s({0, 1, 3, 3, 2}), s({2, 2, 1, 0}), s({1, 2, 3})};
  const double base = self_bleu_n(corpus, 3);
  std::reverse(corpus.begin(), corpus.end());
  CHECK(std::abs(self_bleu_n(corpus, 3) - base) < 1e-12);
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    auto more = corpus;
    more.push_back(corpus[i]);
    CHECK(self_bleu_n(more, 3) >= base - 1e-12);
  }
  const std::vector<Sequence> one{s({0, 1, 2})};
  expect_kind([&] { self_bleu_n(one, 3); }, ErrorKind::TooFewSamples);
  const std::vector<Sequence> shorts{s({0}), s({1, 2})};
  CHECK(std::isnan(self_bleu_n(shorts, 3)));
}

TEST_CASE("zipf table") {
  const auto v = Vocabulary::with_eos({"a", "b", "c"});
  const std::vector<Sequence> corpus{s({0, 0, 1})};
  const auto t = zipf_table(corpus, v);
  REQUIRE(t.rows.size() == 2);
  CHECK(t.rows[0].rank == 1);
  CHECK(t.rows[0].token == "a");
  CHECK(t.rows[0].frequency == 2);
  CHECK(t.rows[1].rank == 2);
  CHECK(t.rows[1].token == "b");
  CHECK(t.rows[1].frequency == 1);
  CHECK(t.total_tokens == 3);

  const std::vector<Sequence> ties{s({2, 1, 0})};
  const auto tt = zipf_table(ties, v);
  CHECK(tt.rows[0].token == "a");
  CHECK(tt.rows[2].token == "c");

  std::ostringstream out;
  write_zipf_csv(out, t);
  CHECK(out.str() == "rank,token,frequency\n1,a,2\n2,b,1\n");

  const std::vector<Sequence> empty{Sequence{}, Sequence{}};
  expect_kind([&] { zipf_table(empty, v); }, ErrorKind::EmptyCorpus);
}

TEST_CASE("zipf table on a uniform corpus is flat and sums exactly") {
  const SequenceSpace space(testing::abcd_vocabulary(), 6);
  const auto m = TabularARModel::uniform(space, 1);
  Rng rng(4);
  const auto xs = m.sample(rng, 20000);
  const auto t = zipf_table(xs, space.vocabulary());
  std::size_t sum = 0, total = 0;
  for (const auto& x : xs) total += x.length();
  for (std::size_t i = 0; i < t.rows.size(); ++i) {
    sum += t.rows[i].frequency;
    if (i > 0) CHECK(t.rows[i].frequency <= t.rows[i - 1].frequency);
  }
  CHECK(sum == t.total_tokens);
  CHECK(sum == total);
  CHECK(t.rows.size() == 4);
  const double ratio = static_cast<double>(t.rows.back().frequency) / static_cast<double>(t.rows.front().frequency);
  CHECK(ratio > 0.95);
}

TEST_CASE("metrics csv layout") {
  MetricsCsv csv({"d"}, true, {"seed"});
  std::ostringstream out;
  csv.write_header(out);
  CHECK(out.str() ==
        "seed,method,step,e_phi_d,kl_p_pi,kl_p_pi_se,kl_pi_a,kl_pi_a_se,dist_1,dist_2,dist_3,"
        "self_bleu_3,self_bleu_4,self_bleu_5,z_ma,kl_p_pi_exact,kl_pi_a_exact,e_phi_exact_d\n");
  MetricsRecord r;
  r.step = 3;
  r.e_phi = {0.5};
  r.kl_p_pi = {0.25, 0.01, 10};
  r.kl_pi_a = {1.0, 0.02, 10};
  r.dist = {1.0, 0.5, 0.25};
  r.self_bleu = {std::nan(""), 0.0, 0.125};
  r.z_estimate = 2.0;
  r.exact = ExactColumns{0.2, 0.9, {0.45}};
  std::ostringstream row;
  csv.write_row(row, "gdc", r, {"7"});
  CHECK(row.str() == "7,gdc,3,0.5,0.25,0.01,1,0.02,1,0.5,0.25,nan,0,0.125,2,0.2,0.9,0.45\n");
  CHECK(format_number(1.0 / 3.0) == "0.3333333333");
}
