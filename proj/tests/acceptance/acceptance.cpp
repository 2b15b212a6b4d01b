// Acceptance run: one PASS/FAIL line per criterion, nonzero exit on any failure.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <string>
#include <vector>

#include "fixtures.hpp"
#include "gdc/baselines.hpp"
#include "gdc/dpg.hpp"
#include "gdc/ebm.hpp"
#include "gdc/estimators.hpp"
#include "gdc/experiment.hpp"
#include "gdc/metrics.hpp"

using namespace gdc;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

// Oracles over an enumerated universe, kept apart from the library's own helpers.
double kl(const std::vector<double>& p, const std::vector<double>& q) {
  double s = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (p[i] > 0.0) s += p[i] * std::log(p[i] / q[i]);
  }
  return s;
}

double entropy(const std::vector<double>& p) {
  double s = 0.0;
  for (double v : p) {
    if (v > 0.0) s -= v * std::log(v);
  }
  return s;
}

std::vector<double> probs_of(const TabularARModel& m, const std::vector<Sequence>& all) {
  std::vector<double> out(all.size());
  for (std::size_t i = 0; i < all.size(); ++i) out[i] = m.prob(all[i]);
  return out;
}

struct Target {
  double z = 0.0;
  std::vector<double> p;
};

// p = a exp(<lambda, phi>) / Z (or a b / Z), summed directly from a(x) and phi(x).
Target normalize(const TabularARModel& base, const ConstraintSet& cs, const std::vector<double>& lambda, bool pointwise,
                 const std::vector<Sequence>& all) {
  Target t;
  t.p.resize(all.size());
  for (std::size_t i = 0; i < all.size(); ++i) {
    double w = base.prob(all[i]);
    for (std::size_t j = 0; j < cs.size(); ++j) {
      const double f = cs[j].feature.evaluate(all[i]);
      w *= pointwise ? f : std::exp(lambda[j] * f);
    }
    t.p[i] = w;
    t.z += w;
  }
  for (auto& v : t.p) v /= t.z;
  return t;
}

double moment(const std::vector<double>& p, const Feature& f, const std::vector<Sequence>& all) {
  double m = 0.0;
  for (std::size_t i = 0; i < all.size(); ++i) m += p[i] * f.evaluate(all[i]);
  return m;
}

int failures = 0;

void report(int id, const char* title, bool pass, const std::string& detail) {
  std::printf("criterion %d [%s]: %s (%s)\n", id, title, pass ? "PASS" : "FAIL", detail.c_str());
  std::fflush(stdout);
  if (!pass) ++failures;
}

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

FitConfig criterion1_fit() {
  FitConfig fc;
  fc.tolerance = 1e-5;
  fc.sgd.seed = 1;
  return fc;
}

void criterion1() {
  const auto t0 = Clock::now();
  const auto task = testing::distributional_task(4);
  const auto all = enumerate(task.base->space());
  const auto a = probs_of(*task.base, all);
  const double base_moment = moment(a, task.constraints[0].feature, all);
  const auto fit = fit_lambda(task.base, task.constraints, criterion1_fit());
  const auto p = normalize(*task.base, task.constraints, fit.report.lambda, false, all);
  const double m = moment(p.p, task.constraints[0].feature, all);
  const double secs = seconds_since(t0);
  const bool pass = base_moment >= 0.05 && base_moment <= 0.15 && fit.report.converged && fit.report.objective < 0.01 &&
                    std::abs(m - 0.5) < 0.02 && secs < 60.0;
  report(1, "exact-oracle lambda fit", pass,
         fmt("base moment %.4f, lambda %.4f, objective %.2e, exact moment %.4f, %.1fs", base_moment,
             fit.report.lambda[0], fit.report.objective, m, secs));
}

void criterion2() {
  const auto t0 = Clock::now();
  const auto task = testing::distributional_task(4);
  const auto all = enumerate(task.base->space());
  const auto a = probs_of(*task.base, all);
  // The information projection onto C itself, so that p lies in C.
  const auto lambda = exact_fit_lambda(*task.base, task.constraints);
  const auto p = normalize(*task.base, task.constraints, lambda, false, all);
  const auto features = feature_table(task.base->space(), task.constraints);
  const auto& f = task.constraints[0].feature;
  std::size_t members = 0, good = 0;
  double worst = 0.0;
  for (std::uint64_t seed = 0; seed < 8; ++seed) {
    const auto c = moment_matched_member(p.p, features, 100 + seed, 0.2 + 0.1 * static_cast<double>(seed % 5));
    if (std::abs(moment(c, f, all) - task.constraints[0].target) > 1e-9 || kl(c, p.p) < 1e-4) continue;
    ++members;
    const double r = std::abs(kl(c, a) - kl(c, p.p) - kl(p.p, a));
    worst = std::max(worst, r);
    good += r < 1e-4;
  }
  const double secs = seconds_since(t0);
  report(2, "Pythagorean identity", good >= 5 && good == members && secs < 30.0,
         fmt("%zu/%zu members of C with residual < 1e-4, max residual %.2e, %.1fs", good, members, worst, secs));
}

void criterion3() {
  const auto task = testing::distributional_task(4);
  const auto all = enumerate(task.base->space());
  const ConstraintSet cs({ConstraintSpec::make(task.constraints[0].feature, 1.0, true)});
  const auto exponential = exact_normalize(Ebm::exponential(task.base, cs, {20.0}, 20.0));
  const auto pointwise = exact_normalize(build_pointwise(task.base, cs));
  const auto oracle = normalize(*task.base, cs, {}, true, all);
  double oracle_gap = 0.0;
  for (std::size_t i = 0; i < all.size(); ++i) oracle_gap = std::max(oracle_gap, std::abs(oracle.p[i] - pointwise.probs[i]));
  const double d = kl(pointwise.probs, exponential.probs);
  report(3, "pointwise-limit equivalence", d < 1e-3 && oracle_gap < 1e-12,
         fmt("KL(p_pointwise || p_exponential) = %.3e", d));
}

void criterion4() {
  const auto t0 = Clock::now();
  const auto task = testing::distributional_task(4);
  const auto all = enumerate(task.base->space());
  const auto a = probs_of(*task.base, all);
  const std::size_t n = 100000;
  std::size_t hz = 0, hkl = 0, hrev = 0, htvd = 0;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    Rng rng(5000 + seed);
    const double lambda = 0.5 + 2.5 * rng.uniform();
    const auto ebm = Ebm::exponential(task.base, task.constraints, {lambda});
    const auto target = normalize(*task.base, task.constraints, {lambda}, false, all);
    const auto pi = mle_fit(testing::synthetic_sequences(9000 + seed, 40, 4), task.base->space(), 2, 0.5);
    const auto pd = probs_of(pi, all);
    double tvd = 0.0;
    for (std::size_t i = 0; i < all.size(); ++i) tvd += 0.5 * std::abs(target.p[i] - pd[i]);

    const auto xs = task.base->sample(rng, n);
    const auto z = estimate_z(ebm, *task.base, xs);
    const auto k = estimate_kl_p_from(ebm, pi, *task.base, xs, target.z);
    const auto t = estimate_tvd(ebm, pi, *task.base, xs, target.z);
    const auto ys = pi.sample(rng, n);
    const auto r = estimate_kl_between_models(pi, *task.base, ys);
    hz += std::abs(z.value - target.z) < 3.0 * z.standard_error;
    hkl += std::abs(k.value - kl(target.p, pd)) < 3.0 * k.standard_error;
    htvd += std::abs(t.value - tvd) < 3.0 * t.standard_error;
    hrev += std::abs(r.value - kl(pd, a)) < 3.0 * r.standard_error;
  }
  const double secs = seconds_since(t0);
  const bool pass = hz >= 95 && hkl >= 95 && htvd >= 95 && hrev >= 95 && secs < 300.0;
  report(4, "estimator suite", pass,
         fmt("within 3 SE: Z %zu/100, KL(p||pi) %zu/100, KL(pi||a) %zu/100, TVD %zu/100, %.1fs", hz, hkl, hrev, htvd,
             secs));
}

void criterion5() {
  const auto t0 = Clock::now();
  const auto task = testing::distributional_task(4);
  const auto all = enumerate(task.base->space());
  const auto fit = fit_lambda(task.base, task.constraints, criterion1_fit());
  const auto p = normalize(*task.base, task.constraints, fit.report.lambda, false, all);
  const auto& f = task.constraints[0].feature;
  const double ep = moment(p.p, f, all);
  std::size_t ok = 0;
  std::string detail;
  for (std::uint64_t seed = 1; seed <= 3; ++seed) {
    DpgConfig d;
    d.iterations = 200;
    d.steps_per_iteration = 1024;
    d.learning_rate = 3.0;
    d.adaptivity = Adaptivity::Kl;
    d.seed = seed;
    const auto state = train(*task.base, fit.ebm, d);
    const auto pi = probs_of(state.policy, all);
    const double k = kl(p.p, pi);
    const double gap = std::abs(moment(pi, f, all) - ep);
    ok += k < 0.05 && gap < 0.05;
    detail += fmt("seed %llu KL %.4f |dE| %.4f; ", static_cast<unsigned long long>(seed), k, gap);
  }
  const double secs = seconds_since(t0);
  report(5, "DPG convergence", ok == 3 && secs < 300.0, detail + fmt("%.1fs", secs));
}

void criterion6() {
  const auto vocab = testing::abcd_vocabulary();
  const SequenceSpace space(vocab, 4);
  const auto base = testing::rare_token_base(space, vocab.index("d"), 9e-4);
  const ConstraintSet cs({ConstraintSpec::make(Feature::prefix_match("d", {vocab.index("d")}), 1.0, true)});
  const auto ebm = build_pointwise(base, cs);
  const auto all = enumerate(space);
  const auto a = probs_of(*base, all);
  const double satisfaction = moment(a, cs[0].feature, all);
  const auto p = normalize(*base, cs, {}, true, all);
  auto samples_to_threshold = [&](Adaptivity mode, std::uint64_t seed) {
    DpgConfig d;
    d.iterations = 150;
    d.steps_per_iteration = 1024;
    d.learning_rate = 1000.0;
    d.adaptivity = mode;
    d.seed = seed;
    double hit = INFINITY;
    train(*base, ebm, d, nullptr, [&](const TrainState& s) {
      if (std::isinf(hit) && kl(p.p, probs_of(s.policy, all)) < 0.1) hit = static_cast<double>(s.samples_drawn);
    });
    return hit;
  };
  bool faster = true, similar = true;
  std::string detail = fmt("base satisfaction %.1e; ", satisfaction);
  for (std::uint64_t seed = 1; seed <= 3; ++seed) {
    const double k = samples_to_threshold(Adaptivity::Kl, seed);
    const double t = samples_to_threshold(Adaptivity::Tvd, seed);
    const double n = samples_to_threshold(Adaptivity::None, seed);
    faster = faster && k < n;
    similar = similar && std::isfinite(k) && std::isfinite(t) && std::max(k, t) <= 2.0 * std::min(k, t);
    detail += fmt("seed %llu kl %.0f tvd %.0f none %.0f; ", static_cast<unsigned long long>(seed), k, t, n);
  }
  report(6, "adaptivity ablation", satisfaction <= 1e-3 && faster && similar, detail + "samples to KL < 0.1");
}

void criterion7() {
  const auto vocab = testing::abcd_vocabulary();
  const SequenceSpace space(vocab, 4);
  const auto base = testing::rare_token_base(space, vocab.index("d"), 0.05);
  const ConstraintSet cs({ConstraintSpec::make(Feature::token_presence("d", vocab.index("d")), 1.0, true)});
  const auto ebm = build_pointwise(base, cs);
  const auto all = enumerate(space);
  const auto a = probs_of(*base, all);
  std::size_t ordered = 0, lowest_entropy = 0;
  std::string detail;
  for (std::uint64_t seed = 1; seed <= 3; ++seed) {
    DpgConfig d;
    d.iterations = 200;
    d.steps_per_iteration = 1024;
    d.learning_rate = 20.0;
    d.seed = seed;
    const auto gdc = probs_of(train(*base, ebm, d).policy, all);
    auto baseline = [&](BaselineKind kind, double lr, double beta) {
      BaselineConfig c;
      c.kind = kind;
      c.iterations = 200;
      c.steps_per_iteration = 1024;
      c.learning_rate = lr;
      c.beta = beta;
      c.seed = seed;
      return probs_of(train_baseline(*base, ebm, c).policy, all);
    };
    const auto phi = baseline(BaselineKind::ReinforcePhi, 1.0, 0.0);
    const auto pen = baseline(BaselineKind::KlPenalized, 1.0, 0.1);
    const auto rp = baseline(BaselineKind::ReinforceP, 1000.0, 0.0);
    const double kg = kl(gdc, a), kp = kl(pen, a), kf = kl(phi, a);
    ordered += kg < kp && kp < kf;
    const double hr = entropy(rp);
    lowest_entropy += hr < entropy(gdc) && hr < entropy(phi) && hr < entropy(pen);
    detail += fmt("seed %llu KL gdc %.3f pen %.3f phi %.3f, H(reinforce-P) %.3f; ", static_cast<unsigned long long>(seed),
                  kg, kp, kf, hr);
  }
  report(7, "baseline ordering", ordered >= 2 && lowest_entropy == 3,
         detail + fmt("ordering %zu/3, lowest entropy %zu/3", ordered, lowest_entropy));
}

TabularARModel random_model(const SequenceSpace& space, int order, Rng& rng) {
  auto m = TabularARModel::uniform(space, order);
  m.set_trainable(true);
  std::vector<double> l(m.width());
  for (std::size_t r = 0; r < m.context_count(); ++r) {
    for (auto& v : l) v = 2.0 * rng.uniform() - 1.0;
    m.set_logits(r, l);
  }
  return m;
}

void criterion8() {
  const SequenceSpace space(testing::abcd_vocabulary(), 3);
  const auto all = enumerate(space);
  Rng rng(808);

  // grad_log_prob against central differences along random directions.
  double worst_fd = 0.0;
  for (int c = 0; c < 100; ++c) {
    const auto m = random_model(space, 1 + c % 4, rng);
    const auto& x = all[rng.below(all.size())];
    std::vector<double> dir(m.context_count() * m.width());
    for (auto& d : dir) d = rng.uniform() - 0.5;
    double analytic = 0.0;
    for (const auto& [row, vec] : m.grad_log_prob(x)) {
      for (std::size_t j = 0; j < vec.size(); ++j) analytic += vec[j] * dir[row * m.width() + j];
    }
    auto shifted = [&](double s) {
      auto copy = m;
      std::vector<double> l(m.width());
      for (std::size_t r = 0; r < m.context_count(); ++r) {
        const auto base = m.logits(r);
        for (std::size_t j = 0; j < l.size(); ++j) l[j] = base[j] + s * dir[r * m.width() + j];
        copy.set_logits(r, l);
      }
      return copy.log_prob(x);
    };
    const double h = 1e-5;
    const double numeric = (shifted(h) - shifted(-h)) / (2.0 * h);
    worst_fd = std::max(worst_fd, std::abs(numeric - analytic) / std::max(1.0, std::abs(analytic)));
  }

  // Expected DPG update against -Z grad CE(p, pi), accumulated from one-hot counts.
  const auto task = testing::distributional_task(3);
  const auto& tspace = task.base->space();
  const auto tall = enumerate(tspace);
  double worst_update = 0.0;
  for (int c = 0; c < 20; ++c) {
    const auto policy = random_model(tspace, TabularARModel::full_history_order(tspace), rng);
    auto proposal = random_model(tspace, TabularARModel::full_history_order(tspace), rng);
    proposal.set_trainable(false);
    const double lambda = 4.0 * rng.uniform() - 2.0;
    const auto ebm = Ebm::exponential(task.base, task.constraints, {lambda});
    const auto target = normalize(*task.base, task.constraints, {lambda}, false, tall);
    std::vector<double> oracle(policy.context_count() * policy.width(), 0.0);
    const std::size_t ctx_len = static_cast<std::size_t>(policy.order() - 1);
    for (std::size_t i = 0; i < tall.size(); ++i) {
      const auto& toks = tall[i].tokens;
      const std::size_t steps = toks.size() < tspace.lmax() ? toks.size() + 1 : toks.size();
      for (std::size_t t = 0; t < steps; ++t) {
        std::vector<TokenId> ctx(ctx_len, kBos);
        for (std::size_t j = 0; j < t && j < ctx_len; ++j) ctx[ctx_len - 1 - j] = toks[t - 1 - j];
        const std::size_t row = policy.row_of(ctx);
        const TokenId next = t < toks.size() ? toks[t] : tspace.vocabulary().eos();
        const auto probs = policy.probabilities(row);
        for (std::size_t j = 0; j < policy.width(); ++j) {
          const double one_hot = static_cast<TokenId>(j) == next ? 1.0 : 0.0;
          oracle[row * policy.width() + j] += target.z * target.p[i] * (one_hot - probs[j]);
        }
      }
    }
    const auto expected = exact_expected_update(policy, ebm, proposal);
    for (std::size_t i = 0; i < oracle.size(); ++i) {
      worst_update = std::max(worst_update, std::abs(expected.values()[i] - oracle[i]));
    }
  }

  // SNIS objective gradient against central differences.
  const auto big = testing::distributional_task(4);
  const ConstraintSet two({big.constraints[0], ConstraintSpec::make(Feature::token_presence("a", big.base->vocabulary().index("a")), 0.6, false)});
  Rng srng(9);
  const auto xs = big.base->sample(srng, 20000);
  const FeatureSample sample(xs, two);
  double worst_snis = 0.0;
  for (int c = 0; c < 20; ++c) {
    const std::vector<double> lambda{4.0 * rng.uniform() - 2.0, 4.0 * rng.uniform() - 2.0};
    const auto obj = snis_objective(lambda, two.targets(), sample);
    for (std::size_t k = 0; k < lambda.size(); ++k) {
      const double h = 1e-5;
      auto up = lambda, dn = lambda;
      up[k] += h;
      dn[k] -= h;
      const double fd = (snis_objective(up, two.targets(), sample).value - snis_objective(dn, two.targets(), sample).value) /
                        (2.0 * h);
      worst_snis = std::max(worst_snis, std::abs(fd - obj.gradient[k]) / std::max(std::abs(fd), 1e-3));
    }
  }
  report(8, "gradient identities", worst_fd < 1e-6 && worst_update < 1e-8 && worst_snis < 1e-5,
         fmt("grad_log_prob rel %.2e (100 cases), expected update abs %.2e (20 cases), SNIS gradient rel %.2e",
             worst_fd, worst_update, worst_snis));
}

Sequence seq(std::initializer_list<TokenId> t) { return Sequence{std::vector<TokenId>(t)}; }

void criterion9() {
  double worst = 0.0;
  auto expect = [&](double got, double want) { worst = std::max(worst, std::abs(got - want)); };
  expect(dist_n(seq({7, 7, 7, 7}), 1), 0.25);
  expect(dist_n(seq({0, 1, 0, 1}), 1), 0.5);
  expect(dist_n(seq({0, 1, 0, 1}), 2), 2.0 / 3.0);
  expect(dist_n(seq({0, 1, 2}), 3), 1.0);
  expect(corpus_dist_n(std::vector<Sequence>{seq({7, 7, 7, 7}), seq({0, 1, 0, 1})}, 1), 0.375);

  const std::vector<Sequence> refs{seq({0, 1, 2})};
  expect(bleu_n(seq({0, 1, 2, 3}), refs, 1), 0.75);
  expect(bleu_n(seq({0, 1, 2, 3}), refs, 2), std::sqrt(0.75 * 2.0 / 3.0));
  expect(bleu_n(seq({0, 1}), std::vector<Sequence>{seq({0, 1, 2, 3})}, 1), std::exp(-1.0));
  // Two length-4 sequences sharing 3/4 unigrams, 2/3 bigrams and 1/2 trigrams.
  expect(self_bleu_n(std::vector<Sequence>{seq({0, 1, 2, 3}), seq({0, 1, 2, 4})}, 3), std::cbrt(0.75 * 2.0 / 3.0 * 0.5));

  const std::vector<Sequence> same(5, seq({0, 1, 2, 3, 0, 1}));
  double degenerate = 0.0;
  for (std::size_t n = 3; n <= 5; ++n) degenerate = std::max(degenerate, std::abs(self_bleu_n(same, n) - 1.0));

  Rng rng(99);
  const auto task = testing::distributional_task(5);
  const auto xs = task.base->sample(rng, 2000);
  const auto table = zipf_table(xs, task.base->vocabulary());
  std::size_t total = 0, from_rows = 0;
  for (const auto& x : xs) total += x.length();
  for (const auto& row : table.rows) from_rows += row.frequency;
  const bool zipf = total == from_rows && total == table.total_tokens;
  report(9, "metric oracles", worst < 1e-9 && degenerate < 1e-9 && zipf,
         fmt("max fixture error %.1e, degenerate Self-BLEU error %.1e, Zipf sum %zu = %zu", worst, degenerate, from_rows,
             total));
}

void criterion10() {
  const auto t0 = Clock::now();
  const auto vocab = testing::abcd_vocabulary();
  const SequenceSpace space(vocab, 4);
  const auto base = testing::rare_tokens_base(space, {{vocab.index("c"), 0.03}, {vocab.index("d"), 0.03}});
  const ConstraintSet cs({ConstraintSpec::make(Feature::token_presence("A", vocab.index("d")), 1.0, true),
                          ConstraintSpec::make(Feature::token_presence("B", vocab.index("c")), 0.5, false)});
  const auto all = enumerate(space);
  const auto a = probs_of(*base, all);
  const double base_a = moment(a, cs[0].feature, all);
  const double base_b = moment(a, cs[1].feature, all);
  FitConfig fc;
  fc.sample_count = 1'000'000;
  fc.sgd.learning_rate = 2.0;
  fc.sgd.steps = 1'000'000;
  fc.tolerance = 1e-5;
  fc.sgd.seed = 1;
  const auto fit = fit_lambda(base, cs, fc);
  const auto p = normalize(*base, cs, fit.report.lambda, false, all);
  const double pa = moment(p.p, cs[0].feature, all);
  const double pb = moment(p.p, cs[1].feature, all);
  bool policy_ok = true;
  std::string detail = fmt("base moments %.3f %.3f, lambda %.2f %.2f, E_p[A] %.4f E_p[B] %.4f; ", base_a, base_b,
                           fit.report.lambda[0], fit.report.lambda[1], pa, pb);
  for (std::uint64_t seed = 1; seed <= 3; ++seed) {
    DpgConfig d;
    d.iterations = 400;
    d.steps_per_iteration = 1024;
    d.learning_rate = 0.01;
    d.seed = seed;
    const auto pi = probs_of(train(*base, fit.ebm, d).policy, all);
    const double ea = moment(pi, cs[0].feature, all);
    const double eb = moment(pi, cs[1].feature, all);
    policy_ok = policy_ok && std::abs(ea - 1.0) < 0.05 && std::abs(eb - 0.5) < 0.05;
    detail += fmt("seed %llu E_pi[A] %.4f E_pi[B] %.4f; ", static_cast<unsigned long long>(seed), ea, eb);
  }
  report(10, "hybrid constraints", pa > 0.98 && std::abs(pb - 0.5) < 0.02 && policy_ok,
         detail + fmt("%.1fs", seconds_since(t0)));
}

}  // namespace

int main() {
  const std::vector<std::function<void()>> criteria{criterion1, criterion2, criterion3, criterion4, criterion5,
                                                    criterion6, criterion7, criterion8, criterion9, criterion10};
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    try {
      criteria[i]();
    } catch (const std::exception& e) {
      report(static_cast<int>(i + 1), "error", false, e.what());
    }
  }
  std::printf("%d of %zu criteria failed\n", failures, criteria.size());
  return failures == 0 ? 0 : 1;
}
