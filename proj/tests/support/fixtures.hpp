#pragma once

// Shared test scenarios: a synthetic corpus drawn from a fixed teacher
// bigram, the bigram base fitted on it, and hand-built rare-event bases.

#include <array>
#include <map>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include "gdc/ebm.hpp"
#include "gdc/features.hpp"
#include "gdc/lm.hpp"
#include "gdc/random.hpp"
#include "gdc/seqspace.hpp"

namespace gdc::testing {

// Teacher over {a, b, c, d}: rows are the previous token (start, a, b, c, d),
// columns the next token (a, b, c, d, EOS). "d" is rare.
inline constexpr std::array<std::array<double, 5>, 5> kTeacher{{
    {0.40, 0.30, 0.27, 0.03, 0.00},
    {0.15, 0.40, 0.20, 0.02, 0.23},
    {0.35, 0.10, 0.30, 0.03, 0.22},
    {0.30, 0.30, 0.15, 0.02, 0.23},
    {0.30, 0.30, 0.20, 0.00, 0.20},
}};

inline std::string synthetic_corpus(std::uint64_t seed, std::size_t lines, std::size_t max_words = 8) {
  static const std::array<const char*, 4> words{"a", "b", "c", "d"};
  Rng rng(seed);
  std::ostringstream out;
  for (std::size_t line = 0; line < lines; ++line) {
    std::size_t prev = 0;
    std::size_t written = 0;
    while (written < max_words) {
      const double u = rng.uniform();
      double cumulative = 0.0;
      std::size_t next = 4;
      for (std::size_t j = 0; j < 5; ++j) {
        cumulative += kTeacher[prev][j];
        if (u < cumulative) {
          next = j;
          break;
        }
      }
      if (next == 4) {
        if (written > 0) break;
        continue;  // no empty lines
      }
      out << (written ? " " : "") << words[next];
      ++written;
      prev = next + 1;
    }
    out << '\n';
  }
  return out.str();
}

inline Vocabulary abcd_vocabulary() { return Vocabulary::with_eos({"a", "b", "c", "d"}); }

inline std::vector<Sequence> synthetic_sequences(std::uint64_t seed, std::size_t lines, std::size_t lmax) {
  return tokenize_corpus(synthetic_corpus(seed, lines, lmax), abcd_vocabulary(), lmax).sequences;
}

struct Task {
  std::shared_ptr<const TabularARModel> base;
  ConstraintSet constraints;
};

// Bigram base (add-one smoothing) fitted on a 200-line synthetic corpus,
// with the distributional constraint E[presence(d)] = 0.5.
inline Task distributional_task(std::size_t lmax = 5) {
  const auto vocab = abcd_vocabulary();
  const auto corpus = tokenize_corpus(synthetic_corpus(7, 200), vocab, lmax);
  const SequenceSpace space(vocab, lmax);
  auto base = std::make_shared<const TabularARModel>(mle_fit(corpus.sequences, space, 2, 1.0));
  ConstraintSet constraints({ConstraintSpec::make(Feature::token_presence("d", vocab.index("d")), 0.5, false)});
  return {std::move(base), std::move(constraints)};
}

// Bigram base where token `rare` is emitted with probability `rare_prob`
// from every context; the other tokens and EOS share the rest.
/// Bigram with fixed per-step probabilities for the listed rare tokens and EOS;
/// the remaining body tokens share the rest evenly.
inline std::shared_ptr<const TabularARModel> rare_tokens_base(const SequenceSpace& space,
                                                              const std::map<TokenId, double>& rare,
                                                              double eos_prob = 0.2) {
  auto model = TabularARModel::uniform(space, 2);
  const auto& vocab = space.vocabulary();
  double rare_mass = 0.0;
  for (const auto& [t, p] : rare) rare_mass += p;
  const double others =
      (1.0 - rare_mass - eos_prob) / static_cast<double>(vocab.body_size() - rare.size());
  std::vector<double> logits(vocab.size());
  for (std::size_t row = 0; row < model.context_count(); ++row) {
    for (std::size_t j = 0; j < vocab.size(); ++j) {
      const auto t = static_cast<TokenId>(j);
      const auto it = rare.find(t);
      const double p = it != rare.end() ? it->second : (t == vocab.eos() ? eos_prob : others);
      logits[j] = std::log(p);
    }
    model.set_logits(row, logits);
  }
  return std::make_shared<const TabularARModel>(std::move(model));
}

inline std::shared_ptr<const TabularARModel> rare_token_base(const SequenceSpace& space, TokenId rare,
                                                             double rare_prob, double eos_prob = 0.2) {
  return rare_tokens_base(space, {{rare, rare_prob}}, eos_prob);
}

}  // namespace gdc::testing
