#pragma once

#include <cstddef>
#include <cstdint>
#include <limits>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "gdc/random.hpp"
#include "gdc/seqspace.hpp"

namespace gdc {

/// Context padding marker. Distinct from EOS, which never appears in a context.
inline constexpr TokenId kBos = -1;

inline constexpr double kNegInf = -std::numeric_limits<double>::infinity();

/// Score-function gradient of one sequence: per visited context row, the
/// summed (one_hot - softmax) vectors over the full vocabulary.
using SparseGradient = std::map<std::size_t, std::vector<double>>;

class TabularARModel;

/// Dense accumulator shaped like a model's logit table.
class LogitGradient {
 public:
  LogitGradient() = default;
  explicit LogitGradient(const TabularARModel& model);

  void add(const SparseGradient& g, double weight);
  void scale(double factor);
  void clear();

  std::span<const double> values() const { return values_; }
  std::span<double> values() { return values_; }
  std::size_t rows() const { return rows_; }
  std::size_t width() const { return width_; }

 private:
  std::vector<double> values_;
  std::size_t rows_ = 0;
  std::size_t width_ = 0;
};

/// Order-k autoregressive model with one softmax per reachable context.
/// The context of a position is the previous k-1 tokens, left-padded with
/// kBos. EOS at body position lmax is forced with probability one, so the
/// model is a normalized distribution over the finite universe.
class TabularARModel {
 public:
  TabularARModel() = default;

  /// All logits zero: uniform next-token distributions.
  static TabularARModel uniform(SequenceSpace space, int order);

  /// Order that makes the context the entire prefix, i.e. full capacity.
  static int full_history_order(const SequenceSpace& space) { return static_cast<int>(space.lmax()) + 1; }

  const SequenceSpace& space() const { return space_; }
  const Vocabulary& vocabulary() const { return space_.vocabulary(); }
  int order() const { return order_; }
  bool trainable() const { return trainable_; }
  /// Trainable models must keep full support: no -inf logits.
  void set_trainable(bool trainable);

  std::size_t context_count() const { return contexts_.size(); }
  std::size_t width() const { return space_.vocabulary().size(); }

  /// Context tokens of a row, kBos for padding; length order-1.
  std::vector<TokenId> context(std::size_t row) const;
  /// Throws InvalidArgument for unreachable contexts.
  std::size_t row_of(std::span<const TokenId> context) const;

  std::span<const double> logits(std::size_t row) const;
  std::span<const double> probabilities(std::size_t row) const;
  std::span<const double> log_probabilities(std::size_t row) const;
  void set_logits(std::size_t row, std::span<const double> logits);

  /// Rows visited while generating x, one per decision (EOS step included
  /// unless x has length lmax).
  std::vector<std::size_t> visited_rows(const Sequence& x) const;

  double log_prob(const Sequence& x) const;
  double prob(const Sequence& x) const;

  Sequence sample_one(Rng& rng) const;
  std::vector<Sequence> sample(Rng& rng, std::size_t n) const;

  /// Throws NotTrainable on frozen models.
  SparseGradient grad_log_prob(const Sequence& x) const;

  /// logits += learning_rate * gradient. Throws NotTrainable on frozen models.
  void apply_update(const LogitGradient& gradient, double learning_rate);
  void apply_update(const SparseGradient& gradient, double learning_rate);

  /// Same distribution re-expressed with a longer context (new_order >= order).
  TabularARModel with_order(int new_order) const;

  /// log_prob of every sequence, aligned with enumerate(space()).
  std::vector<double> log_prob_table() const;

  std::span<const double> raw_logits() const { return logits_; }

 private:
  TabularARModel(SequenceSpace space, int order);

  std::uint64_t push(std::uint64_t code, TokenId token) const;
  std::size_t row_for_code(std::uint64_t code) const;
  void refresh_row(std::size_t row);
  void check_trainable(const char* what) const;

  SequenceSpace space_;
  int order_ = 1;
  bool trainable_ = false;
  std::uint64_t base_ = 1;          // body tokens + 1 (digit 0 is kBos)
  std::uint64_t window_modulus_ = 1;  // base_^(order-1)
  std::vector<std::uint64_t> contexts_;
  std::unordered_map<std::uint64_t, std::size_t> rows_;
  std::vector<double> logits_;
  std::vector<double> probs_;
  std::vector<double> log_probs_;

  friend TabularARModel mle_fit(std::span<const Sequence>, const SequenceSpace&, int, double);
  friend TabularARModel deserialize_model(std::string_view);
};

/// Add-`smoothing` count estimate. Logits are log counts; contexts never
/// observed (with smoothing 0) fall back to uniform. Any -inf logit leaves
/// the model frozen. Throws EmptyCorpus.
TabularARModel mle_fit(std::span<const Sequence> corpus, const SequenceSpace& space, int order, double smoothing);

struct SgdConfig {
  double learning_rate = 0.1;
  std::size_t steps = 1;
  std::size_t batch_size = 1;
  std::uint64_t seed = 0;
};

inline constexpr int kModelFormatVersion = 1;

/// JSON document {format, version, order, lmax, vocabulary, eos_index,
/// trainable, contexts: [{context, logits}]}; -inf logits are the string "-inf".
std::string serialize_model(const TabularARModel& model);
/// Throws SchemaMismatch on unknown/missing fields or a version mismatch.
TabularARModel deserialize_model(std::string_view document);

}  // namespace gdc
