#pragma once

#include <cstddef>
#include <map>
#include <string>
#include <variant>
#include <vector>

#include "gdc/seqspace.hpp"

namespace gdc {

enum class FeatureRange { Binary, Unit };

enum class FeatureKind { TokenPresence, WordlistPresence, TokenRatio, PrefixMatch, PredicateTable };

std::string_view to_string(FeatureKind kind);

/// Rule-based feature phi(x). Total over the universe, including the empty
/// sequence.
class Feature {
 public:
  static Feature token_presence(std::string id, TokenId token);
  static Feature wordlist_presence(std::string id, std::vector<TokenId> tokens);
  /// count(numerator tokens) / count(denominator tokens); `empty_value` when
  /// no denominator token occurs. Numerator must be a subset of denominator.
  static Feature token_ratio(std::string id, std::vector<TokenId> numerator, std::vector<TokenId> denominator,
                             double empty_value = 0.0);
  static Feature prefix_match(std::string id, std::vector<TokenId> prefix);
  /// Explicit values; sequences absent from the table evaluate to `fallback`.
  static Feature predicate_table(std::string id, std::map<Sequence, double> table, FeatureRange range,
                                 double fallback = 0.0);

  const std::string& id() const { return id_; }
  FeatureKind kind() const;
  FeatureRange range() const { return range_; }
  bool binary() const { return range_ == FeatureRange::Binary; }

  double evaluate(const Sequence& x) const;

  struct Presence {
    std::vector<TokenId> tokens;
  };
  struct Ratio {
    std::vector<TokenId> numerator;
    std::vector<TokenId> denominator;
    double empty_value;
  };
  struct Prefix {
    std::vector<TokenId> prefix;
  };
  struct Table {
    std::map<Sequence, double> values;
    double fallback;
  };
  using Rule = std::variant<Presence, Ratio, Prefix, Table>;

  const Rule& rule() const { return rule_; }

 private:
  Feature(std::string id, FeatureRange range, Rule rule, bool single_token);

  std::string id_;
  FeatureRange range_;
  Rule rule_;
  bool single_token_ = false;
};

struct ConstraintSpec {
  Feature feature;
  double target;
  bool pointwise;

  /// Validates: pointwise needs a binary feature with target 1; a
  /// distributional binary target must lie strictly inside (0, 1); a unit
  /// range target inside [0, 1]. Throws ConfigError.
  static ConstraintSpec make(Feature feature, double target, bool pointwise);
};

class ConstraintSet {
 public:
  ConstraintSet() = default;
  /// Throws ConfigError on duplicate feature ids.
  explicit ConstraintSet(std::vector<ConstraintSpec> constraints);

  std::size_t size() const { return constraints_.size(); }
  bool empty() const { return constraints_.empty(); }
  const ConstraintSpec& operator[](std::size_t i) const { return constraints_[i]; }
  auto begin() const { return constraints_.begin(); }
  auto end() const { return constraints_.end(); }

  std::size_t pointwise_count() const;
  bool all_pointwise() const { return !empty() && pointwise_count() == size(); }
  std::vector<double> targets() const;
  std::vector<std::string> ids() const;
  /// -1 when absent.
  int find(const std::string& id) const;

  /// Copy extended by more constraints (ids must stay unique).
  ConstraintSet extended(const std::vector<ConstraintSpec>& more) const;

 private:
  std::vector<ConstraintSpec> constraints_;
};

double evaluate(const Feature& feature, const Sequence& x);
/// phi(x) with components in constraint order.
std::vector<double> evaluate_vector(const ConstraintSet& constraints, const Sequence& x);
/// b(x): product of pointwise feature values. Throws NoPointwiseConstraints.
double pointwise_predicate(const ConstraintSet& constraints, const Sequence& x);

}  // namespace gdc
