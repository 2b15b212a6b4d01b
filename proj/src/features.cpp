#include "gdc/features.hpp"

#include <algorithm>
#include <set>

#include "gdc/error.hpp"

namespace gdc {

namespace {

bool contains(const std::vector<TokenId>& set, TokenId t) { return std::find(set.begin(), set.end(), t) != set.end(); }

std::vector<TokenId> normalized(std::vector<TokenId> tokens) {
  std::sort(tokens.begin(), tokens.end());
  tokens.erase(std::unique(tokens.begin(), tokens.end()), tokens.end());
  return tokens;
}

}  // namespace

std::string_view to_string(FeatureKind kind) {
  switch (kind) {
    case FeatureKind::TokenPresence: return "token_presence";
    case FeatureKind::WordlistPresence: return "wordlist_presence";
    case FeatureKind::TokenRatio: return "token_ratio";
    case FeatureKind::PrefixMatch: return "prefix_match";
    case FeatureKind::PredicateTable: return "predicate_table";
  }
  return "unknown";
}

Feature::Feature(std::string id, FeatureRange range, Rule rule, bool single_token)
    : id_(std::move(id)), range_(range), rule_(std::move(rule)), single_token_(single_token) {
  if (id_.empty()) throw Error(ErrorKind::ConfigError, "feature id must be non-empty");
}

Feature Feature::token_presence(std::string id, TokenId token) {
  return Feature(std::move(id), FeatureRange::Binary, Presence{{token}}, true);
}

Feature Feature::wordlist_presence(std::string id, std::vector<TokenId> tokens) {
  if (tokens.empty()) throw Error(ErrorKind::ConfigError, "wordlist feature '" + id + "' has no words");
  return Feature(std::move(id), FeatureRange::Binary, Presence{normalized(std::move(tokens))}, false);
}

Feature Feature::token_ratio(std::string id, std::vector<TokenId> numerator, std::vector<TokenId> denominator,
                             double empty_value) {
  numerator = normalized(std::move(numerator));
  denominator = normalized(std::move(denominator));
  if (numerator.empty() || denominator.empty()) {
    throw Error(ErrorKind::ConfigError, "ratio feature '" + id + "' needs numerator and denominator tokens");
  }
  for (const auto t : numerator) {
    if (!contains(denominator, t)) {
      throw Error(ErrorKind::ConfigError, "ratio feature '" + id + "': numerator must be a subset of denominator");
    }
  }
  if (!(empty_value >= 0.0 && empty_value <= 1.0)) {
    throw Error(ErrorKind::ConfigError, "ratio feature '" + id + "': empty value must lie in [0, 1]");
  }
  return Feature(std::move(id), FeatureRange::Unit, Ratio{std::move(numerator), std::move(denominator), empty_value},
                 false);
}

Feature Feature::prefix_match(std::string id, std::vector<TokenId> prefix) {
  if (prefix.empty()) throw Error(ErrorKind::ConfigError, "prefix feature '" + id + "' has an empty prefix");
  return Feature(std::move(id), FeatureRange::Binary, Prefix{std::move(prefix)}, false);
}

Feature Feature::predicate_table(std::string id, std::map<Sequence, double> table, FeatureRange range,
                                 double fallback) {
  auto valid = [range](double v) { return range == FeatureRange::Binary ? (v == 0.0 || v == 1.0) : (v >= 0.0 && v <= 1.0); };
  if (!valid(fallback)) throw Error(ErrorKind::ConfigError, "table feature '" + id + "': fallback outside range");
  for (const auto& [x, v] : table) {
    if (!valid(v)) throw Error(ErrorKind::ConfigError, "table feature '" + id + "': value outside declared range");
  }
  return Feature(std::move(id), range, Table{std::move(table), fallback}, false);
}

FeatureKind Feature::kind() const {
  switch (rule_.index()) {
    case 0: return single_token_ ? FeatureKind::TokenPresence : FeatureKind::WordlistPresence;
    case 1: return FeatureKind::TokenRatio;
    case 2: return FeatureKind::PrefixMatch;
    default: return FeatureKind::PredicateTable;
  }
}

double Feature::evaluate(const Sequence& x) const {
  struct Visitor {
    const Sequence& x;
    double operator()(const Presence& r) const {
      for (const auto t : x.tokens) {
        if (contains(r.tokens, t)) return 1.0;
      }
      return 0.0;
    }
    double operator()(const Ratio& r) const {
      std::size_t num = 0;
      std::size_t den = 0;
      for (const auto t : x.tokens) {
        if (contains(r.denominator, t)) {
          ++den;
          if (contains(r.numerator, t)) ++num;
        }
      }
      return den == 0 ? r.empty_value : static_cast<double>(num) / static_cast<double>(den);
    }
    double operator()(const Prefix& r) const {
      if (x.length() < r.prefix.size()) return 0.0;
      return std::equal(r.prefix.begin(), r.prefix.end(), x.tokens.begin()) ? 1.0 : 0.0;
    }
    double operator()(const Table& r) const {
      const auto it = r.values.find(x);
      return it == r.values.end() ? r.fallback : it->second;
    }
  };
  return std::visit(Visitor{x}, rule_);
}

ConstraintSpec ConstraintSpec::make(Feature feature, double target, bool pointwise) {
  const auto& id = feature.id();
  if (pointwise) {
    if (!feature.binary()) throw Error(ErrorKind::ConfigError, "pointwise constraint '" + id + "' needs a binary feature");
    if (target != 1.0) throw Error(ErrorKind::ConfigError, "pointwise constraint '" + id + "' must target 1.0");
  } else if (feature.binary()) {
    if (!(target > 0.0 && target < 1.0)) {
      throw Error(ErrorKind::ConfigError,
                  "distributional constraint '" + id + "' on a binary feature needs 0 < target < 1");
    }
  } else if (!(target >= 0.0 && target <= 1.0)) {
    throw Error(ErrorKind::ConfigError, "constraint '" + id + "' target outside [0, 1]");
  }
  return ConstraintSpec{std::move(feature), target, pointwise};
}

ConstraintSet::ConstraintSet(std::vector<ConstraintSpec> constraints) : constraints_(std::move(constraints)) {
  std::set<std::string> ids;
  for (const auto& c : constraints_) {
    if (!ids.insert(c.feature.id()).second) {
      throw Error(ErrorKind::ConfigError, "duplicate feature id '" + c.feature.id() + "'");
    }
  }
}

std::size_t ConstraintSet::pointwise_count() const {
  return static_cast<std::size_t>(
      std::count_if(constraints_.begin(), constraints_.end(), [](const auto& c) { return c.pointwise; }));
}

std::vector<double> ConstraintSet::targets() const {
  std::vector<double> out;
  out.reserve(size());
  for (const auto& c : constraints_) out.push_back(c.target);
  return out;
}

std::vector<std::string> ConstraintSet::ids() const {
  std::vector<std::string> out;
  out.reserve(size());
  for (const auto& c : constraints_) out.push_back(c.feature.id());
  return out;
}

int ConstraintSet::find(const std::string& id) const {
  for (std::size_t i = 0; i < constraints_.size(); ++i) {
    if (constraints_[i].feature.id() == id) return static_cast<int>(i);
  }
  return -1;
}

ConstraintSet ConstraintSet::extended(const std::vector<ConstraintSpec>& more) const {
  auto all = constraints_;
  all.insert(all.end(), more.begin(), more.end());
  return ConstraintSet(std::move(all));
}

double evaluate(const Feature& feature, const Sequence& x) { return feature.evaluate(x); }

std::vector<double> evaluate_vector(const ConstraintSet& constraints, const Sequence& x) {
  std::vector<double> out;
  out.reserve(constraints.size());
  for (const auto& c : constraints) out.push_back(c.feature.evaluate(x));
  return out;
}

double pointwise_predicate(const ConstraintSet& constraints, const Sequence& x) {
  if (constraints.pointwise_count() == 0) {
    throw Error(ErrorKind::NoPointwiseConstraints, "constraint set has no pointwise members");
  }
  double b = 1.0;
  for (const auto& c : constraints) {
    if (c.pointwise) b *= c.feature.evaluate(x);
  }
  return b;
}

}  // namespace gdc
