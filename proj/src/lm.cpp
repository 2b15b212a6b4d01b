#include "gdc/lm.hpp"

#include <algorithm>
#include <cmath>

#include "gdc/error.hpp"

namespace gdc {

namespace {

constexpr std::size_t kMaxTableEntries = 50'000'000;

}  // namespace

LogitGradient::LogitGradient(const TabularARModel& model)
    : values_(model.context_count() * model.width(), 0.0), rows_(model.context_count()), width_(model.width()) {}

void LogitGradient::add(const SparseGradient& g, double weight) {
  for (const auto& [row, values] : g) {
    if (row >= rows_ || values.size() != width_) {
      throw Error(ErrorKind::InvalidArgument, "gradient row does not match the accumulator shape");
    }
    double* dst = values_.data() + row * width_;
    for (std::size_t j = 0; j < width_; ++j) dst[j] += weight * values[j];
  }
}

void LogitGradient::scale(double factor) {
  for (auto& v : values_) v *= factor;
}

void LogitGradient::clear() { std::fill(values_.begin(), values_.end(), 0.0); }

TabularARModel::TabularARModel(SequenceSpace space, int order) : space_(std::move(space)), order_(order) {
  if (order_ < 1) throw Error(ErrorKind::InvalidArgument, "order must be >= 1");
  const std::uint64_t body = space_.vocabulary().body_size();
  base_ = body + 1;
  const std::size_t window = static_cast<std::size_t>(order_ - 1);
  window_modulus_ = 1;
  for (std::size_t i = 0; i < window; ++i) {
    if (window_modulus_ > std::numeric_limits<std::uint64_t>::max() / base_) {
      throw Error(ErrorKind::InvalidArgument, "context window too long to index");
    }
    window_modulus_ *= base_;
  }

  // Reachable windows: j body tokens after (window - j) padding markers,
  // for every prefix length j < lmax.
  const std::size_t longest = std::min(window, space_.lmax() - 1);
  std::vector<std::uint64_t> level{0};
  contexts_ = level;
  for (std::size_t j = 1; j <= longest; ++j) {
    std::vector<std::uint64_t> next;
    next.reserve(level.size() * body);
    for (const auto c : level) {
      for (std::uint64_t d = 1; d <= body; ++d) next.push_back(c * base_ + d);
    }
    if (contexts_.size() + next.size() > kMaxTableEntries / (body + 1)) {
      throw Error(ErrorKind::InvalidArgument, "context table too large");
    }
    contexts_.insert(contexts_.end(), next.begin(), next.end());
    level = std::move(next);
  }
  std::sort(contexts_.begin(), contexts_.end());
  rows_.reserve(contexts_.size());
  for (std::size_t r = 0; r < contexts_.size(); ++r) rows_.emplace(contexts_[r], r);

  const std::size_t entries = contexts_.size() * width();
  logits_.assign(entries, 0.0);
  probs_.assign(entries, 1.0 / static_cast<double>(width()));
  log_probs_.assign(entries, -std::log(static_cast<double>(width())));
}

TabularARModel TabularARModel::uniform(SequenceSpace space, int order) {
  TabularARModel model(std::move(space), order);
  model.trainable_ = true;
  return model;
}

void TabularARModel::set_trainable(bool trainable) {
  if (trainable && std::any_of(logits_.begin(), logits_.end(), [](double v) { return std::isinf(v); })) {
    throw Error(ErrorKind::NotTrainable, "a model with -inf logits cannot be trainable");
  }
  trainable_ = trainable;
}

std::vector<TokenId> TabularARModel::context(std::size_t row) const {
  std::vector<TokenId> out(static_cast<std::size_t>(order_ - 1), kBos);
  auto code = contexts_.at(row);
  const auto& vocab = space_.vocabulary();
  for (auto it = out.rbegin(); it != out.rend(); ++it) {
    const auto digit = code % base_;
    code /= base_;
    *it = digit == 0 ? kBos : vocab.body_token(static_cast<int>(digit - 1));
  }
  return out;
}

std::uint64_t TabularARModel::push(std::uint64_t code, TokenId token) const {
  const auto digit = static_cast<std::uint64_t>(space_.vocabulary().body_rank(token)) + 1;
  return (code * base_ + digit) % window_modulus_;
}

std::size_t TabularARModel::row_for_code(std::uint64_t code) const {
  const auto it = rows_.find(code);
  if (it == rows_.end()) throw Error(ErrorKind::InvalidArgument, "unreachable context");
  return it->second;
}

std::size_t TabularARModel::row_of(std::span<const TokenId> context) const {
  if (context.size() != static_cast<std::size_t>(order_ - 1)) {
    throw Error(ErrorKind::InvalidArgument, "context length must be order-1");
  }
  std::uint64_t code = 0;
  bool seen_body = false;
  for (const auto t : context) {
    if (t == kBos) {
      if (seen_body) throw Error(ErrorKind::InvalidArgument, "padding marker after a body token");
      code = code * base_;
    } else {
      if (t < 0 || static_cast<std::size_t>(t) >= width() || t == space_.vocabulary().eos()) {
        throw Error(ErrorKind::InvalidArgument, "context token is not a body token");
      }
      seen_body = true;
      code = code * base_ + static_cast<std::uint64_t>(space_.vocabulary().body_rank(t)) + 1;
    }
  }
  return row_for_code(code);
}

std::span<const double> TabularARModel::logits(std::size_t row) const {
  return std::span<const double>(logits_).subspan(row * width(), width());
}

std::span<const double> TabularARModel::probabilities(std::size_t row) const {
  return std::span<const double>(probs_).subspan(row * width(), width());
}

std::span<const double> TabularARModel::log_probabilities(std::size_t row) const {
  return std::span<const double>(log_probs_).subspan(row * width(), width());
}

void TabularARModel::set_logits(std::size_t row, std::span<const double> logits) {
  if (row >= contexts_.size() || logits.size() != width()) {
    throw Error(ErrorKind::InvalidArgument, "logit row shape mismatch");
  }
  if (trainable_ && std::any_of(logits.begin(), logits.end(), [](double v) { return std::isinf(v); })) {
    throw Error(ErrorKind::NotTrainable, "-inf logits are reserved for frozen models");
  }
  std::copy(logits.begin(), logits.end(), logits_.begin() + static_cast<std::ptrdiff_t>(row * width()));
  refresh_row(row);
}

void TabularARModel::refresh_row(std::size_t row) {
  const std::size_t w = width();
  const double* l = logits_.data() + row * w;
  double* p = probs_.data() + row * w;
  double* lp = log_probs_.data() + row * w;
  const double top = *std::max_element(l, l + w);
  if (!std::isfinite(top)) {
    throw Error(ErrorKind::InvalidArgument, "logit row has no finite entry");
  }
  double total = 0.0;
  for (std::size_t j = 0; j < w; ++j) {
    p[j] = std::exp(l[j] - top);
    total += p[j];
  }
  const double log_total = std::log(total);
  for (std::size_t j = 0; j < w; ++j) {
    p[j] /= total;
    lp[j] = l[j] - top - log_total;
  }
}

std::vector<std::size_t> TabularARModel::visited_rows(const Sequence& x) const {
  std::vector<std::size_t> rows;
  rows.reserve(x.length() + 1);
  std::uint64_t code = 0;
  for (const auto t : x.tokens) {
    rows.push_back(row_for_code(code));
    code = push(code, t);
  }
  if (x.length() < space_.lmax()) rows.push_back(row_for_code(code));
  return rows;
}

double TabularARModel::log_prob(const Sequence& x) const {
  space_.check(x);
  const std::size_t w = width();
  double total = 0.0;
  std::uint64_t code = 0;
  for (const auto t : x.tokens) {
    total += log_probs_[row_for_code(code) * w + static_cast<std::size_t>(t)];
    code = push(code, t);
  }
  if (x.length() < space_.lmax()) {
    total += log_probs_[row_for_code(code) * w + static_cast<std::size_t>(space_.vocabulary().eos())];
  }
  return total;
}

double TabularARModel::prob(const Sequence& x) const { return std::exp(log_prob(x)); }

Sequence TabularARModel::sample_one(Rng& rng) const {
  const std::size_t w = width();
  const TokenId eos = space_.vocabulary().eos();
  Sequence x;
  std::uint64_t code = 0;
  while (x.length() < space_.lmax()) {
    const double* p = probs_.data() + row_for_code(code) * w;
    const double u = rng.uniform();
    double cumulative = 0.0;
    std::size_t pick = w;
    std::size_t last_positive = 0;
    for (std::size_t j = 0; j < w; ++j) {
      if (p[j] > 0.0) last_positive = j;
      cumulative += p[j];
      if (u < cumulative) {
        pick = j;
        break;
      }
    }
    if (pick == w) pick = last_positive;  // rounding left u above the cumulative total
    const auto token = static_cast<TokenId>(pick);
    if (token == eos) break;
    x.tokens.push_back(token);
    code = push(code, token);
  }
  return x;
}

std::vector<Sequence> TabularARModel::sample(Rng& rng, std::size_t n) const {
  std::vector<Sequence> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) out.push_back(sample_one(rng));
  return out;
}

void TabularARModel::check_trainable(const char* what) const {
  if (!trainable_) throw Error(ErrorKind::NotTrainable, std::string(what) + " requires a trainable model");
}

SparseGradient TabularARModel::grad_log_prob(const Sequence& x) const {
  check_trainable("grad_log_prob");
  space_.check(x);
  const std::size_t w = width();
  SparseGradient g;
  auto visit = [&](std::size_t row, TokenId token) {
    auto [it, inserted] = g.try_emplace(row, w, 0.0);
    auto& dst = it->second;
    const double* p = probs_.data() + row * w;
    for (std::size_t j = 0; j < w; ++j) dst[j] -= p[j];
    dst[static_cast<std::size_t>(token)] += 1.0;
  };
  std::uint64_t code = 0;
  for (const auto t : x.tokens) {
    visit(row_for_code(code), t);
    code = push(code, t);
  }
  if (x.length() < space_.lmax()) visit(row_for_code(code), space_.vocabulary().eos());
  return g;
}

void TabularARModel::apply_update(const LogitGradient& gradient, double learning_rate) {
  check_trainable("apply_update");
  if (gradient.rows() != context_count() || gradient.width() != width()) {
    throw Error(ErrorKind::InvalidArgument, "gradient shape does not match the model");
  }
  const auto values = gradient.values();
  const std::size_t w = width();
  for (std::size_t row = 0; row < context_count(); ++row) {
    bool touched = false;
    for (std::size_t j = 0; j < w; ++j) {
      const double v = values[row * w + j];
      if (v != 0.0) {
        logits_[row * w + j] += learning_rate * v;
        touched = true;
      }
    }
    if (touched) refresh_row(row);
  }
}

void TabularARModel::apply_update(const SparseGradient& gradient, double learning_rate) {
  check_trainable("apply_update");
  const std::size_t w = width();
  for (const auto& [row, values] : gradient) {
    if (row >= context_count() || values.size() != w) {
      throw Error(ErrorKind::InvalidArgument, "gradient row does not match the model");
    }
    for (std::size_t j = 0; j < w; ++j) logits_[row * w + j] += learning_rate * values[j];
    refresh_row(row);
  }
}

TabularARModel TabularARModel::with_order(int new_order) const {
  if (new_order < order_) throw Error(ErrorKind::InvalidArgument, "with_order cannot shorten the context");
  TabularARModel out(space_, new_order);
  const std::size_t w = width();
  for (std::size_t row = 0; row < out.context_count(); ++row) {
    const std::size_t source = row_for_code(out.contexts_[row] % window_modulus_);
    std::copy_n(logits_.begin() + static_cast<std::ptrdiff_t>(source * w), w,
                out.logits_.begin() + static_cast<std::ptrdiff_t>(row * w));
    out.refresh_row(row);
  }
  out.trainable_ = trainable_;
  return out;
}

std::vector<double> TabularARModel::log_prob_table() const {
  const auto size = space_.universe_size();
  if (size > kUniverseGuard) {
    throw Error(ErrorKind::UniverseTooLarge, "universe of " + std::to_string(size) + " sequences exceeds the guard");
  }
  std::vector<double> table(size, 0.0);
  const std::size_t body = space_.vocabulary().body_size();
  const std::size_t w = width();
  const auto eos = static_cast<std::size_t>(space_.vocabulary().eos());
  std::vector<std::size_t> offsets(space_.lmax() + 1);
  for (std::size_t len = 0; len <= space_.lmax(); ++len) offsets[len] = space_.length_offset(len);

  auto walk = [&](auto&& self, std::size_t length, std::size_t rank, std::uint64_t code, double logp) -> void {
    const std::size_t index = offsets[length] + rank;
    if (length == space_.lmax()) {
      table[index] = logp;
      return;
    }
    const double* lp = log_probs_.data() + row_for_code(code) * w;
    table[index] = logp + lp[eos];
    for (std::size_t d = 0; d < body; ++d) {
      const auto token = space_.vocabulary().body_token(static_cast<int>(d));
      self(self, length + 1, rank * body + d, push(code, token), logp + lp[static_cast<std::size_t>(token)]);
    }
  };
  walk(walk, 0, 0, 0, 0.0);
  return table;
}

TabularARModel mle_fit(std::span<const Sequence> corpus, const SequenceSpace& space, int order, double smoothing) {
  if (corpus.empty()) throw Error(ErrorKind::EmptyCorpus, "mle_fit needs at least one sequence");
  if (!(smoothing >= 0.0)) throw Error(ErrorKind::InvalidArgument, "smoothing must be >= 0");
  TabularARModel model(space, order);
  const std::size_t w = model.width();
  std::vector<double> counts(model.logits_.size(), 0.0);
  for (const auto& x : corpus) {
    space.check(x);
    // forced EOS at lmax is not a modelled decision and is not counted
    const auto rows = model.visited_rows(x);
    for (std::size_t i = 0; i < rows.size(); ++i) {
      const auto token = i < x.length() ? x.tokens[i] : space.vocabulary().eos();
      counts[rows[i] * w + static_cast<std::size_t>(token)] += 1.0;
    }
  }
  bool frozen = false;
  for (std::size_t row = 0; row < model.context_count(); ++row) {
    double total = 0.0;
    for (std::size_t j = 0; j < w; ++j) total += counts[row * w + j] + smoothing;
    for (std::size_t j = 0; j < w; ++j) {
      const double c = counts[row * w + j] + smoothing;
      if (total == 0.0) {
        model.logits_[row * w + j] = 0.0;
      } else if (c == 0.0) {
        model.logits_[row * w + j] = kNegInf;
        frozen = true;
      } else {
        model.logits_[row * w + j] = std::log(c);
      }
    }
    model.refresh_row(row);
  }
  model.trainable_ = !frozen;
  return model;
}

}  // namespace gdc
