#include "gdc/seqspace.hpp"

#include <limits>
#include <sstream>
#include <unordered_map>

#include "gdc/error.hpp"

namespace gdc {

Vocabulary::Vocabulary(std::vector<std::string> tokens, std::size_t eos_index)
    : tokens_(std::move(tokens)), eos_index_(eos_index) {
  if (tokens_.empty() || eos_index_ >= tokens_.size()) {
    throw Error(ErrorKind::InvalidArgument, "vocabulary needs an addressable EOS token");
  }
  std::unordered_map<std::string, std::size_t> seen;
  for (std::size_t i = 0; i < tokens_.size(); ++i) {
    if (tokens_[i].empty()) throw Error(ErrorKind::InvalidArgument, "empty token at index " + std::to_string(i));
    if (!seen.emplace(tokens_[i], i).second) {
      throw Error(ErrorKind::InvalidArgument, "duplicate token '" + tokens_[i] + "'");
    }
  }
}

Vocabulary Vocabulary::with_eos(std::vector<std::string> body_tokens) {
  body_tokens.emplace_back(kDefaultEos);
  const auto eos = body_tokens.size() - 1;
  return Vocabulary(std::move(body_tokens), eos);
}

TokenId Vocabulary::find(std::string_view token) const {
  for (std::size_t i = 0; i < tokens_.size(); ++i) {
    if (tokens_[i] == token) return static_cast<TokenId>(i);
  }
  return -1;
}

TokenId Vocabulary::index(std::string_view token) const {
  const auto id = find(token);
  if (id < 0) throw Error(ErrorKind::InvalidArgument, "unknown token '" + std::string(token) + "'");
  return id;
}

SequenceSpace::SequenceSpace(Vocabulary vocabulary, std::size_t lmax)
    : vocabulary_(std::move(vocabulary)), lmax_(lmax) {
  if (lmax_ == 0) throw Error(ErrorKind::InvalidArgument, "lmax must be positive");
  if (vocabulary_.body_size() == 0) throw Error(ErrorKind::InvalidArgument, "vocabulary has no body tokens");
}

std::uint64_t SequenceSpace::universe_size() const {
  constexpr auto kMax = std::numeric_limits<std::uint64_t>::max();
  const std::uint64_t base = vocabulary_.body_size();
  std::uint64_t total = 0;
  std::uint64_t power = 1;
  for (std::size_t len = 0; len <= lmax_; ++len) {
    if (total > kMax - power) return kMax;
    total += power;
    if (len < lmax_) {
      if (power > kMax / base) return kMax;
      power *= base;
    }
  }
  return total;
}

std::size_t SequenceSpace::length_offset(std::size_t length) const {
  const std::size_t base = vocabulary_.body_size();
  std::size_t offset = 0;
  std::size_t power = 1;
  for (std::size_t len = 0; len < length; ++len) {
    offset += power;
    power *= base;
  }
  return offset;
}

std::size_t SequenceSpace::index_of(const Sequence& x) const {
  const std::size_t base = vocabulary_.body_size();
  std::size_t rank = 0;
  for (const auto t : x.tokens) rank = rank * base + static_cast<std::size_t>(vocabulary_.body_rank(t));
  return length_offset(x.length()) + rank;
}

bool SequenceSpace::contains(const Sequence& x) const {
  if (x.length() > lmax_) return false;
  for (const auto t : x.tokens) {
    if (t < 0 || static_cast<std::size_t>(t) >= vocabulary_.size() || t == vocabulary_.eos()) return false;
  }
  return true;
}

void SequenceSpace::check(const Sequence& x) const {
  if (x.length() > lmax_) {
    throw Error(ErrorKind::InvalidArgument,
                "sequence length " + std::to_string(x.length()) + " exceeds lmax " + std::to_string(lmax_));
  }
  for (const auto t : x.tokens) {
    if (t < 0 || static_cast<std::size_t>(t) >= vocabulary_.size() || t == vocabulary_.eos()) {
      throw Error(ErrorKind::InvalidArgument, "token id " + std::to_string(t) + " is not a body token");
    }
  }
}

std::string SequenceSpace::render(const Sequence& x) const {
  std::string out;
  for (std::size_t i = 0; i < x.length(); ++i) {
    if (i) out += ' ';
    out += vocabulary_.token(x.tokens[i]);
  }
  return out;
}

std::vector<Sequence> enumerate(const SequenceSpace& space) {
  const auto size = space.universe_size();
  if (size > kUniverseGuard) {
    throw Error(ErrorKind::UniverseTooLarge, "universe of " + std::to_string(size) + " sequences exceeds the guard");
  }
  const auto& vocab = space.vocabulary();
  const int base = static_cast<int>(vocab.body_size());

  std::vector<Sequence> out;
  out.reserve(size);
  out.push_back({});
  std::vector<int> digits;
  for (std::size_t len = 1; len <= space.lmax(); ++len) {
    digits.assign(len, 0);
    while (true) {
      Sequence x;
      x.tokens.reserve(len);
      for (const auto d : digits) x.tokens.push_back(vocab.body_token(d));
      out.push_back(std::move(x));
      // odometer increment, last position fastest
      std::size_t pos = len;
      while (pos > 0 && ++digits[pos - 1] == base) digits[--pos] = 0;
      if (pos == 0) break;
    }
  }
  return out;
}

namespace {

template <class Resolve>
TokenizedCorpus tokenize_lines(std::string_view text, std::size_t lmax, Resolve&& resolve) {
  TokenizedCorpus corpus;
  std::istringstream lines{std::string(text)};
  std::string line;
  while (std::getline(lines, line)) {
    std::istringstream words(line);
    std::string word;
    Sequence x;
    bool truncated = false;
    while (words >> word) {
      if (x.length() == lmax) {
        truncated = true;
        break;
      }
      x.tokens.push_back(resolve(word));
    }
    if (x.empty() && !truncated) {
      // blank lines carry no sequence
      continue;
    }
    if (truncated) ++corpus.truncated_lines;
    corpus.sequences.push_back(std::move(x));
  }
  if (corpus.sequences.empty()) throw Error(ErrorKind::EmptyCorpus, "corpus has no non-blank lines");
  return corpus;
}

}  // namespace

TokenizedCorpus tokenize_corpus(std::string_view text, std::size_t lmax) {
  if (lmax == 0) throw Error(ErrorKind::InvalidArgument, "lmax must be positive");
  std::vector<std::string> body;
  std::unordered_map<std::string, TokenId> ids;
  auto corpus = tokenize_lines(text, lmax, [&](const std::string& word) {
    if (word == kDefaultEos) throw Error(ErrorKind::InvalidArgument, "corpus contains the reserved EOS token");
    auto [it, inserted] = ids.emplace(word, static_cast<TokenId>(body.size()));
    if (inserted) body.push_back(word);
    return it->second;
  });
  corpus.vocabulary = Vocabulary::with_eos(std::move(body));
  return corpus;
}

TokenizedCorpus tokenize_corpus(std::string_view text, const Vocabulary& vocabulary, std::size_t lmax) {
  if (lmax == 0) throw Error(ErrorKind::InvalidArgument, "lmax must be positive");
  auto corpus = tokenize_lines(text, lmax, [&](const std::string& word) {
    const auto id = vocabulary.index(word);
    if (id == vocabulary.eos()) throw Error(ErrorKind::InvalidArgument, "corpus contains the reserved EOS token");
    return id;
  });
  corpus.vocabulary = vocabulary;
  return corpus;
}

}  // namespace gdc
