#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace gdc {

using TokenId = int;

inline constexpr std::string_view kDefaultEos = "</s>";

class Vocabulary {
 public:
  Vocabulary() = default;
  /// Throws InvalidArgument on duplicate/empty tokens or an out-of-range EOS.
  Vocabulary(std::vector<std::string> tokens, std::size_t eos_index);

  /// Body tokens in the given order, followed by the default EOS marker.
  static Vocabulary with_eos(std::vector<std::string> body_tokens);

  std::size_t size() const { return tokens_.size(); }
  std::size_t body_size() const { return tokens_.size() - 1; }
  TokenId eos() const { return static_cast<TokenId>(eos_index_); }
  const std::string& token(TokenId id) const { return tokens_.at(static_cast<std::size_t>(id)); }
  const std::vector<std::string>& tokens() const { return tokens_; }

  /// -1 when absent.
  TokenId find(std::string_view token) const;
  /// Throws InvalidArgument when absent.
  TokenId index(std::string_view token) const;

  /// Body tokens are numbered 0..body_size()-1 in vocabulary order, skipping EOS.
  int body_rank(TokenId id) const { return id < eos() ? id : id - 1; }
  TokenId body_token(int rank) const { return rank < eos() ? rank : rank + 1; }

  bool operator==(const Vocabulary&) const = default;

 private:
  std::vector<std::string> tokens_;
  std::size_t eos_index_ = 0;
};

/// Body tokens only; the terminating EOS is implicit.
struct Sequence {
  std::vector<TokenId> tokens;

  std::size_t length() const { return tokens.size(); }
  bool empty() const { return tokens.empty(); }
  auto operator<=>(const Sequence&) const = default;
};

inline constexpr std::uint64_t kUniverseGuard = 10'000'000;

class SequenceSpace {
 public:
  SequenceSpace() = default;
  SequenceSpace(Vocabulary vocabulary, std::size_t lmax);

  const Vocabulary& vocabulary() const { return vocabulary_; }
  std::size_t lmax() const { return lmax_; }

  /// Sum over lengths 0..lmax of body_size^length; saturates at UINT64_MAX.
  std::uint64_t universe_size() const;
  bool enumerable() const { return universe_size() <= kUniverseGuard; }

  /// Position of x in enumeration order.
  std::size_t index_of(const Sequence& x) const;
  /// Index of the first sequence with the given length.
  std::size_t length_offset(std::size_t length) const;

  bool contains(const Sequence& x) const;
  /// Throws InvalidArgument naming the offending token when x is not in the space.
  void check(const Sequence& x) const;

  std::string render(const Sequence& x) const;

  bool operator==(const SequenceSpace&) const = default;

 private:
  Vocabulary vocabulary_;
  std::size_t lmax_ = 0;
};

/// Every sequence of the space in shortlex order (by length, then by body
/// rank position by position). Throws UniverseTooLarge above kUniverseGuard.
std::vector<Sequence> enumerate(const SequenceSpace& space);

struct TokenizedCorpus {
  Vocabulary vocabulary;
  std::vector<Sequence> sequences;
  std::size_t truncated_lines = 0;
};

/// Whitespace tokenization, one sequence per non-blank line. Vocabulary is
/// built in order of first appearance, with EOS appended. Lines longer than
/// lmax are truncated and tallied.
TokenizedCorpus tokenize_corpus(std::string_view text, std::size_t lmax);

/// Tokenize against a fixed vocabulary; unknown tokens raise InvalidArgument.
TokenizedCorpus tokenize_corpus(std::string_view text, const Vocabulary& vocabulary, std::size_t lmax);

}  // namespace gdc
