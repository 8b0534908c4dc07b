#pragma once

#include <map>
#include <stdexcept>
#include <string>
#include <vector>

namespace vlfau {

inline constexpr int kPad = 0;
inline constexpr int kBos = 1;
inline constexpr int kEos = 2;
inline constexpr int kUnk = 3;
inline constexpr int kReservedTokens = 4;

/// Token ids of one caption; terminated by the first EOS when present.
using TokenSequence = std::vector<int>;

class VocabularyError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Lowercases and splits on whitespace; punctuation marks become their own tokens.
std::vector<std::string> tokenize(const std::string& text);

class Vocabulary {
 public:
  Vocabulary();

  /// Builds ids 0-3 as PAD/BOS/EOS/UNK and the corpus tokens in sorted order after them.
  static Vocabulary build(const std::vector<std::string>& corpus);
  /// Restores a vocabulary from its id-ordered token list (reserved tokens included).
  static Vocabulary from_tokens(const std::vector<std::string>& tokens);

  int size() const { return static_cast<int>(tokens_.size()); }
  int id(const std::string& token) const;
  const std::string& token(int id) const;
  const std::vector<std::string>& tokens() const { return tokens_; }

  /// Tokenizes and maps to ids; unknown tokens become UNK. No BOS/EOS added.
  TokenSequence encode(const std::string& text) const;
  /// Token ids to space-joined text, stopping at EOS and skipping other reserved ids.
  std::string decode(const TokenSequence& ids) const;

  bool operator==(const Vocabulary& o) const { return tokens_ == o.tokens_; }

  void save(const std::string& path) const;
  static Vocabulary load(const std::string& path);

 private:
  std::vector<std::string> tokens_;
  std::map<std::string, int> ids_;
};

}  // namespace vlfau
