#include "vlfau/vocab.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <set>

#include "vlfau/tensor.hpp"

namespace vlfau {

namespace {
const std::vector<std::string> kReservedNames = {"<pad>", "<bos>", "<eos>", "<unk>"};
}

std::vector<std::string> tokenize(const std::string& text) {
  std::vector<std::string> out;
  std::string cur;
  auto flush = [&] {
    if (!cur.empty()) out.push_back(std::move(cur));
    cur.clear();
  };
  for (unsigned char ch : text) {
    if (std::isspace(ch)) {
      flush();
    } else if (std::ispunct(ch) && ch != '-' && ch != '\'') {
      flush();
      out.emplace_back(1, static_cast<char>(ch));
    } else {
      cur.push_back(static_cast<char>(std::tolower(ch)));
    }
  }
  flush();
  return out;
}

Vocabulary::Vocabulary() : tokens_(kReservedNames) {
  for (int i = 0; i < kReservedTokens; ++i) ids_[tokens_[static_cast<std::size_t>(i)]] = i;
}

Vocabulary Vocabulary::build(const std::vector<std::string>& corpus) {
  std::set<std::string> seen;
  for (const auto& line : corpus)
    for (auto& t : tokenize(line)) seen.insert(std::move(t));
  if (seen.empty()) throw VocabularyError("cannot build a vocabulary from an empty corpus");
  Vocabulary v;
  for (const auto& t : seen) {
    if (v.ids_.count(t)) continue;
    v.ids_[t] = v.size();
    v.tokens_.push_back(t);
  }
  return v;
}

Vocabulary Vocabulary::from_tokens(const std::vector<std::string>& tokens) {
  if (tokens.size() < static_cast<std::size_t>(kReservedTokens) + 1 ||
      !std::equal(kReservedNames.begin(), kReservedNames.end(), tokens.begin())) {
    throw VocabularyError("token list must start with the reserved tokens and hold at least one word");
  }
  Vocabulary v;
  for (std::size_t i = kReservedTokens; i < tokens.size(); ++i) {
    if (!v.ids_.emplace(tokens[i], v.size()).second) throw VocabularyError("duplicate token: " + tokens[i]);
    v.tokens_.push_back(tokens[i]);
  }
  return v;
}

int Vocabulary::id(const std::string& token) const {
  auto it = ids_.find(token);
  return it == ids_.end() ? kUnk : it->second;
}

const std::string& Vocabulary::token(int id) const {
  if (id < 0 || id >= size()) throw VocabularyError("token id out of range: " + std::to_string(id));
  return tokens_[static_cast<std::size_t>(id)];
}

TokenSequence Vocabulary::encode(const std::string& text) const {
  TokenSequence ids;
  for (const auto& t : tokenize(text)) ids.push_back(id(t));
  return ids;
}

std::string Vocabulary::decode(const TokenSequence& ids) const {
  std::string out;
  for (int i : ids) {
    if (i == kEos) break;
    if (i < kReservedTokens) continue;
    const std::string& t = token(i);
    const bool punct = t.size() == 1 && std::ispunct(static_cast<unsigned char>(t[0]));
    if (!out.empty() && !punct) out.push_back(' ');
    out += t;
  }
  return out;
}

void Vocabulary::save(const std::string& path) const {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw IoError("cannot open for writing: " + path);
  for (const auto& t : tokens_) f << t << '\n';
  if (!f) throw IoError("write failed: " + path);
}

Vocabulary Vocabulary::load(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot open for reading: " + path);
  std::vector<std::string> tokens;
  for (std::string line; std::getline(f, line);)
    if (!line.empty()) tokens.push_back(line);
  return from_tokens(tokens);
}

}  // namespace vlfau
