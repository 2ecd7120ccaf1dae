#pragma once

#include <algorithm>
#include <array>
#include <cctype>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "aigen/core/error.hpp"
#include "aigen/core/random.hpp"

namespace aigen::text {

using TokenId = std::int32_t;

inline constexpr TokenId kPad = 0;
inline constexpr TokenId kBos = 1;
inline constexpr TokenId kEos = 2;
inline constexpr TokenId kUnk = 3;
inline constexpr TokenId kSep = 4;
inline constexpr TokenId kCls = 5;
inline constexpr TokenId kSpecialCount = 6;
inline constexpr std::array<std::string_view, kSpecialCount> kSpecialNames{
    "<pad>", "<bos>", "<eos>", "<unk>", "<sep>", "<cls>"};

inline bool is_special(TokenId id) { return id >= 0 && id < kSpecialCount; }

/// Lowercases, splits on whitespace, and emits every ASCII punctuation
/// character as its own token.
inline std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> tokens;
  std::string current;
  auto flush = [&] {
    if (!current.empty()) tokens.push_back(std::move(current));
    current.clear();
  };
  for (char raw : text) {
    const auto c = static_cast<unsigned char>(raw);
    if (std::isspace(c)) {
      flush();
    } else if (std::ispunct(c)) {
      flush();
      tokens.emplace_back(1, static_cast<char>(c));
    } else {
      current.push_back(static_cast<char>(std::tolower(c)));
    }
  }
  flush();
  return tokens;
}

inline std::string join(const std::vector<std::string>& tokens) {
  std::string out;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (i) out.push_back(' ');
    out += tokens[i];
  }
  return out;
}

inline std::uint64_t corpus_hash(const std::vector<std::string>& corpus) {
  std::uint64_t h = detail::fnv1a("aigen-corpus");
  for (const auto& s : corpus) h = detail::fnv1a(std::string_view(s.data(), s.size() + 1), h);
  return h;
}

inline std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

/// Word vocabulary. Ids 0–5 are the specials; ordinary tokens follow in
/// descending corpus frequency with lexicographic tie-break.
class Vocab {
 public:
  Vocab() { rebuild_index({}); }

  /// Tokens with count >= min_frequency enter the vocabulary.
  static Vocab build(const std::vector<std::string>& corpus, std::size_t min_frequency) {
    detail::require(!corpus.empty(), "build_vocab: empty corpus");
    detail::require(min_frequency >= 1, "build_vocab: min_frequency must be >= 1");
    std::map<std::string, std::size_t> counts;
    for (const auto& s : corpus)
      for (auto& tok : tokenize(s)) ++counts[tok];
    std::vector<std::pair<std::string, std::size_t>> kept;
    for (auto& [tok, n] : counts)
      if (n >= min_frequency) kept.emplace_back(tok, n);
    std::stable_sort(kept.begin(), kept.end(),
                     [](const auto& a, const auto& b) { return a.second > b.second; });
    std::vector<std::string> words;
    words.reserve(kept.size());
    for (auto& [tok, n] : kept) words.push_back(tok);
    Vocab v;
    v.min_frequency_ = min_frequency;
    v.corpus_hash_ = text::corpus_hash(corpus);
    v.rebuild_index(std::move(words));
    return v;
  }

  /// Rebuilds from an explicit word list (ids 6, 7, ... in order).
  static Vocab from_words(std::vector<std::string> words, std::size_t min_frequency,
                          std::uint64_t corpus_hash) {
    Vocab v;
    v.min_frequency_ = min_frequency;
    v.corpus_hash_ = corpus_hash;
    v.rebuild_index(std::move(words));
    return v;
  }

  std::size_t size() const { return tokens_.size(); }
  std::size_t min_frequency() const { return min_frequency_; }
  std::uint64_t corpus_hash() const { return corpus_hash_; }

  /// Ordinary (non-special) tokens in id order.
  std::vector<std::string> words() const { return {tokens_.begin() + kSpecialCount, tokens_.end()}; }

  bool contains(const std::string& token) const { return index_.count(token) != 0; }

  TokenId id(const std::string& token) const {
    auto it = index_.find(token);
    return it == index_.end() ? kUnk : it->second;
  }

  const std::string& token(TokenId id) const {
    if (id < 0 || static_cast<std::size_t>(id) >= tokens_.size())
      throw InvalidInput("token id " + std::to_string(id) + " outside vocabulary of size " +
                         std::to_string(tokens_.size()));
    return tokens_[static_cast<std::size_t>(id)];
  }

  /// Identity of the id assignment; checkpoints refuse to load under a different one.
  std::uint64_t hash() const {
    std::uint64_t h = detail::fnv1a("aigen-vocab:" + std::to_string(min_frequency_));
    for (const auto& t : tokens_) h = detail::fnv1a(std::string_view(t.data(), t.size() + 1), h);
    return h;
  }

  /// Header line, then one ordinary token per line; line k holds id k + 6.
  void save(const std::string& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw InvalidInput("cannot write vocabulary file " + path);
    out << "#aigen-vocab min_frequency=" << min_frequency_ << " corpus_hash=" << hex64(corpus_hash_)
        << '\n';
    for (std::size_t i = kSpecialCount; i < tokens_.size(); ++i) out << tokens_[i] << '\n';
    if (!out) throw InvalidInput("failed writing vocabulary file " + path);
  }

  static Vocab load(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw InvalidInput("cannot open vocabulary file " + path);
    std::string header;
    std::getline(in, header);
    unsigned long long freq = 0, hash = 0;
    if (std::sscanf(header.c_str(), "#aigen-vocab min_frequency=%llu corpus_hash=%llx", &freq, &hash) != 2)
      throw InvalidInput(path + ":1: malformed vocabulary header");
    std::vector<std::string> words;
    std::string line;
    while (std::getline(in, line)) {
      if (line.empty()) throw InvalidInput(path + ":" + std::to_string(words.size() + 2) + ": empty token");
      words.push_back(line);
    }
    return from_words(std::move(words), freq, hash);
  }

  friend bool operator==(const Vocab& a, const Vocab& b) {
    return a.tokens_ == b.tokens_ && a.min_frequency_ == b.min_frequency_ &&
           a.corpus_hash_ == b.corpus_hash_;
  }

 private:
  void rebuild_index(std::vector<std::string> words) {
    tokens_.assign(kSpecialNames.begin(), kSpecialNames.end());
    for (auto& w : words) tokens_.push_back(std::move(w));
    index_.clear();
    for (std::size_t i = kSpecialCount; i < tokens_.size(); ++i) {
      auto [it, fresh] = index_.emplace(tokens_[i], static_cast<TokenId>(i));
      detail::require(fresh, "duplicate vocabulary token '" + tokens_[i] + "'");
    }
  }

  std::vector<std::string> tokens_;
  std::unordered_map<std::string, TokenId> index_;
  std::size_t min_frequency_ = 1;
  std::uint64_t corpus_hash_ = 0;
};

inline Vocab build_vocab(const std::vector<std::string>& corpus, std::size_t min_frequency) {
  return Vocab::build(corpus, min_frequency);
}

/// Out-of-vocabulary words map to UNK.
inline std::vector<TokenId> encode(std::string_view instruction, const Vocab& vocab) {
  std::vector<TokenId> ids;
  for (const auto& tok : tokenize(instruction)) ids.push_back(vocab.id(tok));
  return ids;
}

/// Tokens of the non-special ids, in order.
template <class Ids>
std::vector<std::string> decode_tokens(const Ids& ids, const Vocab& vocab) {
  std::vector<std::string> out;
  for (auto raw : ids) {
    const auto id = static_cast<TokenId>(raw);
    const auto& tok = vocab.token(id);
    if (!is_special(id)) out.push_back(tok);
  }
  return out;
}

template <class Ids>
std::string decode(const Ids& ids, const Vocab& vocab) {
  return join(decode_tokens(ids, vocab));
}

struct TokenizedInstruction {
  std::string surface;
  std::vector<std::string> tokens;
  std::vector<TokenId> ids;
};

inline TokenizedInstruction tokenize_instruction(std::string surface, const Vocab& vocab) {
  TokenizedInstruction out;
  out.tokens = tokenize(surface);
  for (const auto& t : out.tokens) out.ids.push_back(vocab.id(t));
  out.surface = std::move(surface);
  return out;
}

}  // namespace aigen::text
