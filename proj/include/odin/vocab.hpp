#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace odin {

/// Word-level vocabulary. Ids are dense from 0 with the four specials first.
class Vocab {
 public:
  static constexpr int kPad = 0;
  static constexpr int kCls = 1;
  static constexpr int kMask = 2;
  static constexpr int kUnk = 3;
  static constexpr int kNumSpecials = 4;

  Vocab();

  /// Appends a token if it is not present; returns its id.
  int add(std::string_view token);
  /// Id of a token, kUnk when absent.
  int id(std::string_view token) const;
  bool contains(std::string_view token) const;
  const std::string& token(int id) const;
  int size() const { return static_cast<int>(tokens_.size()); }

  /// Line-delimited "token<TAB>id".
  void save(const std::filesystem::path& path) const;
  static Vocab load(const std::filesystem::path& path);

  friend bool operator==(const Vocab& a, const Vocab& b) { return a.tokens_ == b.tokens_; }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> ids_;
};

/// Lowercased split on whitespace; punctuation characters become their own tokens.
std::vector<std::string> split_words(std::string_view text);

/// Tokens with frequency >= min_freq, ordered by (frequency desc, token asc).
Vocab build_vocab(std::span<const std::string> corpus, int min_freq);

/// [CLS] followed by word ids, truncated to max_len (>= 2).
std::vector<int> tokenize(std::string_view text, const Vocab& vocab, int max_len);

}  // namespace odin
