#include "odin/vocab.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <map>

#include "odin/common.hpp"

namespace odin {

Vocab::Vocab() {
  for (const char* special : {"[PAD]", "[CLS]", "[MASK]", "[UNK]"}) add(special);
}

int Vocab::add(std::string_view token) {
  std::string key(token);
  if (auto it = ids_.find(key); it != ids_.end()) return it->second;
  const int id = size();
  tokens_.push_back(key);
  ids_.emplace(std::move(key), id);
  return id;
}

int Vocab::id(std::string_view token) const {
  auto it = ids_.find(std::string(token));
  return it == ids_.end() ? kUnk : it->second;
}

bool Vocab::contains(std::string_view token) const { return ids_.count(std::string(token)) > 0; }

const std::string& Vocab::token(int id) const {
  if (id < 0 || id >= size()) throw Error("token id " + std::to_string(id) + " out of range");
  return tokens_[static_cast<std::size_t>(id)];
}

void Vocab::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write vocab " + path.string());
  for (int i = 0; i < size(); ++i) out << tokens_[static_cast<std::size_t>(i)] << '\t' << i << '\n';
}

Vocab Vocab::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open vocab " + path.string());
  Vocab v;
  std::string line;
  int expected = 0;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto tab = line.rfind('\t');
    if (tab == std::string::npos) throw DataError("vocab line without tab: '" + line + "'");
    const int id = std::stoi(line.substr(tab + 1));
    if (id != expected) throw DataError("vocab ids must be dense; expected " + std::to_string(expected));
    const auto token = line.substr(0, tab);
    if (id < kNumSpecials) {
      if (v.token(id) != token) throw DataError("vocab special mismatch at id " + std::to_string(id));
    } else if (v.add(token) != id) {
      throw DataError("duplicate vocab token '" + token + "'");
    }
    ++expected;
  }
  return v;
}

std::vector<std::string> split_words(std::string_view text) {
  std::vector<std::string> words;
  std::string cur;
  auto flush = [&] {
    if (!cur.empty()) words.push_back(std::move(cur));
    cur.clear();
  };
  for (unsigned char c : text) {
    if (std::isspace(c)) {
      flush();
    } else if (std::ispunct(c)) {
      flush();
      words.emplace_back(1, static_cast<char>(c));
    } else {
      cur.push_back(static_cast<char>(std::tolower(c)));
    }
  }
  flush();
  return words;
}

Vocab build_vocab(std::span<const std::string> corpus, int min_freq) {
  if (corpus.empty()) throw DataError("cannot build a vocabulary from an empty corpus");
  std::map<std::string, int> freq;
  for (const auto& text : corpus) {
    for (auto& w : split_words(text)) ++freq[w];
  }
  std::vector<std::pair<std::string, int>> ranked(freq.begin(), freq.end());
  std::stable_sort(ranked.begin(), ranked.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });
  Vocab vocab;
  for (const auto& [word, count] : ranked) {
    if (count >= min_freq) vocab.add(word);
  }
  return vocab;
}

std::vector<int> tokenize(std::string_view text, const Vocab& vocab, int max_len) {
  if (max_len < 2) throw ConfigError("max_len must be >= 2");
  std::vector<int> ids{Vocab::kCls};
  for (const auto& w : split_words(text)) {
    if (static_cast<int>(ids.size()) >= max_len) break;
    ids.push_back(vocab.id(w));
  }
  return ids;
}

}  // namespace odin
