#include "ralb/tokenizer.hpp"

#include "ralb/errors.hpp"

#include <cctype>
#include <fstream>

namespace ralb {

std::vector<std::string> split_words(std::string_view text) {
  std::vector<std::string> words;
  std::string current;
  auto flush = [&] {
    if (!current.empty()) words.push_back(std::move(current));
    current.clear();
  };
  for (char ch : text) {
    const auto u = static_cast<unsigned char>(ch);
    if (u < 0x80 && std::isspace(u)) {
      flush();
    } else if (u < 0x80 && std::ispunct(u)) {
      flush();
      words.emplace_back(1, ch);
    } else {
      current.push_back(u < 0x80 ? static_cast<char>(std::tolower(u)) : ch);
    }
  }
  flush();
  return words;
}

Vocabulary::Vocabulary() {
  add("<unk>");
  add("<bos>");
  add("<eos>");
}

void Vocabulary::add(const std::string& word) {
  if (index_.contains(word)) return;
  index_.emplace(word, static_cast<std::int32_t>(words_.size()));
  words_.push_back(word);
}

Vocabulary Vocabulary::build(const std::vector<std::string>& corpus) {
  Vocabulary v;
  for (const auto& text : corpus)
    for (const auto& w : split_words(text)) v.add(w);
  return v;
}

std::int32_t Vocabulary::id(std::string_view word) const {
  auto it = index_.find(std::string(word));
  return it == index_.end() ? kUnk : it->second;
}

const std::string& Vocabulary::word(std::int32_t id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= words_.size())
    throw ArgumentError("vocabulary: id out of range");
  return words_[static_cast<std::size_t>(id)];
}

void Vocabulary::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write vocabulary: " + path.string());
  for (const auto& w : words_) out << w << '\n';
}

Vocabulary Vocabulary::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot read vocabulary: " + path.string());
  std::vector<std::string> lines;
  for (std::string line; std::getline(in, line);) lines.push_back(line);
  if (lines.size() < 3 || lines[0] != "<unk>" || lines[1] != "<bos>" || lines[2] != "<eos>")
    throw DataError("vocabulary file lacks the special-token header: " + path.string());
  Vocabulary v;
  for (std::size_t i = 3; i < lines.size(); ++i) {
    if (v.index_.contains(lines[i])) throw DataError("vocabulary: duplicate token '" + lines[i] + "'");
    v.add(lines[i]);
  }
  return v;
}

TokenSequence tokenize(std::string_view text, const Vocabulary& vocab) {
  TokenSequence seq;
  seq.ids.push_back(Vocabulary::kBos);
  for (const auto& w : split_words(text)) {
    if (seq.ids.size() + 1 >= kMaxTokens) break;
    seq.ids.push_back(vocab.id(w));
  }
  seq.ids.push_back(Vocabulary::kEos);
  return seq;
}

}  // namespace ralb
