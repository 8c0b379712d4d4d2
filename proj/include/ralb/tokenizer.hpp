#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace ralb {

// Token cap of the text encoder, BOS and EOS included.
inline constexpr std::size_t kMaxTokens = 77;

struct TokenSequence {
  std::vector<std::int32_t> ids;

  std::size_t size() const { return ids.size(); }
  bool operator==(const TokenSequence&) const = default;
};

// Lowercases and splits on whitespace; every ASCII punctuation character
// becomes its own word.
std::vector<std::string> split_words(std::string_view text);

class Vocabulary {
 public:
  static constexpr std::int32_t kUnk = 0;
  static constexpr std::int32_t kBos = 1;
  static constexpr std::int32_t kEos = 2;

  Vocabulary();

  // Words are added in first-seen order after the three special tokens.
  static Vocabulary build(const std::vector<std::string>& corpus);

  std::int32_t id(std::string_view word) const;
  const std::string& word(std::int32_t id) const;
  std::size_t size() const { return words_.size(); }
  const std::vector<std::string>& words() const { return words_; }

  // One UTF-8 token per line, special tokens first.
  void save(const std::filesystem::path& path) const;
  static Vocabulary load(const std::filesystem::path& path);

  bool operator==(const Vocabulary& o) const { return words_ == o.words_; }

 private:
  void add(const std::string& word);
  std::vector<std::string> words_;
  std::unordered_map<std::string, std::int32_t> index_;
};

// BOS + word ids + EOS, tail-truncated to kMaxTokens.
TokenSequence tokenize(std::string_view text, const Vocabulary& vocab);

}  // namespace ralb
