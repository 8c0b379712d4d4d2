#pragma once

#include "ralb/encoders.hpp"
#include "ralb/tokenizer.hpp"

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace ralb {

enum class WordClass { Noun, AdjAdv, Function, Other };

// "N", "A", "F", "O" in caption files.
char word_class_code(WordClass c);
WordClass word_class_from_code(std::string_view code);

struct TaggedWord {
  std::string surface;
  WordClass word_class = WordClass::Other;
  bool operator==(const TaggedWord&) const = default;
};

struct AnnotatedCaption {
  std::string id;
  std::string raw_text;
  std::vector<TaggedWord> words;
  // False for caption files that carry no word tags; only Full mode applies.
  bool tagged = true;

  // Surfaces concatenated reproduce raw_text once all whitespace is dropped.
  bool consistent() const;
  std::size_t word_count() const;
  bool operator==(const AnnotatedCaption&) const = default;
};

enum class AblationKind { Full, NounsOnly, NoAdjAdv, NoNouns, NoFunctionWords, ShuffleWords };

struct AblationMode {
  AblationKind kind = AblationKind::Full;
  std::uint64_t seed = 0;  // used by ShuffleWords only

  static AblationMode shuffle(std::uint64_t seed) { return {AblationKind::ShuffleWords, seed}; }
};

// CLI spelling: full, nouns-only, no-adj-adv, no-nouns, no-function-words, shuffle.
AblationKind parse_ablation_kind(std::string_view name);
std::string ablation_name(AblationKind kind);

// NounsOnly keeps each distinct noun once, in first-occurrence order, joined
// by bare commas. The removal modes keep order and join with single spaces.
std::string apply_ablation(const AnnotatedCaption& caption, const AblationMode& mode);

// Ablated caption re-wrapped as an AnnotatedCaption (tags carried over).
AnnotatedCaption ablate(const AnnotatedCaption& caption, const AblationMode& mode);

// --- caption files: JSON lines {"id", "caption", "words": [[surface, class], ...]} ---
AnnotatedCaption caption_from_json_line(const std::string& line);
std::string caption_to_json_line(const AnnotatedCaption& caption);
std::vector<AnnotatedCaption> read_captions(const std::filesystem::path& path);
void write_captions(const std::filesystem::path& path, const std::vector<AnnotatedCaption>& corpus);

// --- statistics ---

inline constexpr int kLengthBinWidth = 5;
inline constexpr double kSimilarityBinWidth = 0.02;

struct CaptionStats {
  std::size_t count = 0;
  double mean_length = 0.0;
  double median_length = 0.0;
  std::map<int, std::size_t> length_histogram;  // bin index -> count, bin = [5i, 5i+5)
  // bin index -> count, bin = [-1 + 0.02 i, -1 + 0.02 (i+1)); empty without images
  std::map<int, std::size_t> similarity_histogram;
  std::optional<double> mean_similarity;
};

// `images` may be empty (length statistics only); otherwise it must hold one
// row per caption.
CaptionStats caption_stats(const std::vector<AnnotatedCaption>& corpus, const ModelState* state,
                           const Vocabulary* vocab, const Matrix& images);

// Columns: metric,bin_lo,bin_hi,count (metric is "length" or "similarity"),
// followed by summary rows with empty bin bounds.
std::string caption_stats_csv(const CaptionStats& stats);

}  // namespace ralb
