#include "ralb/captions.hpp"

#include "ralb/errors.hpp"
#include "ralb/rng.hpp"

#include <json.hpp>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <set>
#include <sstream>

namespace ralb {

char word_class_code(WordClass c) {
  switch (c) {
    case WordClass::Noun: return 'N';
    case WordClass::AdjAdv: return 'A';
    case WordClass::Function: return 'F';
    case WordClass::Other: return 'O';
  }
  return 'O';
}

WordClass word_class_from_code(std::string_view code) {
  if (code == "N") return WordClass::Noun;
  if (code == "A") return WordClass::AdjAdv;
  if (code == "F") return WordClass::Function;
  if (code == "O") return WordClass::Other;
  throw DataError("caption: unknown word class '" + std::string(code) + "'");
}

namespace {

std::string strip_whitespace(std::string_view s) {
  std::string out;
  for (char c : s)
    if (!std::isspace(static_cast<unsigned char>(c))) out.push_back(c);
  return out;
}

bool is_punctuation(const std::string& s) {
  return !s.empty() && std::all_of(s.begin(), s.end(), [](char c) {
    return std::ispunct(static_cast<unsigned char>(c)) != 0;
  });
}

std::string join(const std::vector<std::string>& parts, const std::string& sep) {
  std::string out;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    if (i) out += sep;
    out += parts[i];
  }
  return out;
}

}  // namespace

bool AnnotatedCaption::consistent() const {
  std::string joined;
  for (const auto& w : words) joined += w.surface;
  return strip_whitespace(joined) == strip_whitespace(raw_text);
}

std::size_t AnnotatedCaption::word_count() const {
  if (!tagged) return split_words(raw_text).size();
  return static_cast<std::size_t>(std::count_if(
      words.begin(), words.end(), [](const TaggedWord& w) { return !is_punctuation(w.surface); }));
}

AblationKind parse_ablation_kind(std::string_view name) {
  if (name == "full") return AblationKind::Full;
  if (name == "nouns-only") return AblationKind::NounsOnly;
  if (name == "no-adj-adv") return AblationKind::NoAdjAdv;
  if (name == "no-nouns") return AblationKind::NoNouns;
  if (name == "no-function-words") return AblationKind::NoFunctionWords;
  if (name == "shuffle") return AblationKind::ShuffleWords;
  throw ArgumentError("unknown ablation mode '" + std::string(name) + "'");
}

std::string ablation_name(AblationKind kind) {
  switch (kind) {
    case AblationKind::Full: return "full";
    case AblationKind::NounsOnly: return "nouns-only";
    case AblationKind::NoAdjAdv: return "no-adj-adv";
    case AblationKind::NoNouns: return "no-nouns";
    case AblationKind::NoFunctionWords: return "no-function-words";
    case AblationKind::ShuffleWords: return "shuffle";
  }
  return "full";
}

namespace {

std::vector<std::size_t> kept_indices(const AnnotatedCaption& c, const AblationMode& mode) {
  std::vector<std::size_t> keep;
  auto removed_class = [&]() -> WordClass {
    switch (mode.kind) {
      case AblationKind::NoAdjAdv: return WordClass::AdjAdv;
      case AblationKind::NoNouns: return WordClass::Noun;
      default: return WordClass::Function;
    }
  }();
  switch (mode.kind) {
    case AblationKind::Full:
      for (std::size_t i = 0; i < c.words.size(); ++i) keep.push_back(i);
      break;
    case AblationKind::NounsOnly: {
      std::set<std::string> seen;
      for (std::size_t i = 0; i < c.words.size(); ++i)
        if (c.words[i].word_class == WordClass::Noun && seen.insert(c.words[i].surface).second)
          keep.push_back(i);
      break;
    }
    case AblationKind::NoAdjAdv:
    case AblationKind::NoNouns:
    case AblationKind::NoFunctionWords:
      for (std::size_t i = 0; i < c.words.size(); ++i)
        if (c.words[i].word_class != removed_class) keep.push_back(i);
      break;
    case AblationKind::ShuffleWords: {
      for (std::size_t i = 0; i < c.words.size(); ++i) keep.push_back(i);
      Rng rng(derive_seed(mode.seed, 0x5eed));
      rng.shuffle(keep);
      break;
    }
  }
  return keep;
}

}  // namespace

std::string apply_ablation(const AnnotatedCaption& caption, const AblationMode& mode) {
  if (mode.kind == AblationKind::Full) return caption.raw_text;
  if (!caption.tagged)
    throw ArgumentError("apply_ablation: caption '" + caption.id + "' carries no word tags");
  std::vector<std::string> parts;
  for (auto i : kept_indices(caption, mode)) parts.push_back(caption.words[i].surface);
  return join(parts, mode.kind == AblationKind::NounsOnly ? "," : " ");
}

AnnotatedCaption ablate(const AnnotatedCaption& caption, const AblationMode& mode) {
  if (mode.kind == AblationKind::Full) return caption;
  AnnotatedCaption out;
  out.id = caption.id;
  out.raw_text = apply_ablation(caption, mode);
  for (auto i : kept_indices(caption, mode)) out.words.push_back(caption.words[i]);
  if (mode.kind == AblationKind::NounsOnly) {
    // Commas become explicit function-word tokens between nouns.
    std::vector<TaggedWord> with_commas;
    for (std::size_t i = 0; i < out.words.size(); ++i) {
      if (i) with_commas.push_back({",", WordClass::Function});
      with_commas.push_back(out.words[i]);
    }
    out.words = std::move(with_commas);
  }
  return out;
}

AnnotatedCaption caption_from_json_line(const std::string& line) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(line);
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("caption file: invalid JSON: ") + e.what());
  }
  if (!j.is_object() || !j.contains("id") || !j.contains("caption"))
    throw DataError("caption file: each line needs \"id\" and \"caption\"");
  AnnotatedCaption c;
  try {
    c.id = j.at("id").get<std::string>();
    c.raw_text = j.at("caption").get<std::string>();
    if (j.contains("words")) {
      for (const auto& w : j.at("words")) {
        if (!w.is_array() || w.size() != 2) throw DataError("caption file: words must be pairs");
        c.words.push_back({w[0].get<std::string>(), word_class_from_code(w[1].get<std::string>())});
      }
    } else {
      c.tagged = false;
    }
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("caption file: ") + e.what());
  }
  if (c.tagged && !c.consistent())
    throw DataError("caption '" + c.id + "': word surfaces do not reproduce the caption text");
  return c;
}

std::string caption_to_json_line(const AnnotatedCaption& c) {
  nlohmann::ordered_json j;
  j["id"] = c.id;
  j["caption"] = c.raw_text;
  if (c.tagged) {
    auto words = nlohmann::ordered_json::array();
    for (const auto& w : c.words)
      words.push_back({w.surface, std::string(1, word_class_code(w.word_class))});
    j["words"] = std::move(words);
  }
  return j.dump();
}

std::vector<AnnotatedCaption> read_captions(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot read captions: " + path.string());
  std::vector<AnnotatedCaption> out;
  std::set<std::string> ids;
  for (std::string line; std::getline(in, line);) {
    if (strip_whitespace(line).empty()) continue;
    out.push_back(caption_from_json_line(line));
    if (!ids.insert(out.back().id).second)
      throw DataError("caption file: duplicate id '" + out.back().id + "'");
  }
  return out;
}

void write_captions(const std::filesystem::path& path, const std::vector<AnnotatedCaption>& corpus) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write captions: " + path.string());
  for (const auto& c : corpus) out << caption_to_json_line(c) << '\n';
}

CaptionStats caption_stats(const std::vector<AnnotatedCaption>& corpus, const ModelState* state,
                           const Vocabulary* vocab, const Matrix& images) {
  CaptionStats s;
  s.count = corpus.size();
  if (corpus.empty()) throw ArgumentError("caption_stats: empty corpus");
  std::vector<double> lengths;
  for (const auto& c : corpus) {
    const auto n = c.word_count();
    lengths.push_back(static_cast<double>(n));
    ++s.length_histogram[static_cast<int>(n) / kLengthBinWidth];
  }
  double total = 0.0;
  for (double l : lengths) total += l;
  s.mean_length = total / static_cast<double>(lengths.size());
  std::sort(lengths.begin(), lengths.end());
  const auto mid = lengths.size() / 2;
  s.median_length = lengths.size() % 2 ? lengths[mid] : 0.5 * (lengths[mid - 1] + lengths[mid]);

  if (images.rows() == 0) return s;
  if (images.rows() != static_cast<Eigen::Index>(corpus.size()))
    throw ArgumentError("caption_stats: corpus and images are not aligned");
  if (state == nullptr || vocab == nullptr)
    throw ArgumentError("caption_stats: similarity needs a model and a vocabulary");
  std::vector<TokenSequence> tokens;
  for (const auto& c : corpus) tokens.push_back(tokenize(c.raw_text, *vocab));
  const Matrix img = encode_images(*state, images).emb;
  const Matrix txt = encode_texts(*state, tokens).emb;
  const int bins = static_cast<int>(std::lround(2.0 / kSimilarityBinWidth));
  double sim_total = 0.0;
  for (Eigen::Index i = 0; i < img.rows(); ++i) {
    const double sim = math::cosine_similarity(row_span(img, i), row_span(txt, i));
    sim_total += sim;
    const int bin = std::clamp(static_cast<int>(std::floor((sim + 1.0) / kSimilarityBinWidth)), 0,
                               bins - 1);
    ++s.similarity_histogram[bin];
  }
  s.mean_similarity = sim_total / static_cast<double>(img.rows());
  return s;
}

std::string caption_stats_csv(const CaptionStats& s) {
  std::ostringstream out;
  out << std::setprecision(6);
  out << "metric,bin_lo,bin_hi,count\n";
  for (const auto& [bin, n] : s.length_histogram)
    out << "length," << bin * kLengthBinWidth << ',' << (bin + 1) * kLengthBinWidth << ',' << n
        << '\n';
  for (const auto& [bin, n] : s.similarity_histogram)
    out << "similarity," << std::fixed << std::setprecision(2) << -1.0 + bin * kSimilarityBinWidth
        << ',' << -1.0 + (bin + 1) * kSimilarityBinWidth << std::defaultfloat
        << std::setprecision(6) << ',' << n << '\n';
  out << "count,,," << s.count << '\n';
  out << "mean_length,,," << s.mean_length << '\n';
  out << "median_length,,," << s.median_length << '\n';
  if (s.mean_similarity) out << "mean_similarity,,," << *s.mean_similarity << '\n';
  return out.str();
}

}  // namespace ralb
