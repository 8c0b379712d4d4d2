#pragma once

#include "ralb/attacks.hpp"
#include "ralb/encoders.hpp"
#include "ralb/tokenizer.hpp"

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace ralb::eval {

struct EvalDataset {
  std::string name;
  std::vector<std::string> class_names;
  Matrix images;
  std::vector<std::int32_t> labels;
  bool zero_shot = false;  // held-out task, averaged separately in reports
};

// Unit text embeddings of "a photo of {class}" for every class.
Matrix template_embeddings(const ModelState& state, const Vocabulary& vocab,
                           const std::vector<std::string>& class_names);

// A named attack: one spec, or several combined with per-sample union.
struct AttackPlan {
  std::string name;
  std::vector<attack::AttackSpec> specs;
};

// Presets: pgd10-ce, pgd10-dlr, ensemble (CE + DLR), l2-pgd, cw. `epsilon`
// overrides the preset budget when given.
AttackPlan attack_preset(std::string_view name, std::optional<float> epsilon = std::nullopt);
std::vector<std::string> attack_preset_names();

inline constexpr std::size_t kDefaultChunk = 128;

double eval_clean(const ModelState& state, const Matrix& images,
                  const std::vector<std::int32_t>& labels, const Matrix& template_embs);

struct RobustResult {
  double accuracy = 0.0;
  double clean_accuracy = 0.0;
  std::vector<bool> clean_correct;
  std::vector<bool> robust_correct;  // clean-correct and every attack failed
  std::vector<std::size_t> indices;  // evaluated rows of the input
  std::vector<std::string> substitutions;
};

struct RobustOptions {
  std::uint64_t seed = 0;
  std::optional<std::size_t> subsample;  // seeded draw without replacement
  std::size_t chunk = kDefaultChunk;
  std::size_t workers = 1;  // threads over chunks; results do not depend on it
};

// Seeded subset of [0, n) of size k, sorted.
std::vector<std::size_t> draw_subsample(std::size_t n, std::size_t k, std::uint64_t seed);

RobustResult eval_robust(const ModelState& state, const Matrix& images,
                         const std::vector<std::int32_t>& labels, const Matrix& template_embs,
                         const AttackPlan& plan, const RobustOptions& options = {});

struct ReportRow {
  std::string method;
  std::string dataset;
  bool zero_shot = false;
  std::string attack;
  double clean_accuracy = 0.0;
  double robust_accuracy = 0.0;
  std::size_t n = 0;
  std::uint64_t seed = 0;
};

struct MethodAverages {
  double clean_held_in = 0.0, robust_held_in = 0.0;
  double clean_zero_shot = 0.0, robust_zero_shot = 0.0;
};

struct EvalReport {
  std::vector<ReportRow> rows;  // sorted by method, dataset, attack
  // method -> attack -> averages over held-in and zero-shot datasets
  std::map<std::string, std::map<std::string, MethodAverages>> averages;

  const ReportRow& at(const std::string& method, const std::string& dataset,
                      const std::string& attack) const;

  std::string to_csv() const;
  std::string to_json() const;
};

EvalReport compare_methods(const std::map<std::string, ModelState>& checkpoints,
                           const Vocabulary& vocab, const std::vector<EvalDataset>& datasets,
                           const std::vector<AttackPlan>& plans, const RobustOptions& options);

}  // namespace ralb::eval
