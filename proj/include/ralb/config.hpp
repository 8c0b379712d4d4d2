#pragma once

#include "ralb/attacks.hpp"
#include "ralb/encoders.hpp"

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace ralb::cfg {

// Budgets are kept as the text the user wrote ("4/255" or "0.0157") and
// parsed with parse_fraction() when used.
struct AttackBudget {
  std::string norm = "linf";
  std::string epsilon = "4/255";
  std::string step_size = "1/255";
  int steps = 10;
  bool random_start = true;

  attack::AttackSpec spec() const;
};

struct DataConfig {
  int resolution = 32;
  int pretrain_size = 8000;
  double rich_fraction = 0.25;  // share of pretraining pairs with rich captions
  int finetune_size = 3000;
  int eval_size = 500;
  std::vector<std::string> train_classes{"circle", "square", "triangle"};
  std::vector<std::string> zeroshot_classes{"star", "cross"};
  std::vector<std::string> attribute_classes{"plain", "striped", "dotted"};
};

struct PretrainConfig {
  int epochs = 60;
  int batch_size = 64;
  double lr = 1e-3;
  double weight_decay = 1e-4;
};

struct FinetuneConfig {
  int epochs = 30;
  int batch_size = 64;
  double lr = 2e-3;
  double weight_decay = 1e-4;
  double lambda = 10.0;
  AttackBudget attack;
  std::vector<std::string> methods{"qt-aft", "qt-aft-label", "fare", "tecoa"};
};

struct EvalConfig {
  std::vector<std::string> attacks{"pgd10-ce"};
  std::optional<std::string> epsilon;  // overrides the preset budgets
  std::optional<int> subsample;
  int chunk = 128;
};

struct DeviationConfig {
  int samples = 500;
  int batch_size = 64;
  std::vector<std::string> objectives{"tecoa", "fare", "sup-caps", "unsup+sup-label", "qt-aft"};
  AttackBudget attack;
};

struct AblationConfig {
  std::vector<std::string> modes{"full",     "nouns-only",        "no-adj-adv",
                                 "no-nouns", "no-function-words", "shuffle"};
};

struct SweepConfig {
  std::vector<double> lambdas{0.0, 1.0, 10.0, 100.0};
};

struct StudyConfig {
  std::uint64_t seed = 0;
  int workers = 1;
  EncoderConfig model = desk_model();
  DataConfig data;
  PretrainConfig pretrain;
  FinetuneConfig finetune;
  EvalConfig eval;
  DeviationConfig deviation;
  AblationConfig ablation;
  SweepConfig sweep;

  static EncoderConfig desk_model();
  // Throws ConfigError on out-of-range values or unknown names.
  void validate() const;
};

// Every field, defaults included.
nlohmann::ordered_json to_json(const StudyConfig& config);
// Missing keys take defaults; unknown keys are a ConfigError.
StudyConfig from_json(const nlohmann::json& j);
StudyConfig load_config(const std::filesystem::path& path);

// Seed of the global run: RALB_SEED when set, else `fallback`.
std::uint64_t global_seed(std::uint64_t fallback);

// FNV-1a 64 over the bytes, as 16 hex digits.
std::string hash_bytes(std::string_view bytes);
std::string hash_file(const std::filesystem::path& path);
// Hash of every regular file below `dir`, combined in sorted path order.
std::string hash_tree(const std::filesystem::path& dir);

inline constexpr const char* kToolVersion = "ralb 1.0.0";

struct RunManifest {
  std::string command;
  nlohmann::ordered_json config;  // resolved, defaults materialized
  std::map<std::string, std::uint64_t> seeds;
  std::map<std::string, std::string> inputs;  // path -> hash
  std::string tool_version = kToolVersion;

  nlohmann::ordered_json to_json() const;
  static RunManifest from_json(const nlohmann::ordered_json& j);
  void write(const std::filesystem::path& dir) const;  // <dir>/manifest.json
  static RunManifest read(const std::filesystem::path& path);
};

void write_text(const std::filesystem::path& path, const std::string& text);
std::string read_text(const std::filesystem::path& path);

}  // namespace ralb::cfg
