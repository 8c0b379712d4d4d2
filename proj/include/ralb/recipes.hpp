#pragma once

#include "ralb/config.hpp"
#include "ralb/datagen.hpp"
#include "ralb/deviation.hpp"
#include "ralb/evaluation.hpp"
#include "ralb/training.hpp"

#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace ralb::study {

// Names of the standard desk datasets (also their directory names).
inline constexpr const char* kPretrainSet = "pretrain";
inline constexpr const char* kFinetuneSet = "finetune";
inline constexpr const char* kHeldInSet = "eval-heldin";
inline constexpr const char* kZeroShotObjectSet = "eval-zs-object";
inline constexpr const char* kZeroShotAttributeSet = "eval-zs-attribute";

struct NamedDataset {
  data::Dataset dataset;
  data::DatasetSplit split;
  data::Partition partition = data::Partition::Train;
  std::uint64_t seed = 0;
};

// Pretraining covers every configured shape (held-in and held-out), with a
// rich_fraction share of rich captions and short captions otherwise.
// Fine-tuning and the held-in evaluation use the held-in shapes only.
struct DeskData {
  NamedDataset pretrain, finetune, heldin, zs_object, zs_attribute;
  Vocabulary vocab;
};

DeskData make_desk_data(const cfg::StudyConfig& config, std::uint64_t seed);

// Every word of every rich and short caption plus the class templates.
Vocabulary desk_vocabulary(const cfg::StudyConfig& config);

std::vector<TokenSequence> tokenize_all(const std::vector<AnnotatedCaption>& captions,
                                        const Vocabulary& vocab);

train::TrainingData training_data(const data::Dataset& d, const Vocabulary& vocab);

train::TrainConfig pretrain_config(const cfg::StudyConfig& config, std::uint64_t seed);
train::TrainConfig finetune_config(const cfg::StudyConfig& config, train::Method method,
                                   std::uint64_t seed);

// init_model + clean contrastive pretraining.
train::TrainResult pretrain(const cfg::StudyConfig& config, const data::Dataset& d,
                            const Vocabulary& vocab, std::uint64_t seed);

// Snapshots `pretrained` and fine-tunes it with `method`.
train::TrainResult finetune(const cfg::StudyConfig& config, const ModelState& pretrained,
                            const data::Dataset& d, const Vocabulary& vocab, train::Method method,
                            std::uint64_t seed);

eval::EvalDataset eval_dataset(const std::string& name, const data::Dataset& d, bool zero_shot);
std::vector<eval::EvalDataset> eval_datasets(const DeskData& data);

std::vector<eval::AttackPlan> attack_plans(const cfg::StudyConfig& config);
eval::RobustOptions robust_options(const cfg::StudyConfig& config, std::uint64_t seed);

// Templates and captions are embedded with `state`'s text encoder.
attack::DeviationSample deviation_sample(const ModelState& state, const data::Dataset& d,
                                         const Vocabulary& vocab);
std::vector<attack::AttackObjective> deviation_objectives(const cfg::StudyConfig& config);

struct StudyOptions {
  bool dry_run = false;
  std::function<void(const std::string&)> log;  // progress lines; may be empty
};

// Stage names in execution order.
std::vector<std::string> study_plan(const cfg::StudyConfig& config);

// gen-data -> pretrain -> fine-tune per method -> evaluation matrix ->
// deviation analysis -> caption-ablation grid -> caption statistics -> lambda
// sweep. Writes into `out`:
//   manifest.json, vocab.txt, checkpoints/*.ckpt, logs/*.jsonl (wall times),
//   table1_deviation.csv, table2_eval.csv, table2_eval.json,
//   table3_caption_ablation.csv, fig3_caption_stats.csv, lambda_sweep.csv
// Everything outside logs/ is a pure function of the manifest.
// Returns the stages run (all of them for a dry run, which writes nothing).
std::vector<std::string> recipe_full_study(const cfg::StudyConfig& config,
                                           const std::filesystem::path& out,
                                           const StudyOptions& options = {});

// Rethrows the active exception with "stage '<name>' failed: " prepended,
// keeping its error category.
[[noreturn]] void rethrow_in_stage(const std::string& stage);

}  // namespace ralb::study
