#pragma once

#include "ralb/attacks.hpp"
#include "ralb/encoders.hpp"
#include "ralb/evaluation.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace ralb::train {

enum class Method { QTAFT, QTAFTLabel, FARE, TeCoA, CleanPretrain };

// qt-aft, qt-aft-label, fare, tecoa, pretrain
Method parse_method(std::string_view name);
std::string method_name(Method m);

struct TrainConfig {
  Method method = Method::QTAFT;
  int epochs = 10;
  int batch_size = 64;
  float lr0 = 1e-4f;
  float weight_decay = 1e-4f;
  float lambda = 10.0f;
  attack::AttackSpec attack;  // training-time PGD; its objective is set per method
  std::uint64_t seed = 0;
  bool cosine_schedule = true;

  // Desk-scale recipe: 10 epochs, batch 64, lr0 1e-4.
  static TrainConfig desk(Method m);
  // Two epochs, lr0 1e-5, weight decay 1e-4, batch 128, PGD-10 at 4/255 with
  // step 1/255, lambda 10.
  static TrainConfig full_scale(Method m);

  void validate() const;
};

struct TrainLogRecord {
  long step = 0;
  float lr = 0.0f;
  float inner_objective = 0.0f;  // attack objective at the returned AEs (0 for pretraining)
  float outer_loss = 0.0f;
  double wall_time = 0.0;  // seconds since train() started
};

struct TrainingData {
  Matrix images;
  std::vector<std::int32_t> labels;
  std::vector<TokenSequence> captions;         // one per image (pretrain, QT-AFT)
  std::vector<TokenSequence> class_templates;  // one per class (TeCoA, QT-AFT w/ label)
};

struct TrainResult {
  ModelState state;
  std::vector<TrainLogRecord> log;
};

float cosine_lr(long step, long total_steps, float lr0);

// Optimizer steps per epoch: full batches only.
long steps_per_epoch(std::size_t n, int batch_size);

// Adversarial methods need a snapshotted state and update theta only;
// CleanPretrain updates theta, phi and the temperature.
TrainResult train(ModelState state, const TrainingData& data, const TrainConfig& config);

// Outer loss of an adversarial method for fixed AEs, without an attack:
// the per-method objective evaluated at `x_adv`. Used for sanity checks.
float outer_loss(const ModelState& state, const TrainingData& data, const TrainConfig& config,
                 const Matrix& x_adv, const std::vector<std::size_t>& batch);

// Runs `steps` optimizer updates of theta on one fixed batch of AEs at a
// constant learning rate; returns the outer loss before each update.
std::vector<float> fit_fixed_batch(ModelState& state, const TrainingData& data,
                                   const TrainConfig& config, const Matrix& x_adv,
                                   const std::vector<std::size_t>& batch, int steps, float lr);

struct SweepRow {
  float lambda = 0.0f;
  double clean_accuracy = 0.0;
  double robust_accuracy = 0.0;
};

// One QT-AFT run per lambda from the same starting state and seed, each
// evaluated on `eval_set` with `plan`.
std::vector<SweepRow> lambda_sweep(const ModelState& state, const TrainingData& data,
                                   const std::vector<float>& lambdas, const TrainConfig& config,
                                   const Vocabulary& vocab, const eval::EvalDataset& eval_set,
                                   const eval::AttackPlan& plan, const eval::RobustOptions& options);

std::string train_log_jsonl(const std::vector<TrainLogRecord>& log);

}  // namespace ralb::train
