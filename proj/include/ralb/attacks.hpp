#pragma once

#include "ralb/autodiff.hpp"
#include "ralb/encoders.hpp"
#include "ralb/tensor.hpp"

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

namespace ralb::attack {

enum class Norm { Linf, L2 };

enum class ObjectiveKind {
  SupLabel,           // CE on zero-shot logits (TeCoA)
  Unsup,              // squared distance to the frozen encoder's clean embedding (FARE)
  SupCaps,            // image-to-text InfoNCE against the batch captions
  UnsupPlusSupLabel,  // Unsup + lambda * SupLabel
  QTAFT,              // Unsup + lambda * SupCaps
  DLR,
  CW,
};

struct AttackObjective {
  ObjectiveKind kind = ObjectiveKind::SupLabel;
  float lambda = 10.0f;  // weight of the supervised term in combined objectives

  bool needs_labels() const;
  bool needs_captions() const;
  bool needs_snapshot() const;
};

// CLI / report spelling: tecoa, fare, sup-caps, unsup+sup-label, qt-aft, dlr, cw
// ("ce" and "sup-label" alias tecoa, "unsup" aliases fare).
ObjectiveKind parse_objective(std::string_view name);
std::string objective_name(ObjectiveKind kind);

struct AttackSpec {
  Norm norm = Norm::Linf;
  float epsilon = 4.0f / 255.0f;
  float step_size = 1.0f / 255.0f;
  int steps = 10;
  bool random_start = false;
  AttackObjective objective;

  void validate() const;
};

// Side data an objective may need. Embedding matrices hold unit rows.
struct SideData {
  std::vector<std::int32_t> labels;  // one per image
  Matrix template_embs;              // K x d_E
  Matrix caption_embs;               // one row per image, aligned with the batch
};

// Each image's terms; every objective here is a sum of per-image terms.
struct ObjectiveEval {
  std::vector<float> terms;
  Matrix grad;  // d(sum of terms)/d(images); empty when not requested
};

// Generic objective over an image batch, used by the PGD core.
using BatchObjective = std::function<ObjectiveEval(const Matrix& images, bool want_grad)>;

struct AdversarialBatch {
  Matrix originals;
  Matrix perturbed;             // best-objective iterate per sample
  std::vector<float> best_objective;
  // Batch sum of the best-so-far objective after each step (index 0 = start point).
  std::vector<float> objective_trace;
};

// Projects `candidate` onto B(x, eps) intersected with [0, 1], row by row.
void project(Matrix& candidate, const Matrix& originals, Norm norm, float epsilon);

// Sample i draws its random start from a stream derived from (seed, index_offset + i).
AdversarialBatch pgd(const Matrix& images, const AttackSpec& spec, const BatchObjective& objective,
                     std::uint64_t seed, std::size_t index_offset = 0);

// Per-image terms of `objective` on the tape. `clean_orig_raw` is f_theta_orig(x)
// for the clean images (only read by objectives containing Unsup).
ad::Var objective_terms(ad::Tape& tape, const ModelState& state, ad::Var images,
                        const VisionVars& theta, const Matrix& clean_orig_raw,
                        const SideData& side, const AttackObjective& objective);

// Zero-shot logits (cosine / tau_eval) for a batch of unit image embeddings.
ad::Var zero_shot_logits(ad::Var image_embs, ad::Var template_embs);

// QT-AFT inner value: sum_i ||f_theta(x'_i) - f_orig(x_i)||^2 - lambda * log softmax_j(cos/tau)_i.
float qt_aft_inner_loss(const ModelState& state, const Matrix& x_adv, const Matrix& x_clean,
                        const std::vector<TokenSequence>& captions, float lambda);

// PGD on the model objective selected by spec.objective.
AdversarialBatch pgd_attack(const ModelState& state, const Matrix& images, const SideData& side,
                            const AttackSpec& spec, std::uint64_t seed,
                            std::size_t index_offset = 0);

std::vector<std::int32_t> predict(const ModelState& state, const Matrix& images,
                                  const Matrix& template_embs);

struct EnsembleResult {
  AdversarialBatch batch;
  std::vector<bool> flipped;       // any spec changed the prediction away from the label
  std::vector<int> winning_spec;   // spec index whose image was returned
  std::vector<std::string> substitutions;  // e.g. DLR replaced by CW on K = 2
  std::vector<AttackSpec> effective_specs;
};

// Runs every spec on every sample with the same per-sample streams pgd_attack
// would use; returns the first flipping image, else the one with the largest
// logit margin max_{k != y} z_k - z_y.
EnsembleResult ensemble_attack(const ModelState& state, const Matrix& images, const SideData& side,
                               const std::vector<AttackSpec>& specs, std::uint64_t seed,
                               std::size_t index_offset = 0);

}  // namespace ralb::attack
