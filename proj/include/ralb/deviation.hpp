#pragma once

#include "ralb/attacks.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace ralb::attack {

// One sample set for the adversarial deviation table.
struct DeviationSample {
  Matrix images;
  std::vector<std::int32_t> labels;
  Matrix template_embs;  // K x d_E, unit rows
  Matrix caption_embs;   // one unit row per image
};

struct DeviationRow {
  std::string objective;  // "clean" for the reference row
  double sim_image = 0.0;    // mean cos(f(x'), f(x))
  double sim_label = 0.0;    // mean cos(f(x'), f_phi(template of y))
  double sim_caption = 0.0;  // mean cos(f(x'), f_phi(caption))
  std::size_t n_samples = 0;
  std::uint64_t seed = 0;
};

// Generates AEs for every objective (PGD settings from `base`, objective
// replaced) in batches of `batch_size`; caption negatives come from the batch.
// Unsup-containing objectives are measured against the analyzed weights' own
// clean embeddings (any stored theta_orig is ignored).
std::vector<DeviationRow> deviation_analysis(const ModelState& state, const DeviationSample& sample,
                                             const std::vector<AttackObjective>& objectives,
                                             const AttackSpec& base, std::size_t batch_size,
                                             std::uint64_t seed);

// objective,sim_image,sim_label,sim_caption,n_samples,seed
std::string deviation_csv(const std::vector<DeviationRow>& rows);

}  // namespace ralb::attack
