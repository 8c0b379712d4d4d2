#pragma once

// Checkpoint layout (all integers u32 little-endian, all reals f32 LE):
//
//   "RALB" | version (=1)
//   config: image_height image_width channels patch patch_dim vision_hidden
//           max_tokens vocab_size token_dim text_hidden embed_dim
//   log_tau (f32) | has_theta_orig | finetune_started
//   theta tensors in vision_tensor_names() order
//   phi tensors in text_tensor_names() order
//   theta_orig tensors (only when has_theta_orig == 1)
//
// Each tensor is its row-major values; shapes follow from the config.
// The vocabulary lives next to the checkpoint as a plain word list.

#include "ralb/encoders.hpp"

#include <cstdint>
#include <filesystem>

namespace ralb {

inline constexpr std::uint32_t kCheckpointVersion = 1;

void save_checkpoint(const std::filesystem::path& path, const ModelState& state);
ModelState load_checkpoint(const std::filesystem::path& path);

}  // namespace ralb
