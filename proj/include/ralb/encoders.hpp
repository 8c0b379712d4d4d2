#pragma once

#include "ralb/autodiff.hpp"
#include "ralb/core_math.hpp"
#include "ralb/tensor.hpp"
#include "ralb/tokenizer.hpp"

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

namespace ralb {

struct EncoderConfig {
  int image_height = 32;
  int image_width = 32;
  int channels = 3;
  int patch = 4;
  int patch_dim = 32;
  int vision_hidden = 256;
  int max_tokens = static_cast<int>(kMaxTokens);
  int vocab_size = 64;
  int token_dim = 64;
  int text_hidden = 128;
  int embed_dim = 64;

  int image_size() const { return image_height * image_width * channels; }
  int num_patches() const { return (image_height / patch) * (image_width / patch); }
  int patch_size() const { return patch * patch * channels; }

  // Throws ConfigError when a field is out of range.
  void validate() const;
  bool operator==(const EncoderConfig&) const = default;
};

struct Linear {
  Matrix weight;  // in x out
  Matrix bias;    // 1 x out
};

// f_theta: 4x4 patches -> shared GELU patch embedding -> flatten -> 2 GELU
// layers -> linear projection to the joint space.
struct VisionParams {
  Linear patch_embed, hidden1, hidden2, proj;

  std::vector<Matrix*> tensors();
  std::vector<const Matrix*> tensors() const;
  bool operator==(const VisionParams& o) const;
};

// f_phi: token + position embeddings -> per-token GELU -> mean pool ->
// 2 GELU layers -> linear projection to the joint space.
struct TextParams {
  Matrix token_embed;  // vocab x token_dim
  Matrix pos_embed;    // max_tokens x token_dim
  Linear hidden1, hidden2, proj;

  std::vector<Matrix*> tensors();
  std::vector<const Matrix*> tensors() const;
  bool operator==(const TextParams& o) const;
};

// Parameter names in checkpoint order.
std::vector<std::string> vision_tensor_names();
std::vector<std::string> text_tensor_names();

struct ModelState {
  EncoderConfig config;
  VisionParams theta;
  TextParams phi;
  // Frozen copy of theta taken by snapshot(); shared and never mutated.
  std::shared_ptr<const VisionParams> theta_orig;
  math::Temperature temperature;
  // Set by the first adversarial fine-tuning step.
  bool finetune_started = false;

  bool has_snapshot() const { return theta_orig != nullptr; }
};

// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) initialization, seeded.
ModelState init_model(const EncoderConfig& config, std::uint64_t seed);

// Copies theta into theta_orig. Throws StateError once fine-tuning began.
ModelState snapshot(ModelState state);

enum class VisionWeights { Theta, ThetaOrig };

struct Encoded {
  Matrix raw;  // pre-normalization encoder output, one row per input
  Matrix emb;  // unit-norm rows
};

// --- tape-level building blocks ---

struct VisionVars {
  std::vector<ad::Var> t;  // in VisionParams::tensors() order
};
struct TextVars {
  std::vector<ad::Var> t;  // in TextParams::tensors() order
};

VisionVars bind_vision(ad::Tape& tape, const VisionParams& params, bool trainable);
TextVars bind_text(ad::Tape& tape, const TextParams& params, bool trainable);

// Returns raw (pre-normalization) embeddings; `images` is B x image_size().
ad::Var vision_forward(const EncoderConfig& config, const VisionVars& vars, ad::Var images);
ad::Var text_forward(const EncoderConfig& config, const TextVars& vars,
                     const std::vector<TokenSequence>& texts);

// --- plain evaluation ---

// `images` is B x image_size(), pixel values in [0, 1].
Encoded encode_images(const ModelState& state, const Matrix& images,
                      VisionWeights which = VisionWeights::Theta);
Encoded encode_texts(const ModelState& state, const std::vector<TokenSequence>& texts);

// Single-sample conveniences.
Encoded encode_image(const ModelState& state, std::span<const float> image,
                     VisionWeights which = VisionWeights::Theta);
Encoded encode_text(const ModelState& state, const TokenSequence& text);

// --- differentiation contract ---

enum class Wrt { Input, Theta };

// Builds the objective on the tape from the images variable and the bound
// vision weights. It must return a rows x 1 column of per-sample terms (a
// 1x1 value is a single term); the differentiated scalar is their sum.
using ImageObjective =
    std::function<ad::Var(ad::Tape& tape, ad::Var images, const VisionVars& theta)>;

struct GradientResult {
  float value = 0.0f;
  std::vector<float> terms;        // per-sample values
  Matrix input_grad;               // filled for Wrt::Input
  std::vector<Matrix> theta_grad;  // filled for Wrt::Theta, tensors() order
};

GradientResult gradient(const ModelState& state, const Matrix& images,
                        const ImageObjective& objective, Wrt wrt);

}  // namespace ralb
