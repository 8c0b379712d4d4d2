#pragma once

#include "ralb/tensor.hpp"

#include <cstddef>
#include <span>
#include <vector>

namespace ralb::math {

// Zero-shot and attack logits are cosines divided by this fixed scale.
inline constexpr float kEvalTemperature = 0.01f;

inline constexpr float kMinTemperature = 0.01f;
inline constexpr float kMaxTemperature = 100.0f;
inline constexpr float kInitialTemperature = 0.07f;

// Learnable softmax temperature, stored as log(tau).
class Temperature {
 public:
  Temperature() { set_tau(kInitialTemperature); }

  static Temperature from_tau(float tau) {
    Temperature t;
    t.set_tau(tau);
    return t;
  }

  float log_tau() const { return log_tau_; }
  float tau() const;

  // Both setters clamp tau into [kMinTemperature, kMaxTemperature].
  void set_log_tau(float log_tau);
  void set_tau(float tau);

 private:
  float log_tau_ = 0.0f;
};

// Unit-norm vector in the shared image-text space.
class JointEmbedding {
 public:
  // Normalizes `raw`; throws DomainError on a zero vector.
  static JointEmbedding from_raw(std::span<const float> raw);

  std::span<const float> values() const { return values_; }
  std::size_t dim() const { return values_.size(); }
  operator std::span<const float>() const { return values_; }

 private:
  std::vector<float> values_;
};

struct LossValue {
  float sum = 0.0f;   // batch sum, the canonical reduction
  float mean = 0.0f;  // per-sample mean for reports
};

float l2_norm(std::span<const float> v);
float dot(std::span<const float> a, std::span<const float> b);

float cosine_similarity(std::span<const float> a, std::span<const float> b);

// Pairwise cosines between the rows of `a` and the rows of `b`.
Matrix cosine_matrix(const Matrix& a, const Matrix& b);

float log_sum_exp(std::span<const float> z);

// Row-wise InfoNCE: -log softmax(sim_i / tau)_i for row i,
// positives on the diagonal.
std::vector<float> info_nce_terms(const Matrix& similarity, float tau);

LossValue info_nce_image(const Matrix& image_embs, const Matrix& text_embs, float tau);
LossValue info_nce_text(const Matrix& image_embs, const Matrix& text_embs, float tau);
LossValue clip_loss(const Matrix& image_embs, const Matrix& text_embs, float tau);

std::vector<float> zero_shot_logits(std::span<const float> image_emb, const Matrix& templates,
                                    float tau_eval = kEvalTemperature);

// Lowest index wins ties.
std::size_t argmax(std::span<const float> values);

float tecoa_ce_loss(std::span<const float> logits, std::size_t y);
float fare_distance(std::span<const float> adv_raw, std::span<const float> orig_raw);
float dlr_loss(std::span<const float> logits, std::size_t y);
float cw_margin_loss(std::span<const float> logits, std::size_t y);

// Index of the largest logit other than y (lowest index on ties).
std::size_t runner_up(std::span<const float> logits, std::size_t y);

}  // namespace ralb::math
