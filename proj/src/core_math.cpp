#include "ralb/core_math.hpp"

#include "ralb/errors.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace ralb::math {

float Temperature::tau() const { return std::exp(log_tau_); }

void Temperature::set_log_tau(float log_tau) {
  if (!std::isfinite(log_tau)) throw NumericError("temperature: non-finite log_tau");
  log_tau_ = std::clamp(log_tau, std::log(kMinTemperature), std::log(kMaxTemperature));
}

void Temperature::set_tau(float tau) {
  if (!(tau > 0.0f)) throw ArgumentError("temperature: tau must be positive");
  set_log_tau(std::log(tau));
}

JointEmbedding JointEmbedding::from_raw(std::span<const float> raw) {
  const float n = l2_norm(raw);
  if (!(n > 0.0f)) throw DomainError("joint embedding: zero-norm vector");
  JointEmbedding e;
  e.values_.resize(raw.size());
  std::transform(raw.begin(), raw.end(), e.values_.begin(), [n](float v) { return v / n; });
  return e;
}

float dot(std::span<const float> a, std::span<const float> b) {
  if (a.size() != b.size()) throw ArgumentError("dot: dimension mismatch");
  float s = 0.0f;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

float l2_norm(std::span<const float> v) { return std::sqrt(dot(v, v)); }

float cosine_similarity(std::span<const float> a, std::span<const float> b) {
  if (a.size() != b.size()) throw ArgumentError("cosine_similarity: dimension mismatch");
  const float na = l2_norm(a);
  const float nb = l2_norm(b);
  if (!(na > 0.0f) || !(nb > 0.0f)) throw DomainError("cosine_similarity: zero-norm input");
  // Product of norms commutes, so the result is exactly symmetric.
  const float c = dot(a, b) / (na * nb);
  return std::clamp(c, -1.0f, 1.0f);
}

Matrix cosine_matrix(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.cols()) throw ArgumentError("cosine_matrix: dimension mismatch");
  Matrix out(a.rows(), b.rows());
  for (Eigen::Index i = 0; i < a.rows(); ++i)
    for (Eigen::Index j = 0; j < b.rows(); ++j)
      out(i, j) = cosine_similarity(row_span(a, i), row_span(b, j));
  return out;
}

float log_sum_exp(std::span<const float> z) {
  if (z.empty()) throw ArgumentError("log_sum_exp: empty input");
  const float m = *std::max_element(z.begin(), z.end());
  float s = 0.0f;
  for (float v : z) s += std::exp(v - m);
  return m + std::log(s);
}

std::vector<float> info_nce_terms(const Matrix& similarity, float tau) {
  if (similarity.rows() == 0 || similarity.rows() != similarity.cols())
    throw ArgumentError("info_nce: similarity matrix must be square and non-empty");
  if (!(tau > 0.0f)) throw ArgumentError("info_nce: tau must be positive");
  const auto n = similarity.rows();
  std::vector<float> terms(static_cast<std::size_t>(n));
  std::vector<float> z(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < n; ++j) z[j] = similarity(i, j) / tau;
    terms[i] = tecoa_ce_loss(z, static_cast<std::size_t>(i));
  }
  return terms;
}

namespace {

void check_pairs(const Matrix& images, const Matrix& texts) {
  if (images.rows() == 0) throw ArgumentError("info_nce: empty batch");
  if (images.rows() != texts.rows()) throw ArgumentError("info_nce: batch length mismatch");
}

LossValue reduce(const std::vector<float>& terms) {
  double s = 0.0;
  for (float t : terms) s += t;
  return {static_cast<float>(s), static_cast<float>(s / static_cast<double>(terms.size()))};
}

}  // namespace

LossValue info_nce_image(const Matrix& image_embs, const Matrix& text_embs, float tau) {
  check_pairs(image_embs, text_embs);
  return reduce(info_nce_terms(cosine_matrix(image_embs, text_embs), tau));
}

LossValue info_nce_text(const Matrix& image_embs, const Matrix& text_embs, float tau) {
  check_pairs(image_embs, text_embs);
  return reduce(info_nce_terms(cosine_matrix(text_embs, image_embs), tau));
}

LossValue clip_loss(const Matrix& image_embs, const Matrix& text_embs, float tau) {
  const LossValue i2t = info_nce_image(image_embs, text_embs, tau);
  const LossValue t2i = info_nce_text(image_embs, text_embs, tau);
  return {(i2t.sum + t2i.sum) / 2.0f, (i2t.mean + t2i.mean) / 2.0f};
}

std::vector<float> zero_shot_logits(std::span<const float> image_emb, const Matrix& templates,
                                    float tau_eval) {
  if (templates.rows() == 0) throw ArgumentError("zero_shot_logits: no templates");
  if (!(tau_eval > 0.0f)) throw ArgumentError("zero_shot_logits: tau_eval must be positive");
  std::vector<float> logits(static_cast<std::size_t>(templates.rows()));
  for (Eigen::Index k = 0; k < templates.rows(); ++k)
    logits[k] = cosine_similarity(image_emb, row_span(templates, k)) / tau_eval;
  return logits;
}

std::size_t argmax(std::span<const float> values) {
  if (values.empty()) throw ArgumentError("argmax: empty input");
  std::size_t best = 0;
  for (std::size_t i = 1; i < values.size(); ++i)
    if (values[i] > values[best]) best = i;
  return best;
}

namespace {

void check_label(std::span<const float> logits, std::size_t y, const char* what) {
  if (y >= logits.size())
    throw ArgumentError(std::string(what) + ": label " + std::to_string(y) + " out of range");
}

}  // namespace

std::size_t runner_up(std::span<const float> logits, std::size_t y) {
  check_label(logits, y, "runner_up");
  if (logits.size() < 2) throw ArgumentError("runner_up: need at least two classes");
  std::size_t best = (y == 0) ? 1 : 0;
  for (std::size_t i = 0; i < logits.size(); ++i)
    if (i != y && logits[i] > logits[best]) best = i;
  return best;
}

float tecoa_ce_loss(std::span<const float> logits, std::size_t y) {
  check_label(logits, y, "tecoa_ce_loss");
  // (m - z_y) + log1p(sum over the non-max entries) keeps small losses
  // representable when the target dominates.
  const std::size_t k = argmax(logits);
  const float m = logits[k];
  float s = 0.0f;
  for (std::size_t j = 0; j < logits.size(); ++j)
    if (j != k) s += std::exp(logits[j] - m);
  return (m - logits[y]) + std::log1p(s);
}

float fare_distance(std::span<const float> adv_raw, std::span<const float> orig_raw) {
  if (adv_raw.size() != orig_raw.size()) throw ArgumentError("fare_distance: dimension mismatch");
  float s = 0.0f;
  for (std::size_t i = 0; i < adv_raw.size(); ++i) {
    const float d = adv_raw[i] - orig_raw[i];
    s += d * d;
  }
  return s;
}

float dlr_loss(std::span<const float> logits, std::size_t y) {
  if (logits.size() < 3) throw UnsupportedError("dlr_loss: requires at least 3 classes");
  check_label(logits, y, "dlr_loss");
  std::vector<float> sorted(logits.begin(), logits.end());
  std::partial_sort(sorted.begin(), sorted.begin() + 3, sorted.end(), std::greater<>());
  const float denom = sorted[0] - sorted[2];
  if (denom == 0.0f) throw DomainError("dlr_loss: degenerate logits (z_pi1 == z_pi3)");
  const float other = logits[runner_up(logits, y)];
  return -(logits[y] - other) / denom;
}

float cw_margin_loss(std::span<const float> logits, std::size_t y) {
  check_label(logits, y, "cw_margin_loss");
  if (logits.size() < 2) throw ArgumentError("cw_margin_loss: need at least two classes");
  return logits[runner_up(logits, y)] - logits[y];
}

}  // namespace ralb::math
