#include "ralb/optimizer.hpp"

#include "ralb/errors.hpp"

#include <cmath>

namespace ralb {

AdamW::AdamW(std::vector<Matrix*> params, std::vector<bool> decay, AdamWConfig config)
    : params_(std::move(params)), decay_(std::move(decay)), cfg_(config) {
  if (decay_.size() != params_.size()) throw ArgumentError("AdamW: decay mask size mismatch");
  for (const Matrix* p : params_) {
    m_.push_back(Matrix::Zero(p->rows(), p->cols()));
    v_.push_back(Matrix::Zero(p->rows(), p->cols()));
  }
}

void AdamW::step(const std::vector<Matrix>& grads, float lr) {
  if (grads.size() != params_.size()) throw ArgumentError("AdamW: gradient count mismatch");
  ++t_;
  const float bc1 = 1.0f - std::pow(cfg_.beta1, static_cast<float>(t_));
  const float bc2 = 1.0f - std::pow(cfg_.beta2, static_cast<float>(t_));
  for (std::size_t i = 0; i < params_.size(); ++i) {
    Matrix& p = *params_[i];
    const Matrix& g = grads[i];
    if (g.rows() != p.rows() || g.cols() != p.cols()) throw ArgumentError("AdamW: gradient shape mismatch");
    if (!g.allFinite()) throw NumericError("AdamW: non-finite gradient");
    if (decay_[i]) p *= (1.0f - lr * cfg_.weight_decay);
    m_[i] = cfg_.beta1 * m_[i] + (1.0f - cfg_.beta1) * g;
    v_[i] = cfg_.beta2 * v_[i] + (1.0f - cfg_.beta2) * g.cwiseAbs2();
    p.array() -= lr * (m_[i].array() / bc1) / ((v_[i].array() / bc2).sqrt() + cfg_.eps);
  }
}

}  // namespace ralb
