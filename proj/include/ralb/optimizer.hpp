#pragma once

#include "ralb/tensor.hpp"

#include <vector>

namespace ralb {

struct AdamWConfig {
  float beta1 = 0.9f;
  float beta2 = 0.999f;
  float eps = 1e-8f;
  float weight_decay = 1e-4f;
};

// Adam with decoupled weight decay. Parameters flagged `decay` shrink by
// lr * weight_decay each step before the adaptive update.
class AdamW {
 public:
  AdamW(std::vector<Matrix*> params, std::vector<bool> decay, AdamWConfig config);

  void step(const std::vector<Matrix>& grads, float lr);
  long steps_taken() const { return t_; }

 private:
  std::vector<Matrix*> params_;
  std::vector<bool> decay_;
  std::vector<Matrix> m_, v_;
  AdamWConfig cfg_;
  long t_ = 0;
};

}  // namespace ralb
