#pragma once

#include <vector>

#include "basetts/nn/module.h"

namespace basetts::nn {

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;  // decoupled (AdamW)
};

class AdamW {
 public:
  AdamW(std::vector<NamedTensor> params, AdamConfig config);

  // Applies one update at learning rate `lr` using the accumulated grads,
  // then clears them.
  void Step(double lr);
  void ZeroGrad();
  long step_count() const { return steps_; }

 private:
  std::vector<NamedTensor> params_;
  std::vector<Matrix> m_;
  std::vector<Matrix> v_;
  AdamConfig config_;
  long steps_ = 0;
};

// Rescales gradients so their global L2 norm is at most `max_norm`.
// Returns the norm before clipping.
double ClipGradNorm(const std::vector<NamedTensor>& params, double max_norm);

// Global L2 norm of the current gradients.
double GradNorm(const std::vector<NamedTensor>& params);

}  // namespace basetts::nn
