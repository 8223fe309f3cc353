#pragma once

#include <vector>

#include "flowadapter/core/autograd.hpp"

namespace fa::optim {

struct AdamConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Adam over a fixed parameter list; moment buffers are matched by position.
class Adam {
 public:
  Adam(ag::ParamList params, AdamConfig cfg);

  void step();
  void zero_grad();
  long steps() const { return t_; }
  const ag::ParamList& params() const { return params_; }

 private:
  ag::ParamList params_;
  AdamConfig cfg_;
  std::vector<Matrix> m_;
  std::vector<Matrix> v_;
  long t_ = 0;
};

// Rescales gradients in place so their global L2 norm is at most max_norm.
// Returns the norm before clipping.
double clip_grad_norm(const ag::ParamList& params, double max_norm);

}  // namespace fa::optim
