#include "flowadapter/core/optim.hpp"

#include <cmath>

namespace fa::optim {

Adam::Adam(ag::ParamList params, AdamConfig cfg) : params_(std::move(params)), cfg_(cfg) {
  for (const auto& p : params_) {
    m_.emplace_back(p.var.rows(), p.var.cols());
    v_.emplace_back(p.var.rows(), p.var.cols());
  }
}

void Adam::step() {
  ++t_;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  for (std::size_t i = 0; i < params_.size(); ++i) {
    ag::Var var = params_[i].var;
    const Matrix& g = var.grad();
    if (g.empty()) continue;
    Matrix& w = var.mutable_value();
    Matrix& m = m_[i];
    Matrix& v = v_[i];
    for (std::size_t j = 0; j < w.size(); ++j) {
      m[j] = cfg_.beta1 * m[j] + (1.0 - cfg_.beta1) * g[j];
      v[j] = cfg_.beta2 * v[j] + (1.0 - cfg_.beta2) * g[j] * g[j];
      w[j] -= cfg_.lr * (m[j] / bc1) / (std::sqrt(v[j] / bc2) + cfg_.eps);
    }
  }
}

void Adam::zero_grad() { ag::zero_grads(params_); }

double clip_grad_norm(const ag::ParamList& params, double max_norm) {
  const double norm = ag::global_grad_norm(params);
  if (norm > max_norm && norm > 0.0) {
    const double s = max_norm / norm;
    for (const auto& p : params) {
      ag::Var v = p.var;
      if (!v.grad().empty()) v.mutable_grad() *= s;
    }
  }
  return norm;
}

}  // namespace fa::optim
