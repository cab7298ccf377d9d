#include "basetts/nn/optim.h"

#include <cmath>

namespace basetts::nn {

AdamW::AdamW(std::vector<NamedTensor> params, AdamConfig config)
    : params_(std::move(params)), config_(config) {
  m_.reserve(params_.size());
  v_.reserve(params_.size());
  for (const auto& [name, p] : params_) {
    m_.push_back(Matrix::Zero(p.rows(), p.cols()));
    v_.push_back(Matrix::Zero(p.rows(), p.cols()));
  }
}

void AdamW::Step(double lr) {
  ++steps_;
  const double b1 = config_.beta1;
  const double b2 = config_.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(steps_));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(steps_));
  for (size_t i = 0; i < params_.size(); ++i) {
    Tensor& p = params_[i].second;
    if (config_.weight_decay > 0.0) {
      p.mutable_value() *= 1.0 - lr * config_.weight_decay;
    }
    if (!p.has_grad()) continue;
    const Matrix g = p.grad();
    m_[i] = b1 * m_[i] + (1.0 - b1) * g;
    v_[i] = b2 * v_[i] + (1.0 - b2) * g.cwiseProduct(g);
    p.mutable_value().array() -=
        lr * (m_[i].array() / c1) /
        ((v_[i].array() / c2).sqrt() + config_.eps);
  }
  ZeroGrad();
}

void AdamW::ZeroGrad() {
  for (auto& [name, p] : params_) p.ZeroGrad();
}

double GradNorm(const std::vector<NamedTensor>& params) {
  double sq = 0.0;
  for (const auto& [name, p] : params) {
    if (p.has_grad()) sq += p.node()->grad.squaredNorm();
  }
  return std::sqrt(sq);
}

double ClipGradNorm(const std::vector<NamedTensor>& params, double max_norm) {
  const double norm = GradNorm(params);
  if (norm > max_norm && norm > 0.0) {
    const double s = max_norm / norm;
    for (const auto& [name, p] : params) {
      if (p.has_grad()) p.node()->grad *= s;
    }
  }
  return norm;
}

}  // namespace basetts::nn
