#pragma once

#include <cmath>
#include <functional>

#include "basetts/nn/tensor.h"

namespace basetts::testing {

// Central finite difference of a scalar function with respect to one entry
// of `param`. Runs with graph construction disabled.
inline double FiniteDifference(const std::function<double()>& f,
                               nn::Tensor& param, Eigen::Index r,
                               Eigen::Index c, double h = 1e-6) {
  nn::NoGradGuard no_grad;
  const double saved = param.value()(r, c);
  param.mutable_value()(r, c) = saved + h;
  const double plus = f();
  param.mutable_value()(r, c) = saved - h;
  const double minus = f();
  param.mutable_value()(r, c) = saved;
  return (plus - minus) / (2.0 * h);
}

inline double RelativeError(double a, double b, double floor = 1e-8) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

}  // namespace basetts::testing
