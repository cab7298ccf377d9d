#include "basetts/nn/ops.h"

#include <algorithm>
#include <cmath>
#include <string>

#include "basetts/error.h"

namespace basetts::nn {
namespace {

void CheckSameShape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw Error(ErrorKind::kConfig,
                std::string(op) + ": shape mismatch " +
                    std::to_string(a.rows()) + "x" + std::to_string(a.cols()) +
                    " vs " + std::to_string(b.rows()) + "x" +
                    std::to_string(b.cols()));
  }
}

inline Node& Parent(Node& n, size_t i) { return *n.parents[i]; }

// Applies f elementwise, with df(x, y) giving dy/dx from input and output.
template <typename F, typename DF>
Tensor Pointwise(const Tensor& x, F f, DF df) {
  Matrix out = x.value().unaryExpr(f);
  return Tensor::FromOp(out, {x}, [df](Node& self) {
    Node& in = Parent(self, 0);
    Matrix g(self.value.rows(), self.value.cols());
    for (Eigen::Index i = 0; i < g.size(); ++i) {
      g.data()[i] =
          self.grad.data()[i] * df(in.value.data()[i], self.value.data()[i]);
    }
    in.AccumulateGrad(g);
  });
}

}  // namespace

Tensor MatMul(const Tensor& a, const Tensor& b) {
  if (a.cols() != b.rows()) {
    throw Error(ErrorKind::kConfig,
                "MatMul: inner dimensions differ (" + std::to_string(a.cols()) +
                    " vs " + std::to_string(b.rows()) + ")");
  }
  Matrix out = a.value() * b.value();
  return Tensor::FromOp(std::move(out), {a, b}, [](Node& self) {
    Node& pa = Parent(self, 0);
    Node& pb = Parent(self, 1);
    if (pa.requires_grad) pa.AccumulateGradExpr(self.grad * pb.value.transpose());
    if (pb.requires_grad) pb.AccumulateGradExpr(pa.value.transpose() * self.grad);
  });
}

Tensor Transpose(const Tensor& x) {
  Matrix out = x.value().transpose();
  return Tensor::FromOp(std::move(out), {x}, [](Node& self) {
    Parent(self, 0).AccumulateGradExpr(self.grad.transpose());
  });
}

Tensor Add(const Tensor& a, const Tensor& b) {
  CheckSameShape(a, b, "Add");
  return Tensor::FromOp(a.value() + b.value(), {a, b}, [](Node& self) {
    if (Parent(self, 0).requires_grad) Parent(self, 0).AccumulateGrad(self.grad);
    if (Parent(self, 1).requires_grad) Parent(self, 1).AccumulateGrad(self.grad);
  });
}

Tensor Sub(const Tensor& a, const Tensor& b) {
  CheckSameShape(a, b, "Sub");
  return Tensor::FromOp(a.value() - b.value(), {a, b}, [](Node& self) {
    if (Parent(self, 0).requires_grad) Parent(self, 0).AccumulateGrad(self.grad);
    if (Parent(self, 1).requires_grad) Parent(self, 1).AccumulateGradExpr(-self.grad);
  });
}

Tensor Mul(const Tensor& a, const Tensor& b) {
  CheckSameShape(a, b, "Mul");
  Matrix out = a.value().cwiseProduct(b.value());
  return Tensor::FromOp(std::move(out), {a, b}, [](Node& self) {
    Node& pa = Parent(self, 0);
    Node& pb = Parent(self, 1);
    if (pa.requires_grad) pa.AccumulateGradExpr(self.grad.cwiseProduct(pb.value));
    if (pb.requires_grad) pb.AccumulateGradExpr(self.grad.cwiseProduct(pa.value));
  });
}

Tensor AddRow(const Tensor& x, const Tensor& row) {
  if (row.rows() != 1 || row.cols() != x.cols()) {
    throw Error(ErrorKind::kConfig, "AddRow: row must be [1 x " +
                                        std::to_string(x.cols()) + "]");
  }
  Matrix out = x.value().rowwise() + row.value().row(0);
  return Tensor::FromOp(std::move(out), {x, row}, [](Node& self) {
    if (Parent(self, 0).requires_grad) Parent(self, 0).AccumulateGrad(self.grad);
    if (Parent(self, 1).requires_grad) {
      Parent(self, 1).AccumulateGradExpr(self.grad.colwise().sum());
    }
  });
}

Tensor MulRow(const Tensor& x, const Tensor& row) {
  if (row.rows() != 1 || row.cols() != x.cols()) {
    throw Error(ErrorKind::kConfig, "MulRow: row must be [1 x " +
                                        std::to_string(x.cols()) + "]");
  }
  Matrix out = x.value().array().rowwise() * row.value().row(0).array();
  return Tensor::FromOp(std::move(out), {x, row}, [](Node& self) {
    Node& px = Parent(self, 0);
    Node& pr = Parent(self, 1);
    if (px.requires_grad) {
      Matrix g = self.grad.array().rowwise() * pr.value.row(0).array();
      px.AccumulateGrad(g);
    }
    if (pr.requires_grad) {
      pr.AccumulateGradExpr(
          self.grad.cwiseProduct(px.value).colwise().sum());
    }
  });
}

Tensor MulCol(const Tensor& x, const Tensor& col) {
  if (col.cols() != 1 || col.rows() != x.rows()) {
    throw Error(ErrorKind::kConfig, "MulCol: column must be [" +
                                        std::to_string(x.rows()) + " x 1]");
  }
  Matrix out = x.value().array().colwise() * col.value().col(0).array();
  return Tensor::FromOp(std::move(out), {x, col}, [](Node& self) {
    Node& px = Parent(self, 0);
    Node& pc = Parent(self, 1);
    if (px.requires_grad) {
      Matrix g = self.grad.array().colwise() * pc.value.col(0).array();
      px.AccumulateGrad(g);
    }
    if (pc.requires_grad) {
      pc.AccumulateGradExpr(self.grad.cwiseProduct(px.value).rowwise().sum());
    }
  });
}

Tensor Scale(const Tensor& x, double s) {
  return Tensor::FromOp(x.value() * s, {x}, [s](Node& self) {
    Parent(self, 0).AccumulateGradExpr(self.grad * s);
  });
}

Tensor AddScalar(const Tensor& x, double s) {
  return Tensor::FromOp(x.value().array() + s, {x}, [](Node& self) {
    Parent(self, 0).AccumulateGrad(self.grad);
  });
}

Tensor Relu(const Tensor& x) {
  return Pointwise(
      x, [](double v) { return v > 0 ? v : 0.0; },
      [](double v, double) { return v > 0 ? 1.0 : 0.0; });
}

Tensor LeakyRelu(const Tensor& x, double slope) {
  return Pointwise(
      x, [slope](double v) { return v > 0 ? v : slope * v; },
      [slope](double v, double) { return v > 0 ? 1.0 : slope; });
}

Tensor Gelu(const Tensor& x) {
  // tanh approximation as in GPT-2.
  constexpr double kC = 0.7978845608028654;  // sqrt(2/pi)
  return Pointwise(
      x,
      [](double v) {
        return 0.5 * v * (1.0 + std::tanh(kC * (v + 0.044715 * v * v * v)));
      },
      [](double v, double) {
        double u = kC * (v + 0.044715 * v * v * v);
        double t = std::tanh(u);
        double du = kC * (1.0 + 3.0 * 0.044715 * v * v);
        return 0.5 * (1.0 + t) + 0.5 * v * (1.0 - t * t) * du;
      });
}

Tensor Tanh(const Tensor& x) {
  return Pointwise(
      x, [](double v) { return std::tanh(v); },
      [](double, double y) { return 1.0 - y * y; });
}

Tensor Sigmoid(const Tensor& x) {
  return Pointwise(
      x, [](double v) { return 1.0 / (1.0 + std::exp(-v)); },
      [](double, double y) { return y * (1.0 - y); });
}

Tensor Exp(const Tensor& x) {
  return Pointwise(
      x, [](double v) { return std::exp(v); },
      [](double, double y) { return y; });
}

Tensor Log(const Tensor& x) {
  return Pointwise(
      x, [](double v) { return std::log(v); },
      [](double v, double) { return 1.0 / v; });
}

Tensor Abs(const Tensor& x) {
  return Pointwise(
      x, [](double v) { return std::abs(v); },
      [](double v, double) { return v > 0 ? 1.0 : (v < 0 ? -1.0 : 0.0); });
}

Tensor Square(const Tensor& x) {
  return Pointwise(
      x, [](double v) { return v * v; },
      [](double v, double) { return 2.0 * v; });
}

Tensor SqrtEps(const Tensor& x, double eps) {
  return Pointwise(
      x, [eps](double v) { return std::sqrt(v + eps); },
      [](double, double y) { return 0.5 / y; });
}

Tensor LogClamped(const Tensor& x, double floor) {
  return Pointwise(
      x, [floor](double v) { return std::log(v > floor ? v : floor); },
      [floor](double v, double) { return v > floor ? 1.0 / v : 0.0; });
}

Tensor Sum(const Tensor& x) {
  Matrix out(1, 1);
  out(0, 0) = x.value().sum();
  return Tensor::FromOp(std::move(out), {x}, [](Node& self) {
    Node& in = Parent(self, 0);
    in.AccumulateGradExpr(
        Matrix::Constant(in.value.rows(), in.value.cols(), self.grad(0, 0)));
  });
}

Tensor Mean(const Tensor& x) {
  const double n = static_cast<double>(x.value().size());
  if (n == 0) {
    throw Error(ErrorKind::kEmptyInput, "Mean of an empty tensor");
  }
  Matrix out(1, 1);
  out(0, 0) = x.value().sum() / n;
  return Tensor::FromOp(std::move(out), {x}, [n](Node& self) {
    Node& in = Parent(self, 0);
    in.AccumulateGradExpr(Matrix::Constant(in.value.rows(), in.value.cols(),
                                           self.grad(0, 0) / n));
  });
}

Tensor MeanRows(const Tensor& x) {
  const double n = static_cast<double>(x.rows());
  if (n == 0) {
    throw Error(ErrorKind::kEmptyInput, "MeanRows of an empty tensor");
  }
  Matrix out = x.value().colwise().sum() / n;
  return Tensor::FromOp(std::move(out), {x}, [n](Node& self) {
    Node& in = Parent(self, 0);
    Matrix g = (self.grad / n).replicate(in.value.rows(), 1);
    in.AccumulateGrad(g);
  });
}

Tensor SumCols(const Tensor& x) {
  Matrix out = x.value().rowwise().sum();
  return Tensor::FromOp(std::move(out), {x}, [](Node& self) {
    Node& in = Parent(self, 0);
    Matrix g = self.grad.replicate(1, in.value.cols());
    in.AccumulateGrad(g);
  });
}

Tensor SoftmaxRows(const Tensor& x) {
  Matrix out = x.value();
  for (Eigen::Index r = 0; r < out.rows(); ++r) {
    auto row = out.row(r);
    row.array() -= row.maxCoeff();
    row = row.array().exp();
    row /= row.sum();
  }
  return Tensor::FromOp(std::move(out), {x}, [](Node& self) {
    const Matrix& y = self.value;
    Eigen::VectorXd dots = self.grad.cwiseProduct(y).rowwise().sum();
    Matrix g = y.cwiseProduct(self.grad - dots.replicate(1, y.cols()));
    Parent(self, 0).AccumulateGrad(g);
  });
}

Tensor LogSoftmaxRows(const Tensor& x) {
  Matrix out = x.value();
  for (Eigen::Index r = 0; r < out.rows(); ++r) {
    auto row = out.row(r);
    double m = row.maxCoeff();
    double lse = m + std::log((row.array() - m).exp().sum());
    row.array() -= lse;
  }
  return Tensor::FromOp(std::move(out), {x}, [](Node& self) {
    Matrix p = self.value.array().exp();
    Eigen::VectorXd gsum = self.grad.rowwise().sum();
    Matrix g = self.grad - p.cwiseProduct(gsum.replicate(1, p.cols()));
    Parent(self, 0).AccumulateGrad(g);
  });
}

Tensor CausalSoftmaxRows(const Tensor& x, Eigen::Index offset) {
  Matrix out = Matrix::Zero(x.rows(), x.cols());
  for (Eigen::Index r = 0; r < out.rows(); ++r) {
    Eigen::Index n = std::min<Eigen::Index>(x.cols(), r + offset + 1);
    if (n <= 0) continue;
    auto src = x.value().row(r).head(n);
    double m = src.maxCoeff();
    auto dst = out.row(r).head(n);
    dst = (src.array() - m).exp();
    dst /= dst.sum();
  }
  return Tensor::FromOp(std::move(out), {x}, [](Node& self) {
    const Matrix& y = self.value;
    Eigen::VectorXd dots = self.grad.cwiseProduct(y).rowwise().sum();
    // Masked entries have y == 0, so their gradient vanishes automatically.
    Matrix g = y.cwiseProduct(self.grad - dots.replicate(1, y.cols()));
    Parent(self, 0).AccumulateGrad(g);
  });
}

Tensor LayerNormRows(const Tensor& x, const Tensor& gain, const Tensor& bias,
                     double eps) {
  const Eigen::Index c = x.cols();
  if (gain.cols() != c || bias.cols() != c) {
    throw Error(ErrorKind::kConfig, "LayerNormRows: parameter width mismatch");
  }
  Matrix xhat(x.rows(), c);
  Eigen::VectorXd inv_std(x.rows());
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    auto row = x.value().row(r);
    double mean = row.mean();
    double var = (row.array() - mean).square().mean();
    inv_std(r) = 1.0 / std::sqrt(var + eps);
    xhat.row(r) = (row.array() - mean) * inv_std(r);
  }
  Matrix out = (xhat.array().rowwise() * gain.value().row(0).array())
                   .rowwise() +
               bias.value().row(0).array();
  return Tensor::FromOp(
      std::move(out), {x, gain, bias},
      [xhat = std::move(xhat), inv_std = std::move(inv_std)](Node& self) {
        Node& px = Parent(self, 0);
        Node& pg = Parent(self, 1);
        Node& pb = Parent(self, 2);
        if (pg.requires_grad) {
          pg.AccumulateGradExpr(self.grad.cwiseProduct(xhat).colwise().sum());
        }
        if (pb.requires_grad) pb.AccumulateGradExpr(self.grad.colwise().sum());
        if (px.requires_grad) {
          const double n = static_cast<double>(xhat.cols());
          Matrix dxhat = self.grad.array().rowwise() * pg.value.row(0).array();
          Matrix g(xhat.rows(), xhat.cols());
          for (Eigen::Index r = 0; r < xhat.rows(); ++r) {
            double mean_d = dxhat.row(r).mean();
            double mean_dx = dxhat.row(r).dot(xhat.row(r)) / n;
            g.row(r) = inv_std(r) * (dxhat.row(r).array() - mean_d -
                                     xhat.row(r).array() * mean_dx);
          }
          px.AccumulateGrad(g);
        }
      });
}

Tensor L2NormalizeRows(const Tensor& x, double eps) {
  Eigen::VectorXd norms = x.value().rowwise().norm();
  norms = norms.array().max(eps);
  Matrix out = x.value().array().colwise() / norms.array();
  return Tensor::FromOp(std::move(out), {x}, [norms](Node& self) {
    const Matrix& y = self.value;
    Eigen::VectorXd dots = self.grad.cwiseProduct(y).rowwise().sum();
    Matrix g = (self.grad - y.cwiseProduct(dots.replicate(1, y.cols())))
                   .array()
                   .colwise() /
               norms.array();
    Parent(self, 0).AccumulateGrad(g);
  });
}

Tensor CrossEntropy(const Tensor& logits, std::span<const int64_t> targets) {
  const Eigen::Index n = logits.rows();
  if (static_cast<size_t>(n) != targets.size()) {
    throw Error(ErrorKind::kData, "CrossEntropy: " + std::to_string(n) +
                                      " logit rows vs " +
                                      std::to_string(targets.size()) +
                                      " targets");
  }
  if (n == 0) {
    throw Error(ErrorKind::kEmptyInput, "CrossEntropy over zero positions");
  }
  Matrix probs(n, logits.cols());
  double total = 0.0;
  for (Eigen::Index r = 0; r < n; ++r) {
    const int64_t t = targets[r];
    if (t < 0 || t >= logits.cols()) {
      throw Error(ErrorKind::kData, "CrossEntropy: target " +
                                        std::to_string(t) + " out of range");
    }
    auto row = logits.value().row(r);
    double m = row.maxCoeff();
    auto p = probs.row(r);
    p = (row.array() - m).exp();
    double z = p.sum();
    p /= z;
    total -= row(t) - m - std::log(z);
  }
  Matrix out(1, 1);
  out(0, 0) = total / static_cast<double>(n);
  std::vector<int64_t> tgt(targets.begin(), targets.end());
  return Tensor::FromOp(
      std::move(out), {logits},
      [probs = std::move(probs), tgt = std::move(tgt)](Node& self) {
        Matrix g = probs;
        for (size_t r = 0; r < tgt.size(); ++r) {
          g(static_cast<Eigen::Index>(r), tgt[r]) -= 1.0;
        }
        g *= self.grad(0, 0) / static_cast<double>(tgt.size());
        Parent(self, 0).AccumulateGrad(g);
      });
}

Tensor SliceRows(const Tensor& x, Eigen::Index start, Eigen::Index count) {
  if (start < 0 || count < 0 || start + count > x.rows()) {
    throw Error(ErrorKind::kConfig, "SliceRows out of range");
  }
  Matrix out = x.value().middleRows(start, count);
  return Tensor::FromOp(std::move(out), {x}, [start, count](Node& self) {
    Node& in = Parent(self, 0);
    if (in.grad.size() == 0) in.grad = Matrix::Zero(in.value.rows(), in.value.cols());
    in.grad.middleRows(start, count) += self.grad;
  });
}

Tensor SliceCols(const Tensor& x, Eigen::Index start, Eigen::Index count) {
  if (start < 0 || count < 0 || start + count > x.cols()) {
    throw Error(ErrorKind::kConfig, "SliceCols out of range");
  }
  Matrix out = x.value().middleCols(start, count);
  return Tensor::FromOp(std::move(out), {x}, [start, count](Node& self) {
    Node& in = Parent(self, 0);
    if (in.grad.size() == 0) in.grad = Matrix::Zero(in.value.rows(), in.value.cols());
    in.grad.middleCols(start, count) += self.grad;
  });
}

Tensor ConcatRows(const std::vector<Tensor>& parts) {
  if (parts.empty()) {
    throw Error(ErrorKind::kEmptyInput, "ConcatRows of nothing");
  }
  Eigen::Index rows = 0;
  const Eigen::Index cols = parts[0].cols();
  for (const auto& p : parts) {
    if (p.cols() != cols) {
      throw Error(ErrorKind::kConfig, "ConcatRows: column count mismatch");
    }
    rows += p.rows();
  }
  Matrix out(rows, cols);
  Eigen::Index at = 0;
  for (const auto& p : parts) {
    out.middleRows(at, p.rows()) = p.value();
    at += p.rows();
  }
  return Tensor::FromOp(std::move(out), parts, [](Node& self) {
    Eigen::Index at = 0;
    for (auto& parent : self.parents) {
      const Eigen::Index r = parent->value.rows();
      if (parent->requires_grad) {
        parent->AccumulateGradExpr(self.grad.middleRows(at, r));
      }
      at += r;
    }
  });
}

Tensor ConcatCols(const std::vector<Tensor>& parts) {
  if (parts.empty()) {
    throw Error(ErrorKind::kEmptyInput, "ConcatCols of nothing");
  }
  Eigen::Index cols = 0;
  const Eigen::Index rows = parts[0].rows();
  for (const auto& p : parts) {
    if (p.rows() != rows) {
      throw Error(ErrorKind::kConfig, "ConcatCols: row count mismatch");
    }
    cols += p.cols();
  }
  Matrix out(rows, cols);
  Eigen::Index at = 0;
  for (const auto& p : parts) {
    out.middleCols(at, p.cols()) = p.value();
    at += p.cols();
  }
  return Tensor::FromOp(std::move(out), parts, [](Node& self) {
    Eigen::Index at = 0;
    for (auto& parent : self.parents) {
      const Eigen::Index c = parent->value.cols();
      if (parent->requires_grad) {
        parent->AccumulateGradExpr(self.grad.middleCols(at, c));
      }
      at += c;
    }
  });
}

Tensor RepeatRows(const Tensor& x, Eigen::Index factor) {
  if (factor < 1) throw Error(ErrorKind::kConfig, "RepeatRows factor < 1");
  Matrix out(x.rows() * factor, x.cols());
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    out.middleRows(r * factor, factor) = x.value().row(r).replicate(factor, 1);
  }
  return Tensor::FromOp(std::move(out), {x}, [factor](Node& self) {
    Node& in = Parent(self, 0);
    Matrix g(in.value.rows(), in.value.cols());
    for (Eigen::Index r = 0; r < g.rows(); ++r) {
      g.row(r) = self.grad.middleRows(r * factor, factor).colwise().sum();
    }
    in.AccumulateGrad(g);
  });
}

Tensor BroadcastRows(const Tensor& row, Eigen::Index rows) {
  if (row.rows() != 1) {
    throw Error(ErrorKind::kConfig, "BroadcastRows needs a single row");
  }
  Matrix out = row.value().replicate(rows, 1);
  return Tensor::FromOp(std::move(out), {row}, [](Node& self) {
    Parent(self, 0).AccumulateGradExpr(self.grad.colwise().sum());
  });
}

Tensor StrideRows(const Tensor& x, Eigen::Index offset, Eigen::Index step) {
  if (step < 1 || offset < 0) {
    throw Error(ErrorKind::kConfig, "StrideRows: bad offset/step");
  }
  Eigen::Index n = offset < x.rows() ? (x.rows() - offset + step - 1) / step : 0;
  Matrix out(n, x.cols());
  for (Eigen::Index i = 0; i < n; ++i) {
    out.row(i) = x.value().row(offset + i * step);
  }
  return Tensor::FromOp(std::move(out), {x}, [offset, step, n](Node& self) {
    Node& in = Parent(self, 0);
    if (in.grad.size() == 0) in.grad = Matrix::Zero(in.value.rows(), in.value.cols());
    for (Eigen::Index i = 0; i < n; ++i) {
      in.grad.row(offset + i * step) += self.grad.row(i);
    }
  });
}

Tensor GatherRows(const Tensor& table, std::span<const int64_t> ids) {
  Matrix out(static_cast<Eigen::Index>(ids.size()), table.cols());
  for (size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || ids[i] >= table.rows()) {
      throw Error(ErrorKind::kData, "GatherRows: id " + std::to_string(ids[i]) +
                                        " outside table of " +
                                        std::to_string(table.rows()));
    }
    out.row(static_cast<Eigen::Index>(i)) = table.value().row(ids[i]);
  }
  std::vector<int64_t> idx(ids.begin(), ids.end());
  return Tensor::FromOp(std::move(out), {table},
                        [idx = std::move(idx)](Node& self) {
                          Node& in = Parent(self, 0);
                          if (in.grad.size() == 0) {
                            in.grad = Matrix::Zero(in.value.rows(), in.value.cols());
                          }
                          for (size_t i = 0; i < idx.size(); ++i) {
                            in.grad.row(idx[i]) +=
                                self.grad.row(static_cast<Eigen::Index>(i));
                          }
                        });
}

Tensor AvgPoolRows(const Tensor& x, Eigen::Index factor) {
  if (factor < 1) throw Error(ErrorKind::kConfig, "AvgPoolRows factor < 1");
  const Eigen::Index n = x.rows() / factor;
  Matrix out(n, x.cols());
  for (Eigen::Index i = 0; i < n; ++i) {
    out.row(i) = x.value().middleRows(i * factor, factor).colwise().mean();
  }
  return Tensor::FromOp(std::move(out), {x}, [factor, n](Node& self) {
    Node& in = Parent(self, 0);
    if (in.grad.size() == 0) in.grad = Matrix::Zero(in.value.rows(), in.value.cols());
    for (Eigen::Index i = 0; i < n; ++i) {
      in.grad.middleRows(i * factor, factor).rowwise() +=
          self.grad.row(i) / static_cast<double>(factor);
    }
  });
}

Tensor FrameRows(const Tensor& x, Eigen::Index num_frames, Eigen::Index win,
                 Eigen::Index hop, Eigen::Index offset) {
  if (x.cols() != 1) throw Error(ErrorKind::kConfig, "FrameRows needs [N x 1]");
  const Eigen::Index n = x.rows();
  Matrix out = Matrix::Zero(num_frames, win);
  for (Eigen::Index t = 0; t < num_frames; ++t) {
    const Eigen::Index start = t * hop + offset;
    const Eigen::Index lo = std::max<Eigen::Index>(0, -start);
    const Eigen::Index hi = std::min<Eigen::Index>(win, n - start);
    if (hi > lo) {
      out.row(t).segment(lo, hi - lo) =
          x.value().col(0).segment(start + lo, hi - lo).transpose();
    }
  }
  return Tensor::FromOp(std::move(out), {x}, [num_frames, win, hop, offset,
                                              n](Node& self) {
    Node& in = Parent(self, 0);
    if (in.grad.size() == 0) in.grad = Matrix::Zero(n, 1);
    for (Eigen::Index t = 0; t < num_frames; ++t) {
      const Eigen::Index start = t * hop + offset;
      const Eigen::Index lo = std::max<Eigen::Index>(0, -start);
      const Eigen::Index hi = std::min<Eigen::Index>(win, n - start);
      if (hi > lo) {
        in.grad.col(0).segment(start + lo, hi - lo) +=
            self.grad.row(t).segment(lo, hi - lo).transpose();
      }
    }
  });
}

Tensor Reshape(const Tensor& x, Eigen::Index rows, Eigen::Index cols) {
  if (rows * cols != x.value().size()) {
    throw Error(ErrorKind::kConfig, "Reshape: element count mismatch");
  }
  Matrix out = Eigen::Map<const Matrix>(x.value().data(), rows, cols);
  return Tensor::FromOp(std::move(out), {x}, [](Node& self) {
    Node& in = Parent(self, 0);
    Matrix g = Eigen::Map<const Matrix>(self.grad.data(), in.value.rows(),
                                        in.value.cols());
    in.AccumulateGrad(g);
  });
}

Tensor CausalConv1d(const Tensor& x, const Tensor& weight, const Tensor& bias,
                    int kernel, int dilation, int stride) {
  const Eigen::Index cin = x.cols();
  const Eigen::Index t_in = x.rows();
  if (kernel < 1 || dilation < 1 || stride < 1) {
    throw Error(ErrorKind::kConfig, "CausalConv1d: bad kernel/dilation/stride");
  }
  if (weight.rows() != kernel * cin) {
    throw Error(ErrorKind::kConfig,
                "CausalConv1d: weight has " + std::to_string(weight.rows()) +
                    " rows, expected kernel*in = " +
                    std::to_string(kernel * cin));
  }
  const Eigen::Index cout = weight.cols();
  if (bias.defined() && bias.cols() != cout) {
    throw Error(ErrorKind::kConfig, "CausalConv1d: bias width mismatch");
  }
  const Eigen::Index pad = static_cast<Eigen::Index>(kernel - 1) * dilation;
  const Eigen::Index t_out = (t_in + stride - 1) / stride;
  // im2col: row o holds taps k=0..K-1 at input position o*stride + k*d - pad.
  Matrix cols = Matrix::Zero(t_out, kernel * cin);
  for (Eigen::Index o = 0; o < t_out; ++o) {
    for (int k = 0; k < kernel; ++k) {
      Eigen::Index pos = o * stride + static_cast<Eigen::Index>(k) * dilation - pad;
      if (pos >= 0 && pos < t_in) {
        cols.block(o, k * cin, 1, cin) = x.value().row(pos);
      }
    }
  }
  Matrix out = cols * weight.value();
  if (bias.defined()) out.rowwise() += bias.value().row(0);
  std::vector<Tensor> parents = {x, weight};
  if (bias.defined()) parents.push_back(bias);
  return Tensor::FromOp(
      std::move(out), parents,
      [cols = std::move(cols), kernel, dilation, stride, pad, cin, t_in,
       t_out](Node& self) {
        Node& px = Parent(self, 0);
        Node& pw = Parent(self, 1);
        if (pw.requires_grad) pw.AccumulateGradExpr(cols.transpose() * self.grad);
        if (self.parents.size() > 2 && Parent(self, 2).requires_grad) {
          Parent(self, 2).AccumulateGradExpr(self.grad.colwise().sum());
        }
        if (px.requires_grad) {
          Matrix dcols = self.grad * pw.value.transpose();
          if (px.grad.size() == 0) px.grad = Matrix::Zero(t_in, cin);
          for (Eigen::Index o = 0; o < t_out; ++o) {
            for (int k = 0; k < kernel; ++k) {
              Eigen::Index pos =
                  o * stride + static_cast<Eigen::Index>(k) * dilation - pad;
              if (pos >= 0 && pos < t_in) {
                px.grad.row(pos) += dcols.block(o, k * cin, 1, cin);
              }
            }
          }
        }
      });
}

Tensor Detach(const Tensor& x) { return Tensor(x.value()); }

Tensor GradientReversal(const Tensor& x, double lambda) {
  return Tensor::FromOp(x.value(), {x}, [lambda](Node& self) {
    Parent(self, 0).AccumulateGradExpr(self.grad * (-lambda));
  });
}

Tensor StraightThrough(const Tensor& x, const Matrix& quantized) {
  if (quantized.rows() != x.rows() || quantized.cols() != x.cols()) {
    throw Error(ErrorKind::kConfig, "StraightThrough: shape mismatch");
  }
  return Tensor::FromOp(quantized, {x}, [](Node& self) {
    Parent(self, 0).AccumulateGrad(self.grad);
  });
}

}  // namespace basetts::nn
