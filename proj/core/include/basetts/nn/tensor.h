#pragma once

#include <Eigen/Dense>

#include <functional>
#include <memory>
#include <vector>

namespace basetts::nn {

// Every activation in the library is a 2-D [time x channels] matrix. Batches
// are processed as lists of sequences, so no rank-3 tensors are needed.
using Matrix =
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using RowVector = Eigen::Matrix<double, 1, Eigen::Dynamic, Eigen::RowMajor>;

struct Node {
  Matrix value;
  Matrix grad;  // allocated lazily on the first accumulation
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;

  void AccumulateGrad(const Matrix& g);
  template <typename Expr>
  void AccumulateGradExpr(const Expr& g) {
    if (grad.size() == 0) {
      grad = g;
    } else {
      grad += g;
    }
  }
};

// Handle to a node of the reverse-mode graph. Copies share the node.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Matrix value, bool requires_grad = false);

  static Tensor Scalar(double v);
  static Tensor Zeros(Eigen::Index rows, Eigen::Index cols);

  bool defined() const { return node_ != nullptr; }
  const Matrix& value() const { return node_->value; }
  Matrix& mutable_value() { return node_->value; }
  // Gradient, or an all-zero matrix of the right shape if nothing flowed in.
  Matrix grad() const;
  bool has_grad() const { return node_->grad.size() != 0; }
  void ZeroGrad();
  bool requires_grad() const { return node_ && node_->requires_grad; }

  Eigen::Index rows() const { return node_->value.rows(); }
  Eigen::Index cols() const { return node_->value.cols(); }
  double item() const;

  // Reverse sweep from this node, seeding d(self)/d(self) with ones.
  void Backward() const;

  const std::shared_ptr<Node>& node() const { return node_; }

  // Builds an op result. When grad mode is off, or no parent needs a
  // gradient, the backward closure is dropped and the result is a leaf.
  static Tensor FromOp(Matrix value, std::vector<Tensor> parents,
                       std::function<void(Node&)> backward);

 private:
  std::shared_ptr<Node> node_;
};

// RAII guard disabling graph construction on this thread.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

bool GradEnabled();

}  // namespace basetts::nn
