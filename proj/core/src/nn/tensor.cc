#include "basetts/nn/tensor.h"

#include <unordered_set>

#include "basetts/error.h"

namespace basetts::nn {
namespace {

thread_local bool grad_enabled = true;

void TopoSort(const std::shared_ptr<Node>& root,
              std::vector<Node*>* order) {
  // Iterative post-order DFS; graphs from long sequences are deep enough to
  // overflow the stack with recursion.
  std::unordered_set<Node*> visited;
  std::vector<std::pair<Node*, size_t>> stack;
  stack.emplace_back(root.get(), 0);
  visited.insert(root.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node* parent = node->parents[next++].get();
      if (parent->requires_grad && visited.insert(parent).second) {
        stack.emplace_back(parent, 0);
      }
    } else {
      order->push_back(node);
      stack.pop_back();
    }
  }
}

}  // namespace

void Node::AccumulateGrad(const Matrix& g) { AccumulateGradExpr(g); }

Tensor::Tensor(Matrix value, bool requires_grad)
    : node_(std::make_shared<Node>()) {
  node_->value = std::move(value);
  node_->requires_grad = requires_grad;
}

Tensor Tensor::Scalar(double v) {
  Matrix m(1, 1);
  m(0, 0) = v;
  return Tensor(std::move(m));
}

Tensor Tensor::Zeros(Eigen::Index rows, Eigen::Index cols) {
  return Tensor(Matrix::Zero(rows, cols));
}

Matrix Tensor::grad() const {
  if (node_->grad.size() == 0) {
    return Matrix::Zero(rows(), cols());
  }
  return node_->grad;
}

void Tensor::ZeroGrad() { node_->grad.resize(0, 0); }

double Tensor::item() const {
  if (rows() != 1 || cols() != 1) {
    throw Error(ErrorKind::kConfig, "item() on a non-scalar tensor");
  }
  return node_->value(0, 0);
}

void Tensor::Backward() const {
  if (!node_->requires_grad) {
    return;
  }
  std::vector<Node*> order;
  TopoSort(node_, &order);
  node_->AccumulateGrad(Matrix::Ones(rows(), cols()));
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* node = *it;
    if (node->backward && node->grad.size() != 0) {
      node->backward(*node);
    }
  }
  // Interior gradients are only needed during the sweep; leaves keep theirs.
  for (Node* node : order) {
    if (node->backward) {
      node->grad.resize(0, 0);
    }
  }
}

Tensor Tensor::FromOp(Matrix value, std::vector<Tensor> parents,
                      std::function<void(Node&)> backward) {
  Tensor out(std::move(value));
  if (!grad_enabled) {
    return out;
  }
  bool any = false;
  for (const auto& p : parents) {
    any = any || p.requires_grad();
  }
  if (!any) {
    return out;
  }
  out.node_->requires_grad = true;
  out.node_->parents.reserve(parents.size());
  for (auto& p : parents) {
    out.node_->parents.push_back(p.node_);
  }
  out.node_->backward = std::move(backward);
  return out;
}

NoGradGuard::NoGradGuard() : previous_(grad_enabled) { grad_enabled = false; }
NoGradGuard::~NoGradGuard() { grad_enabled = previous_; }

bool GradEnabled() { return grad_enabled; }

}  // namespace basetts::nn
