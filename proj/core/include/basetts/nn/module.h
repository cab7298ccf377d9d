#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "basetts/nn/tensor.h"

namespace basetts::nn {

using Rng = std::mt19937_64;

using NamedTensor = std::pair<std::string, Tensor>;

// Owner of trainable parameters and child modules. Children register by
// address, so modules are neither copyable nor movable; hold them by value
// inside their parent or by unique_ptr.
class Module {
 public:
  Module() = default;
  virtual ~Module() = default;
  Module(const Module&) = delete;
  Module& operator=(const Module&) = delete;

  // Parameters of this module and all descendants, names joined with '.'.
  std::vector<NamedTensor> Parameters() const;
  size_t ParameterCount() const;
  void ZeroGrad();
  // Copies parameter values from a structurally identical module.
  void CopyParametersFrom(const Module& other);
  // A frozen module still propagates gradients to its inputs.
  void SetRequiresGrad(bool requires_grad);

 protected:
  Tensor RegisterParameter(std::string name, Matrix init);
  void RegisterModule(std::string name, Module* child);

 private:
  void Collect(const std::string& prefix, std::vector<NamedTensor>* out) const;

  std::vector<NamedTensor> params_;
  std::vector<std::pair<std::string, Module*>> children_;
};

Matrix RandomNormal(Eigen::Index rows, Eigen::Index cols, double stddev,
                    Rng& rng);
Matrix RandomUniform(Eigen::Index rows, Eigen::Index cols, double bound,
                     Rng& rng);

class Linear : public Module {
 public:
  Linear(int in, int out, Rng& rng, bool bias = true);
  Tensor Forward(const Tensor& x) const;
  int in_features() const { return in_; }
  int out_features() const { return out_; }
  const Tensor& weight() const { return weight_; }

 private:
  int in_;
  int out_;
  Tensor weight_;
  Tensor bias_;
};

class Embedding : public Module {
 public:
  Embedding(int count, int dim, Rng& rng, double stddev = 0.02);
  Tensor Forward(std::span<const int64_t> ids) const;
  int count() const { return static_cast<int>(table_.rows()); }

 private:
  Tensor table_;
};

class LayerNorm : public Module {
 public:
  explicit LayerNorm(int dim);
  Tensor Forward(const Tensor& x) const;

 private:
  Tensor gain_;
  Tensor bias_;
};

class CausalConv : public Module {
 public:
  CausalConv(int in, int out, int kernel, Rng& rng, int dilation = 1,
             int stride = 1);
  Tensor Forward(const Tensor& x) const;
  // Input rows of history needed to reproduce one output row exactly.
  int receptive_field() const { return (kernel_ - 1) * dilation_ + 1; }
  int stride() const { return stride_; }

 private:
  int kernel_;
  int dilation_;
  int stride_;
  Tensor weight_;
  Tensor bias_;
};

// Two causal convolutions with a LeakyReLU between them and a skip path.
class ResidualConvBlock : public Module {
 public:
  ResidualConvBlock(int channels, int kernel, int dilation, Rng& rng);
  Tensor Forward(const Tensor& x) const;
  int receptive_field() const;

 private:
  CausalConv conv1_;
  CausalConv conv2_;
};

class MultiHeadAttention : public Module {
 public:
  MultiHeadAttention(int dim, int heads, Rng& rng);
  // Causal when `causal` is set; otherwise every position sees all others.
  Tensor Forward(const Tensor& x, bool causal) const;

 private:
  int dim_;
  int heads_;
  Linear qkv_;
  Linear proj_;
};

// Pre-norm GPT-2 style block.
class TransformerBlock : public Module {
 public:
  TransformerBlock(int dim, int heads, int ff_dim, Rng& rng);
  Tensor Forward(const Tensor& x, bool causal) const;

 private:
  LayerNorm ln1_;
  MultiHeadAttention attn_;
  LayerNorm ln2_;
  Linear ff1_;
  Linear ff2_;
};

}  // namespace basetts::nn
