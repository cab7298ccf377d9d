#include "basetts/nn/module.h"

#include <cmath>

#include "basetts/error.h"
#include "basetts/nn/ops.h"

namespace basetts::nn {

std::vector<NamedTensor> Module::Parameters() const {
  std::vector<NamedTensor> out;
  Collect("", &out);
  return out;
}

size_t Module::ParameterCount() const {
  size_t n = 0;
  for (const auto& [name, t] : Parameters()) n += t.value().size();
  return n;
}

void Module::ZeroGrad() {
  for (auto& [name, t] : Parameters()) t.ZeroGrad();
}

void Module::CopyParametersFrom(const Module& other) {
  auto mine = Parameters();
  auto theirs = other.Parameters();
  if (mine.size() != theirs.size()) {
    throw Error(ErrorKind::kConfig, "CopyParametersFrom: structure differs");
  }
  for (size_t i = 0; i < mine.size(); ++i) {
    if (mine[i].first != theirs[i].first ||
        mine[i].second.rows() != theirs[i].second.rows() ||
        mine[i].second.cols() != theirs[i].second.cols()) {
      throw Error(ErrorKind::kConfig,
                  "CopyParametersFrom: mismatch at " + mine[i].first);
    }
    mine[i].second.mutable_value() = theirs[i].second.value();
  }
}

void Module::SetRequiresGrad(bool requires_grad) {
  for (auto& [name, t] : Parameters()) t.node()->requires_grad = requires_grad;
}

Tensor Module::RegisterParameter(std::string name, Matrix init) {
  Tensor t(std::move(init), /*requires_grad=*/true);
  params_.emplace_back(std::move(name), t);
  return t;
}

void Module::RegisterModule(std::string name, Module* child) {
  children_.emplace_back(std::move(name), child);
}

void Module::Collect(const std::string& prefix,
                     std::vector<NamedTensor>* out) const {
  for (const auto& [name, t] : params_) out->emplace_back(prefix + name, t);
  for (const auto& [name, child] : children_) {
    child->Collect(prefix + name + ".", out);
  }
}

Matrix RandomNormal(Eigen::Index rows, Eigen::Index cols, double stddev,
                    Rng& rng) {
  std::normal_distribution<double> dist(0.0, stddev);
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = dist(rng);
  return m;
}

Matrix RandomUniform(Eigen::Index rows, Eigen::Index cols, double bound,
                     Rng& rng) {
  std::uniform_real_distribution<double> dist(-bound, bound);
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = dist(rng);
  return m;
}

Linear::Linear(int in, int out, Rng& rng, bool bias) : in_(in), out_(out) {
  weight_ = RegisterParameter("weight",
                              RandomUniform(in, out, 1.0 / std::sqrt(in), rng));
  if (bias) bias_ = RegisterParameter("bias", Matrix::Zero(1, out));
}

Tensor Linear::Forward(const Tensor& x) const {
  Tensor y = MatMul(x, weight_);
  return bias_.defined() ? AddRow(y, bias_) : y;
}

Embedding::Embedding(int count, int dim, Rng& rng, double stddev) {
  table_ = RegisterParameter("table", RandomNormal(count, dim, stddev, rng));
}

Tensor Embedding::Forward(std::span<const int64_t> ids) const {
  return GatherRows(table_, ids);
}

LayerNorm::LayerNorm(int dim) {
  gain_ = RegisterParameter("gain", Matrix::Ones(1, dim));
  bias_ = RegisterParameter("bias", Matrix::Zero(1, dim));
}

Tensor LayerNorm::Forward(const Tensor& x) const {
  return LayerNormRows(x, gain_, bias_);
}

CausalConv::CausalConv(int in, int out, int kernel, Rng& rng, int dilation,
                       int stride)
    : kernel_(kernel), dilation_(dilation), stride_(stride) {
  weight_ = RegisterParameter(
      "weight", RandomUniform(static_cast<Eigen::Index>(kernel) * in, out,
                              1.0 / std::sqrt(kernel * in), rng));
  bias_ = RegisterParameter("bias", Matrix::Zero(1, out));
}

Tensor CausalConv::Forward(const Tensor& x) const {
  return CausalConv1d(x, weight_, bias_, kernel_, dilation_, stride_);
}

ResidualConvBlock::ResidualConvBlock(int channels, int kernel, int dilation,
                                     Rng& rng)
    : conv1_(channels, channels, kernel, rng, dilation),
      conv2_(channels, channels, kernel, rng, 1) {
  RegisterModule("conv1", &conv1_);
  RegisterModule("conv2", &conv2_);
}

Tensor ResidualConvBlock::Forward(const Tensor& x) const {
  Tensor h = conv1_.Forward(LeakyRelu(x, 0.1));
  h = conv2_.Forward(LeakyRelu(h, 0.1));
  return Add(x, h);
}

int ResidualConvBlock::receptive_field() const {
  return conv1_.receptive_field() + conv2_.receptive_field() - 1;
}

MultiHeadAttention::MultiHeadAttention(int dim, int heads, Rng& rng)
    : dim_(dim), heads_(heads), qkv_(dim, 3 * dim, rng), proj_(dim, dim, rng) {
  if (heads < 1 || dim % heads != 0) {
    throw Error(ErrorKind::kConfig, "attention: dim " + std::to_string(dim) +
                                        " not divisible by heads " +
                                        std::to_string(heads));
  }
  RegisterModule("qkv", &qkv_);
  RegisterModule("proj", &proj_);
}

Tensor MultiHeadAttention::Forward(const Tensor& x, bool causal) const {
  const int head_dim = dim_ / heads_;
  const double scale = 1.0 / std::sqrt(static_cast<double>(head_dim));
  Tensor qkv = qkv_.Forward(x);
  std::vector<Tensor> outs;
  outs.reserve(heads_);
  for (int h = 0; h < heads_; ++h) {
    Tensor q = SliceCols(qkv, h * head_dim, head_dim);
    Tensor k = SliceCols(qkv, dim_ + h * head_dim, head_dim);
    Tensor v = SliceCols(qkv, 2 * dim_ + h * head_dim, head_dim);
    Tensor scores = Scale(MatMul(q, Transpose(k)), scale);
    Tensor attn = causal ? CausalSoftmaxRows(scores) : SoftmaxRows(scores);
    outs.push_back(MatMul(attn, v));
  }
  return proj_.Forward(heads_ == 1 ? outs[0] : ConcatCols(outs));
}

TransformerBlock::TransformerBlock(int dim, int heads, int ff_dim, Rng& rng)
    : ln1_(dim),
      attn_(dim, heads, rng),
      ln2_(dim),
      ff1_(dim, ff_dim, rng),
      ff2_(ff_dim, dim, rng) {
  RegisterModule("ln1", &ln1_);
  RegisterModule("attn", &attn_);
  RegisterModule("ln2", &ln2_);
  RegisterModule("ff1", &ff1_);
  RegisterModule("ff2", &ff2_);
}

Tensor TransformerBlock::Forward(const Tensor& x, bool causal) const {
  Tensor h = Add(x, attn_.Forward(ln1_.Forward(x), causal));
  return Add(h, ff2_.Forward(Gelu(ff1_.Forward(ln2_.Forward(h)))));
}

}  // namespace basetts::nn
