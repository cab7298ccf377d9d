#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "basetts/nn/tensor.h"

namespace basetts::nn {

// Linear algebra.
Tensor MatMul(const Tensor& a, const Tensor& b);
Tensor Transpose(const Tensor& x);

// Elementwise arithmetic. `AddRow`/`MulRow` broadcast a [1 x C] row over all
// rows of x; `MulCol` broadcasts a [T x 1] column over all columns.
Tensor Add(const Tensor& a, const Tensor& b);
Tensor Sub(const Tensor& a, const Tensor& b);
Tensor Mul(const Tensor& a, const Tensor& b);
Tensor AddRow(const Tensor& x, const Tensor& row);
Tensor MulRow(const Tensor& x, const Tensor& row);
Tensor MulCol(const Tensor& x, const Tensor& col);
Tensor Scale(const Tensor& x, double s);
Tensor AddScalar(const Tensor& x, double s);

// Pointwise nonlinearities.
Tensor Relu(const Tensor& x);
Tensor LeakyRelu(const Tensor& x, double slope);
Tensor Gelu(const Tensor& x);
Tensor Tanh(const Tensor& x);
Tensor Sigmoid(const Tensor& x);
Tensor Exp(const Tensor& x);
Tensor Log(const Tensor& x);
Tensor Abs(const Tensor& x);
Tensor Square(const Tensor& x);
Tensor SqrtEps(const Tensor& x, double eps);  // sqrt(x + eps)
// log(max(x, floor)); gradient is zero where the floor is active.
Tensor LogClamped(const Tensor& x, double floor);

// Reductions.
Tensor Sum(const Tensor& x);
Tensor Mean(const Tensor& x);
Tensor MeanRows(const Tensor& x);  // [T x C] -> [1 x C]
Tensor SumCols(const Tensor& x);   // [T x C] -> [T x 1]

// Row-wise normalizations.
Tensor SoftmaxRows(const Tensor& x);
Tensor LogSoftmaxRows(const Tensor& x);
// Softmax with entries (i, j) for j > i + offset excluded (causal attention).
Tensor CausalSoftmaxRows(const Tensor& x, Eigen::Index offset = 0);
Tensor LayerNormRows(const Tensor& x, const Tensor& gain, const Tensor& bias,
                     double eps = 1e-5);
Tensor L2NormalizeRows(const Tensor& x, double eps = 1e-12);

// Mean negative log-likelihood of `targets` under row-wise softmax(logits).
Tensor CrossEntropy(const Tensor& logits, std::span<const int64_t> targets);

// Shape manipulation.
Tensor SliceRows(const Tensor& x, Eigen::Index start, Eigen::Index count);
Tensor SliceCols(const Tensor& x, Eigen::Index start, Eigen::Index count);
Tensor ConcatRows(const std::vector<Tensor>& parts);
Tensor ConcatCols(const std::vector<Tensor>& parts);
Tensor RepeatRows(const Tensor& x, Eigen::Index factor);
Tensor BroadcastRows(const Tensor& row, Eigen::Index rows);
Tensor StrideRows(const Tensor& x, Eigen::Index offset, Eigen::Index step);
Tensor GatherRows(const Tensor& table, std::span<const int64_t> ids);
Tensor AvgPoolRows(const Tensor& x, Eigen::Index factor);
// Framing of a [N x 1] signal: row t holds x[t*hop + offset + k] for
// k in [0, win), zero outside the signal.
Tensor FrameRows(const Tensor& x, Eigen::Index num_frames, Eigen::Index win,
                 Eigen::Index hop, Eigen::Index offset);
// Reinterprets a row-major [T x C] block as [T*C/cols x cols].
Tensor Reshape(const Tensor& x, Eigen::Index rows, Eigen::Index cols);

// Causal 1-D convolution over rows. `weight` is [kernel*in_channels x
// out_channels] with tap-major layout; the input is left-padded by
// (kernel-1)*dilation zeros so output row o only sees input rows <= o*stride.
// Output has ceil(T / stride) rows.
Tensor CausalConv1d(const Tensor& x, const Tensor& weight, const Tensor& bias,
                    int kernel, int dilation = 1, int stride = 1);

// Gradient plumbing.
Tensor Detach(const Tensor& x);
// Identity forward; backward multiplies the incoming gradient by -lambda.
Tensor GradientReversal(const Tensor& x, double lambda);
// Forward value is `quantized`; backward passes the gradient to `x` as if
// the quantization were the identity.
Tensor StraightThrough(const Tensor& x, const Matrix& quantized);

}  // namespace basetts::nn
