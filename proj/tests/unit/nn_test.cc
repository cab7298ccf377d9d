#include <filesystem>
#include <functional>
#include <random>
#include <vector>

#include "basetts/error.h"
#include "basetts/nn/checkpoint.h"
#include "basetts/nn/module.h"
#include "basetts/nn/ops.h"
#include "basetts/nn/optim.h"
#include "grad_check.h"
#include "gtest/gtest.h"

namespace basetts::nn {
namespace {

using testing::FiniteDifference;
using testing::RelativeError;

Tensor Param(Eigen::Index r, Eigen::Index c, Rng& rng) {
  return Tensor(RandomNormal(r, c, 1.0, rng), true);
}

// Checks every entry of every input against central differences.
void ExpectGradientsMatch(const std::function<Tensor()>& build,
                          std::vector<Tensor> inputs, double tol = 1e-5,
                          double floor = 1e-6) {
  for (auto& in : inputs) in.ZeroGrad();
  Tensor out = build();
  out.Backward();
  auto scalar = [&] { return build().item(); };
  for (auto& in : inputs) {
    const Matrix analytic = in.grad();
    for (Eigen::Index r = 0; r < in.rows(); ++r) {
      for (Eigen::Index c = 0; c < in.cols(); ++c) {
        const double numeric = FiniteDifference(scalar, in, r, c);
        EXPECT_LT(RelativeError(analytic(r, c), numeric, floor), tol)
            << "entry (" << r << "," << c << ") analytic " << analytic(r, c)
            << " numeric " << numeric;
      }
    }
  }
}

TEST(Ops, MatMulAndBroadcastGradients) {
  Rng rng(1);
  Tensor a = Param(3, 4, rng), b = Param(4, 2, rng), row = Param(1, 2, rng);
  ExpectGradientsMatch(
      [&] { return Sum(Square(AddRow(MatMul(a, b), row))); }, {a, b, row});
}

TEST(Ops, PointwiseGradients) {
  Rng rng(2);
  Tensor x = Param(3, 3, rng);
  ExpectGradientsMatch([&] { return Sum(Gelu(x)); }, {x});
  ExpectGradientsMatch([&] { return Sum(Tanh(x)); }, {x});
  ExpectGradientsMatch([&] { return Sum(Sigmoid(x)); }, {x});
  ExpectGradientsMatch([&] { return Mean(Exp(x)); }, {x});
  ExpectGradientsMatch([&] { return Sum(LeakyRelu(x, 0.1)); }, {x});
}

TEST(Ops, SoftmaxFamilyGradients) {
  Rng rng(3);
  Tensor x = Param(4, 5, rng);
  Tensor w = Param(4, 5, rng);
  ExpectGradientsMatch([&] { return Sum(Mul(SoftmaxRows(x), w)); }, {x});
  ExpectGradientsMatch([&] { return Sum(Mul(LogSoftmaxRows(x), w)); }, {x});
  Tensor sq = Param(4, 4, rng);
  Tensor wsq = Param(4, 4, rng);
  ExpectGradientsMatch([&] { return Sum(Mul(CausalSoftmaxRows(sq), wsq)); },
                       {sq});
  std::vector<int64_t> targets = {0, 4, 2, 1};
  ExpectGradientsMatch([&] { return CrossEntropy(x, targets); }, {x});
}

TEST(Ops, NormalizationGradients) {
  Rng rng(4);
  Tensor x = Param(3, 6, rng);
  Tensor gain = Param(1, 6, rng), bias = Param(1, 6, rng);
  Tensor w = Param(3, 6, rng);
  ExpectGradientsMatch(
      [&] { return Sum(Mul(LayerNormRows(x, gain, bias), w)); },
      {x, gain, bias});
  ExpectGradientsMatch([&] { return Sum(Mul(L2NormalizeRows(x), w)); }, {x});
}

TEST(Ops, ShapeOpGradients) {
  Rng rng(5);
  Tensor x = Param(6, 3, rng);
  Tensor y = Param(2, 3, rng);
  Tensor w = Param(8, 3, rng);
  ExpectGradientsMatch([&] { return Sum(Mul(ConcatRows({x, y}), w)); },
                       {x, y});
  ExpectGradientsMatch(
      [&] { return Sum(Square(StrideRows(RepeatRows(x, 2), 1, 3))); }, {x});
  ExpectGradientsMatch([&] { return Sum(Square(AvgPoolRows(x, 2))); }, {x});
  ExpectGradientsMatch([&] { return Sum(Square(Reshape(x, 9, 2))); }, {x});
  std::vector<int64_t> ids = {5, 0, 5, 2};
  ExpectGradientsMatch([&] { return Sum(Square(GatherRows(x, ids))); }, {x});
}

TEST(Ops, CausalConvGradientsAndCausality) {
  Rng rng(6);
  Tensor x = Param(9, 2, rng);
  Tensor w = Param(3 * 2, 4, rng);
  Tensor b = Param(1, 4, rng);
  for (int stride : {1, 2, 3}) {
    ExpectGradientsMatch(
        [&] { return Sum(Square(CausalConv1d(x, w, b, 3, 2, stride))); },
        {x, w, b});
  }
  Tensor y0 = CausalConv1d(x, w, b, 3, 2, 1);
  Matrix perturbed = x.value();
  perturbed.row(6).array() += 10.0;
  Tensor y1 = CausalConv1d(Tensor(perturbed), w, b, 3, 2, 1);
  EXPECT_EQ(y0.value().topRows(6), y1.value().topRows(6));
  EXPECT_NE(y0.value().row(6), y1.value().row(6));
}

TEST(Ops, FrameRowsGradient) {
  Rng rng(7);
  Tensor x = Param(10, 1, rng);
  ExpectGradientsMatch([&] { return Sum(Square(FrameRows(x, 4, 4, 3, -1))); },
                       {x});
}

TEST(Ops, GradientReversalFlipsSignAndScales) {
  Rng rng(8);
  Tensor x = Param(2, 3, rng);
  Sum(Square(x)).Backward();
  const Matrix plain = x.grad();
  x.ZeroGrad();
  Tensor r1 = GradientReversal(x, 1.0);
  EXPECT_EQ(r1.value(), x.value());
  Sum(Square(r1)).Backward();
  EXPECT_TRUE(x.grad().isApprox(-plain));
  x.ZeroGrad();
  Sum(Square(GradientReversal(x, 2.0))).Backward();
  EXPECT_TRUE(x.grad().isApprox(-2.0 * plain));
}

TEST(Ops, NoGradGuardBuildsLeaves) {
  Rng rng(9);
  Tensor x = Param(2, 2, rng);
  NoGradGuard guard;
  Tensor y = Square(x);
  EXPECT_FALSE(y.requires_grad());
}

TEST(Ops, ShapeErrorsAreConfigErrors) {
  Tensor a = Tensor::Zeros(2, 3);
  Tensor b = Tensor::Zeros(2, 2);
  try {
    MatMul(a, b);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kConfig);
  }
}

TEST(Layers, TransformerBlockGradients) {
  Rng rng(10);
  TransformerBlock block(8, 2, 16, rng);
  Tensor x = Param(5, 8, rng);
  auto params = block.Parameters();
  std::vector<Tensor> inputs = {x};
  for (auto& [name, t] : params) inputs.push_back(t);
  // Key biases have an exactly zero gradient; central differences leave
  // roundoff of order 1e-10 there.
  ExpectGradientsMatch([&] { return Mean(Square(block.Forward(x, true))); },
                       inputs, 1e-4, 1e-5);
}

TEST(Layers, CopyParametersProducesIdenticalOutputs) {
  Rng rng(11);
  TransformerBlock a(8, 2, 16, rng);
  TransformerBlock b(8, 2, 16, rng);
  b.CopyParametersFrom(a);
  Tensor x(RandomNormal(4, 8, 1.0, rng));
  EXPECT_EQ(a.Forward(x, false).value(), b.Forward(x, false).value());
}

TEST(Optim, AdamMinimizesQuadratic) {
  Rng rng(12);
  Linear lin(3, 1, rng);
  AdamW opt(lin.Parameters(), {});
  Tensor x(RandomNormal(16, 3, 1.0, rng));
  Matrix target = x.value() * Matrix::Constant(3, 1, 0.5);
  double first = 0.0, last = 0.0;
  for (int step = 0; step < 300; ++step) {
    Tensor loss = Mean(Square(Sub(lin.Forward(x), Tensor(target))));
    if (step == 0) first = loss.item();
    last = loss.item();
    loss.Backward();
    opt.Step(0.05);
  }
  EXPECT_LT(last, first * 1e-3);
}

TEST(Checkpoint, RoundTripsParametersAndConfig) {
  Rng rng(13);
  TransformerBlock a(8, 2, 16, rng);
  Checkpoint ck("block", {{"dim", 8}});
  ck.AddModule("model", a);
  const auto path = std::filesystem::temp_directory_path() / "basetts_ck.bin";
  ck.Save(path);
  Checkpoint loaded = Checkpoint::Load(path);
  EXPECT_EQ(loaded.kind(), "block");
  EXPECT_EQ(loaded.config().at("dim"), 8);
  TransformerBlock b(8, 2, 16, rng);
  loaded.RestoreModule("model", b);
  Tensor x(RandomNormal(3, 8, 1.0, rng));
  EXPECT_EQ(a.Forward(x, true).value(), b.Forward(x, true).value());
  std::filesystem::remove(path);
}

TEST(Checkpoint, MissingFileIsDependencyError) {
  try {
    Checkpoint::Load("/nonexistent/ck.bin");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kDependency);
  }
}

}  // namespace
}  // namespace basetts::nn
