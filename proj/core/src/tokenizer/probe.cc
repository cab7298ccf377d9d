#include "basetts/tokenizer/probe.h"

#include <cmath>

#include "basetts/error.h"

namespace basetts::tokenizer {

using nn::Matrix;

namespace {

double Accuracy(const Matrix& x, std::span<const int> y, const Matrix& w,
                const Matrix& b) {
  if (x.rows() == 0) return 0.0;
  const Matrix logits = (x * w).rowwise() + b.row(0);
  int correct = 0;
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    Eigen::Index arg;
    logits.row(i).maxCoeff(&arg);
    correct += (arg == y[i]);
  }
  return static_cast<double>(correct) / x.rows();
}

}  // namespace

Matrix OneHot(std::span<const int64_t> codes, int num_codes) {
  Matrix m = Matrix::Zero(static_cast<Eigen::Index>(codes.size()), num_codes);
  for (size_t i = 0; i < codes.size(); ++i) {
    if (codes[i] < 0 || codes[i] >= num_codes) {
      throw Error(ErrorKind::kData, "one-hot: code out of range");
    }
    m(static_cast<Eigen::Index>(i), codes[i]) = 1.0;
  }
  return m;
}

ProbeResult LinearProbe(const Matrix& train_x, std::span<const int> train_y,
                        const Matrix& test_x, std::span<const int> test_y,
                        int num_classes, const ProbeConfig& config) {
  if (train_x.rows() == 0) throw Error(ErrorKind::kEmptyInput, "probe: no data");
  if (train_x.cols() != test_x.cols() ||
      static_cast<Eigen::Index>(train_y.size()) != train_x.rows() ||
      static_cast<Eigen::Index>(test_y.size()) != test_x.rows()) {
    throw Error(ErrorKind::kData, "probe: shape mismatch");
  }
  const Eigen::Index d = train_x.cols();
  const Eigen::RowVectorXd mean = train_x.colwise().mean();
  Eigen::RowVectorXd sd =
      ((train_x.rowwise() - mean).array().square().colwise().mean()).sqrt();
  for (Eigen::Index j = 0; j < d; ++j) {
    if (sd(j) < 1e-12) sd(j) = 1.0;
  }
  auto standardize = [&](const Matrix& x) -> Matrix {
    return ((x.rowwise() - mean).array().rowwise() / sd.array()).matrix();
  };
  const Matrix xs = standardize(train_x);
  const Matrix ts = standardize(test_x);
  Matrix onehot = Matrix::Zero(xs.rows(), num_classes);
  for (Eigen::Index i = 0; i < xs.rows(); ++i) {
    if (train_y[i] < 0 || train_y[i] >= num_classes) {
      throw Error(ErrorKind::kData, "probe: label out of range");
    }
    onehot(i, train_y[i]) = 1.0;
  }
  Matrix w = Matrix::Zero(d, num_classes);
  Matrix b = Matrix::Zero(1, num_classes);
  Matrix mw = w, vw = w, mb = b, vb = b;
  const double b1 = 0.9, b2 = 0.999, eps = 1e-8;
  const double n = static_cast<double>(xs.rows());
  for (int it = 1; it <= config.iterations; ++it) {
    Matrix logits = (xs * w).rowwise() + b.row(0);
    const Eigen::VectorXd max = logits.rowwise().maxCoeff();
    Matrix p = (logits.colwise() - max).array().exp().matrix();
    const Eigen::VectorXd sum = p.rowwise().sum();
    p = p.array().colwise() / sum.array();
    const Matrix delta = (p - onehot) / n;
    const Matrix gw = xs.transpose() * delta + config.l2 * w;
    const Matrix gb = delta.colwise().sum();
    mw = b1 * mw + (1 - b1) * gw;
    vw = b2 * vw + (1 - b2) * gw.cwiseProduct(gw);
    mb = b1 * mb + (1 - b1) * gb;
    vb = b2 * vb + (1 - b2) * gb.cwiseProduct(gb);
    const double c1 = 1.0 - std::pow(b1, it);
    const double c2 = 1.0 - std::pow(b2, it);
    w.array() -= config.learning_rate * (mw.array() / c1) /
                 ((vw.array() / c2).sqrt() + eps);
    b.array() -= config.learning_rate * (mb.array() / c1) /
                 ((vb.array() / c2).sqrt() + eps);
  }
  return {Accuracy(xs, train_y, w, b), Accuracy(ts, test_y, w, b)};
}

}  // namespace basetts::tokenizer
