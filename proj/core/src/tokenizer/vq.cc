#include "basetts/tokenizer/vq.h"

#include "basetts/error.h"
#include "basetts/nn/ops.h"

namespace basetts::tokenizer {

using nn::Matrix;
using nn::Tensor;

std::vector<int64_t> NearestCodes(const Matrix& vectors, const Matrix& entries) {
  if (vectors.cols() != entries.cols()) {
    throw Error(ErrorKind::kConfig, "vq: vector dim " +
                                        std::to_string(vectors.cols()) +
                                        " != codebook dim " +
                                        std::to_string(entries.cols()));
  }
  if (entries.rows() == 0) throw Error(ErrorKind::kConfig, "vq: empty codebook");
  const Eigen::VectorXd entry_sq = entries.rowwise().squaredNorm();
  const Matrix cross = vectors * entries.transpose();
  std::vector<int64_t> codes(vectors.rows());
  for (Eigen::Index i = 0; i < vectors.rows(); ++i) {
    Eigen::Index best;
    (entry_sq.transpose() - 2.0 * cross.row(i)).minCoeff(&best);
    codes[i] = best;
  }
  return codes;
}

VqOutput VqQuantize(const Tensor& vectors, const Matrix& entries) {
  VqOutput out;
  out.codes = NearestCodes(vectors.value(), entries);
  Matrix q(vectors.rows(), vectors.cols());
  for (Eigen::Index i = 0; i < q.rows(); ++i) q.row(i) = entries.row(out.codes[i]);
  out.commitment = nn::Scale(nn::Sum(nn::Square(nn::Sub(vectors, Tensor(q)))),
                             1.0 / std::max<Eigen::Index>(1, q.rows()));
  out.quantized = nn::StraightThrough(vectors, q);
  return out;
}

VectorQuantizer::VectorQuantizer(const VqConfig& config, nn::Rng& rng)
    : config_(config) {
  if (config.codebook_size < 2 || config.dim < 1 || config.decay <= 0.0 ||
      config.decay >= 1.0) {
    throw Error(ErrorKind::kConfig, "vq: invalid codebook configuration");
  }
  entries_ = nn::RandomNormal(config.codebook_size, config.dim, 1.0, rng);
  ema_count_ = Matrix::Zero(config.codebook_size, 1);
  ema_sum_ = Matrix::Zero(config.codebook_size, config.dim);
  unused_steps_.assign(config.codebook_size, 0);
}

VqOutput VectorQuantizer::Quantize(const Tensor& vectors) const {
  return VqQuantize(vectors, entries_);
}

void VectorQuantizer::Update(const Matrix& vectors,
                             std::span<const int64_t> codes, nn::Rng& rng) {
  const int k = config_.codebook_size;
  if (vectors.rows() == 0) return;
  if (static_cast<Eigen::Index>(codes.size()) != vectors.rows()) {
    throw Error(ErrorKind::kData, "vq update: code count mismatch");
  }
  std::uniform_int_distribution<Eigen::Index> pick(0, vectors.rows() - 1);
  if (!initialized_) {
    // Seed every entry from the data so the first assignments are sane.
    std::normal_distribution<double> jitter(0.0, 1e-3);
    for (int j = 0; j < k; ++j) {
      entries_.row(j) = vectors.row(pick(rng));
      for (int c = 0; c < config_.dim; ++c) entries_(j, c) += jitter(rng);
    }
    ema_sum_ = entries_;
    ema_count_.setOnes();
    initialized_ = true;
    return;
  }
  Matrix count = Matrix::Zero(k, 1);
  Matrix sum = Matrix::Zero(k, config_.dim);
  for (size_t i = 0; i < codes.size(); ++i) {
    count(codes[i], 0) += 1.0;
    sum.row(codes[i]) += vectors.row(static_cast<Eigen::Index>(i));
  }
  const double d = config_.decay;
  ema_count_ = d * ema_count_ + (1.0 - d) * count;
  ema_sum_ = d * ema_sum_ + (1.0 - d) * sum;
  const double total = ema_count_.sum();
  for (int j = 0; j < k; ++j) {
    const double smoothed = (ema_count_(j, 0) + config_.epsilon) /
                            (total + k * config_.epsilon) * total;
    entries_.row(j) = ema_sum_.row(j) / smoothed;
    unused_steps_[j] = count(j, 0) > 0 ? 0 : unused_steps_[j] + 1;
    if (unused_steps_[j] >= config_.dead_code_steps) {
      entries_.row(j) = vectors.row(pick(rng));
      ema_sum_.row(j) = entries_.row(j);
      ema_count_(j, 0) = 1.0;
      unused_steps_[j] = 0;
      ++reseeded_total_;
    }
  }
}

void VectorQuantizer::Save(nn::Checkpoint& ck, const std::string& prefix) const {
  ck.AddMatrix(prefix + ".entries", entries_);
  ck.AddMatrix(prefix + ".ema_count", ema_count_);
  ck.AddMatrix(prefix + ".ema_sum", ema_sum_);
}

void VectorQuantizer::Restore(const nn::Checkpoint& ck,
                              const std::string& prefix) {
  Matrix e = ck.GetMatrix(prefix + ".entries");
  if (e.rows() != config_.codebook_size || e.cols() != config_.dim) {
    throw Error(ErrorKind::kConfig, "vq restore: codebook shape mismatch");
  }
  entries_ = std::move(e);
  ema_count_ = ck.GetMatrix(prefix + ".ema_count");
  ema_sum_ = ck.GetMatrix(prefix + ".ema_sum");
  initialized_ = true;
}

}  // namespace basetts::tokenizer
