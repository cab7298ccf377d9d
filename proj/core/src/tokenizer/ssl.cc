#include "basetts/tokenizer/ssl.h"

#include <cmath>

#include "basetts/error.h"
#include "basetts/nn/module.h"
#include "basetts/nn/ops.h"

namespace basetts::tokenizer {
namespace {

constexpr int kStrides[4] = {8, 6, 5, 2};

// Dense [k*c x c] weight that only connects channel i to channel i.
nn::Matrix DepthwisePositive(int kernel, int channels, nn::Rng& rng) {
  std::uniform_real_distribution<double> tap(0.5, 1.5);
  nn::Matrix w = nn::Matrix::Zero(kernel * channels, channels);
  for (int k = 0; k < kernel; ++k) {
    for (int c = 0; c < channels; ++c) w(k * channels + c, c) = tap(rng) / kernel;
  }
  return w;
}

}  // namespace

RandomConvProvider::RandomConvProvider(const Config& config) : config_(config) {
  if (config.kernels.size() != 4 || config.filters < 1 || config.dim < 1) {
    throw Error(ErrorKind::kConfig, "random_conv provider needs 4 layers");
  }
  for (int k : config.kernels) {
    if (k < 1) throw Error(ErrorKind::kConfig, "random_conv provider: bad kernel");
  }
  nn::Rng rng(config.seed);
  const int f = config.filters;
  const auto& k = config.kernels;
  weights_.push_back(nn::RandomNormal(k[0], f, std::sqrt(1.0 / k[0]), rng));
  weights_.push_back(DepthwisePositive(k[1], f, rng));
  weights_.push_back(DepthwisePositive(k[2], f, rng));
  weights_.push_back(nn::RandomNormal(k[3] * f, config.dim, std::sqrt(1.0 / (k[3] * f)), rng));
  for (const auto& w : weights_) biases_.push_back(nn::Matrix::Zero(1, w.cols()));
}

nn::Matrix RandomConvProvider::Features(const audio::Waveform& w) const {
  if (w.size() == 0) {
    throw Error(ErrorKind::kEmptyInput, "feature provider: empty waveform");
  }
  nn::NoGradGuard no_grad;
  const auto samples = audio::ToDouble(w);
  nn::Matrix x(static_cast<Eigen::Index>(samples.size()), 1);
  for (size_t i = 0; i < samples.size(); ++i) x(static_cast<Eigen::Index>(i), 0) = samples[i];
  nn::Tensor h(std::move(x));
  for (int l = 0; l < 4; ++l) {
    h = nn::CausalConv1d(h, nn::Tensor(weights_[l]), nn::Tensor(biases_[l]),
                         config_.kernels[l], 1, kStrides[l]);
    if (l == 0) h = nn::Square(h);
    if (l == 2) h = nn::LogClamped(h, 1e-8);
  }
  return h.value();
}

nlohmann::json RandomConvProvider::ToJson() const {
  return {{"type", "random_conv"},
          {"seed", config_.seed},
          {"filters", config_.filters},
          {"dim", config_.dim},
          {"kernels", config_.kernels}};
}

std::unique_ptr<SslFeatureProvider> MakeFeatureProvider(const nlohmann::json& spec) {
  const nlohmann::json j = spec.is_null() ? nlohmann::json::object() : spec;
  const std::string type = j.value("type", "random_conv");
  if (type == "random_conv") {
    RandomConvProvider::Config c;
    c.seed = j.value("seed", c.seed);
    c.filters = j.value("filters", c.filters);
    c.dim = j.value("dim", c.dim);
    c.kernels = j.value("kernels", c.kernels);
    return std::make_unique<RandomConvProvider>(c);
  }
  throw Error(ErrorKind::kConfig, "unknown feature provider '" + type + "'");
}

}  // namespace basetts::tokenizer
