#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "basetts/audio/audio.h"
#include "basetts/nn/tensor.h"

namespace basetts::tokenizer {

inline constexpr int kSslHop = 480;  // 20 ms at 24 kHz

// Frame-level speech features at 50 frames/s: ceil(samples / 480) rows.
class SslFeatureProvider {
 public:
  virtual ~SslFeatureProvider() = default;
  virtual nn::Matrix Features(const audio::Waveform& w) const = 0;
  virtual int dim() const = 0;
  virtual nlohmann::json ToJson() const = 0;
};

// Four strided convolutions (8 * 6 * 5 * 2 = 480) with fixed random weights:
// a random filterbank whose squared outputs are pooled by two depthwise
// layers with positive taps, then log-compressed and mixed by a dense layer.
class RandomConvProvider : public SslFeatureProvider {
 public:
  struct Config {
    uint64_t seed = 1234;
    int filters = 48;
    int dim = 64;
    std::vector<int> kernels = {64, 12, 10, 4};
  };

  explicit RandomConvProvider(const Config& config);
  nn::Matrix Features(const audio::Waveform& w) const override;
  int dim() const override { return config_.dim; }
  nlohmann::json ToJson() const override;

 private:
  Config config_;
  std::vector<nn::Matrix> weights_;
  std::vector<nn::Matrix> biases_;
};

// {"type": "random_conv", "seed": ..., "filters": ..., "dim": ...,
//  "kernels": [...]}.
std::unique_ptr<SslFeatureProvider> MakeFeatureProvider(const nlohmann::json& spec);

}  // namespace basetts::tokenizer
