#pragma once

#include <filesystem>
#include <vector>

#include <nlohmann/json.hpp>

#include "basetts/audio/audio.h"
#include "basetts/nn/tensor.h"

namespace basetts::audio {

// Analysis parameters. Defaults mirror core/data/mel_config.json: 80 bands,
// hop 480 (50 frames/s at 24 kHz, one frame per 20 ms), window 1024.
struct MelConfig {
  int sample_rate = kSampleRate;
  int num_mels = 80;
  int hop = 480;
  int win = 1024;
  double fmin = 0.0;
  double fmax = 12000.0;
  double log_floor = 1e-5;

  double frame_rate() const { return static_cast<double>(sample_rate) / hop; }
  // Value emitted for a band with no energy: ln(log_floor).
  double floor_value() const;

  static MelConfig FromJson(const nlohmann::json& j);
  static MelConfig FromFile(const std::filesystem::path& path);
  nlohmann::json ToJson() const;
};

struct MelSpectrogram {
  nn::Matrix frames;  // [num_frames x num_mels], natural-log magnitudes
  int num_mels = 0;
  int hop = 0;
  double frame_rate = 0.0;

  long num_frames() const { return static_cast<long>(frames.rows()); }
};

// Triangular filters on the HTK mel scale, Slaney area normalization.
class MelFilterbank {
 public:
  explicit MelFilterbank(const MelConfig& config);

  // [num_bins x num_mels], num_bins = win/2 + 1.
  const nn::Matrix& weights() const { return weights_; }
  double center_hz(int band) const { return centers_hz_[band]; }

 private:
  nn::Matrix weights_;
  std::vector<double> centers_hz_;
};

double HzToMel(double hz);
double MelToHz(double mel);

// Number of frames for `num_samples` samples: ceil(num_samples / hop).
long NumFrames(size_t num_samples, int hop);

// Frame t is a Hann-windowed span of `win` samples centred on the middle of
// hop interval [t*hop, (t+1)*hop); out-of-range samples read as zero.
MelSpectrogram ComputeMel(std::span<const double> samples,
                          const MelConfig& config = {});
MelSpectrogram ComputeMel(const Waveform& w, const MelConfig& config = {});

// Differentiable log-mel of a [N x 1] waveform tensor using DFT matrices,
// numerically equivalent to ComputeMel. Used inside training losses.
class MelTransform {
 public:
  explicit MelTransform(const MelConfig& config);
  nn::Tensor Forward(const nn::Tensor& waveform) const;
  const MelConfig& config() const { return config_; }

 private:
  MelConfig config_;
  nn::Tensor cos_basis_;  // [win x bins], window folded in
  nn::Tensor sin_basis_;
  nn::Tensor filters_;    // [bins x mels]
};

}  // namespace basetts::audio
