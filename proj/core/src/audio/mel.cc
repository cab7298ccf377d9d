#include "basetts/audio/mel.h"

#include <fftw3.h>

#include <cmath>
#include <fstream>
#include <mutex>

#include "basetts/error.h"
#include "basetts/nn/ops.h"

namespace basetts::audio {
namespace {

// FFTW planning is not thread-safe; execution on fresh arrays is.
std::mutex& PlannerMutex() {
  static std::mutex m;
  return m;
}

std::vector<double> HannWindow(int win) {
  std::vector<double> w(win);
  for (int i = 0; i < win; ++i) {
    w[i] = 0.5 - 0.5 * std::cos(2.0 * M_PI * i / win);
  }
  return w;
}

long FrameOffset(const MelConfig& c) { return c.hop / 2 - c.win / 2; }

void Validate(const MelConfig& c) {
  if (c.hop <= 0 || c.win <= 0 || c.num_mels <= 0 || c.win % 2 != 0) {
    throw Error(ErrorKind::kConfig, "mel: hop, win, num_mels must be positive "
                                    "and win even");
  }
  if (c.fmax <= c.fmin || c.fmax > c.sample_rate / 2.0) {
    throw Error(ErrorKind::kConfig, "mel: need fmin < fmax <= Nyquist");
  }
}

}  // namespace

double MelConfig::floor_value() const { return std::log(log_floor); }

MelConfig MelConfig::FromJson(const nlohmann::json& j) {
  MelConfig c;
  c.sample_rate = j.value("sample_rate", c.sample_rate);
  c.num_mels = j.value("num_mels", c.num_mels);
  c.hop = j.value("hop", c.hop);
  c.win = j.value("win", c.win);
  c.fmin = j.value("fmin", c.fmin);
  c.fmax = j.value("fmax", c.fmax);
  c.log_floor = j.value("log_floor", c.log_floor);
  Validate(c);
  return c;
}

MelConfig MelConfig::FromFile(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::kIo, "cannot read " + path.string());
  return FromJson(nlohmann::json::parse(in));
}

nlohmann::json MelConfig::ToJson() const {
  return {{"sample_rate", sample_rate}, {"num_mels", num_mels}, {"hop", hop},
          {"win", win},                 {"fmin", fmin},         {"fmax", fmax},
          {"log_floor", log_floor}};
}

double HzToMel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
double MelToHz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

MelFilterbank::MelFilterbank(const MelConfig& c) {
  Validate(c);
  const int bins = c.win / 2 + 1;
  const double lo = HzToMel(c.fmin);
  const double hi = HzToMel(c.fmax);
  std::vector<double> edges(c.num_mels + 2);
  for (int i = 0; i < c.num_mels + 2; ++i) {
    edges[i] = MelToHz(lo + (hi - lo) * i / (c.num_mels + 1));
  }
  weights_ = nn::Matrix::Zero(bins, c.num_mels);
  centers_hz_.resize(c.num_mels);
  for (int m = 0; m < c.num_mels; ++m) {
    const double left = edges[m];
    const double center = edges[m + 1];
    const double right = edges[m + 2];
    centers_hz_[m] = center;
    const double norm = 2.0 / (right - left);
    for (int b = 0; b < bins; ++b) {
      const double f = static_cast<double>(b) * c.sample_rate / c.win;
      double w = 0.0;
      if (f > left && f <= center) {
        w = (f - left) / (center - left);
      } else if (f > center && f < right) {
        w = (right - f) / (right - center);
      }
      weights_(b, m) = w * norm;
    }
  }
}

long NumFrames(size_t num_samples, int hop) {
  return static_cast<long>((num_samples + hop - 1) / hop);
}

MelSpectrogram ComputeMel(std::span<const double> samples,
                          const MelConfig& config) {
  Validate(config);
  if (samples.empty()) {
    throw Error(ErrorKind::kEmptyInput, "mel spectrogram of empty waveform");
  }
  const int win = config.win;
  const int bins = win / 2 + 1;
  const long frames = NumFrames(samples.size(), config.hop);
  const long offset = FrameOffset(config);
  const auto window = HannWindow(win);
  MelFilterbank fb(config);

  double* in = fftw_alloc_real(win);
  fftw_complex* out = fftw_alloc_complex(bins);
  fftw_plan plan;
  {
    std::lock_guard<std::mutex> lock(PlannerMutex());
    plan = fftw_plan_dft_r2c_1d(win, in, out, FFTW_ESTIMATE);
  }
  nn::Matrix mag(frames, bins);
  const long n = static_cast<long>(samples.size());
  for (long t = 0; t < frames; ++t) {
    const long start = t * config.hop + offset;
    for (int k = 0; k < win; ++k) {
      const long idx = start + k;
      in[k] = (idx >= 0 && idx < n) ? samples[idx] * window[k] : 0.0;
    }
    fftw_execute(plan);
    for (int b = 0; b < bins; ++b) {
      mag(t, b) = std::sqrt(out[b][0] * out[b][0] + out[b][1] * out[b][1]);
    }
  }
  {
    std::lock_guard<std::mutex> lock(PlannerMutex());
    fftw_destroy_plan(plan);
  }
  fftw_free(in);
  fftw_free(out);

  MelSpectrogram mel;
  mel.frames = (mag * fb.weights())
                   .array()
                   .max(config.log_floor)
                   .log()
                   .matrix();
  mel.num_mels = config.num_mels;
  mel.hop = config.hop;
  mel.frame_rate = config.frame_rate();
  return mel;
}

MelSpectrogram ComputeMel(const Waveform& w, const MelConfig& config) {
  return ComputeMel(ToDouble(w), config);
}

MelTransform::MelTransform(const MelConfig& config) : config_(config) {
  Validate(config);
  const int win = config.win;
  const int bins = win / 2 + 1;
  const auto window = HannWindow(win);
  nn::Matrix cos_b(win, bins);
  nn::Matrix sin_b(win, bins);
  for (int k = 0; k < win; ++k) {
    for (int b = 0; b < bins; ++b) {
      const double phase = 2.0 * M_PI * static_cast<double>(k) * b / win;
      cos_b(k, b) = window[k] * std::cos(phase);
      sin_b(k, b) = -window[k] * std::sin(phase);
    }
  }
  cos_basis_ = nn::Tensor(std::move(cos_b));
  sin_basis_ = nn::Tensor(std::move(sin_b));
  filters_ = nn::Tensor(MelFilterbank(config).weights());
}

nn::Tensor MelTransform::Forward(const nn::Tensor& waveform) const {
  if (waveform.rows() == 0) {
    throw Error(ErrorKind::kEmptyInput, "mel transform of empty waveform");
  }
  const long frames = NumFrames(static_cast<size_t>(waveform.rows()), config_.hop);
  nn::Tensor framed = nn::FrameRows(waveform, frames, config_.win, config_.hop,
                                    FrameOffset(config_));
  nn::Tensor re = nn::MatMul(framed, cos_basis_);
  nn::Tensor im = nn::MatMul(framed, sin_basis_);
  nn::Tensor mag = nn::SqrtEps(nn::Add(nn::Square(re), nn::Square(im)), 1e-14);
  return nn::LogClamped(nn::MatMul(mag, filters_), config_.log_floor);
}

}  // namespace basetts::audio
