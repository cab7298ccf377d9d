#include <cmath>
#include <complex>
#include <filesystem>
#include <random>
#include <string>

#include "basetts/audio/audio.h"
#include "basetts/audio/mel.h"
#include "basetts/error.h"
#include "basetts/nn/ops.h"
#include "gtest/gtest.h"

namespace basetts::audio {
namespace {

std::filesystem::path TempPath(const std::string& name) {
  return std::filesystem::temp_directory_path() / ("basetts_" + name);
}

std::vector<double> Tone(double hz, int rate, double seconds, double amp = 0.5) {
  std::vector<double> out(static_cast<size_t>(rate * seconds));
  for (size_t i = 0; i < out.size(); ++i) {
    out[i] = amp * std::sin(2.0 * M_PI * hz * i / rate);
  }
  return out;
}

// Writes raw PCM16 with an arbitrary rate/channel count.
void WritePcm16(const std::filesystem::path& path,
                const std::vector<std::vector<double>>& channels, int rate) {
  Waveform interleaved;
  interleaved.sample_rate = rate;
  interleaved.channels = static_cast<int>(channels.size());
  for (size_t i = 0; i < channels[0].size(); ++i) {
    for (const auto& ch : channels) {
      interleaved.samples.push_back(
          static_cast<int16_t>(std::lround(ch[i] * 32767.0)));
    }
  }
  WriteWav(path, interleaved);
}

double MeanSquare(const std::vector<double>& x, size_t skip = 0) {
  double s = 0.0;
  for (size_t i = skip; i + skip < x.size(); ++i) s += x[i] * x[i];
  return s / static_cast<double>(x.size() - 2 * skip);
}

TEST(LoadAudio, DownmixesAndResamplesStereo48k) {
  const auto path = TempPath("stereo48.wav");
  WritePcm16(path, {Tone(300, 48000, 2.0), Tone(300, 48000, 2.0)}, 48000);
  Waveform w = LoadAudio(path);
  EXPECT_EQ(w.sample_rate, 24000);
  EXPECT_EQ(w.channels, 1);
  EXPECT_EQ(w.size(), 48000u);
  std::filesystem::remove(path);
}

TEST(LoadAudio, Native24kMonoIsUnchanged) {
  const auto path = TempPath("mono24.wav");
  Waveform in;
  std::mt19937 rng(1);
  std::uniform_int_distribution<int> dist(-32768, 32767);
  for (int i = 0; i < 5000; ++i) in.samples.push_back(static_cast<int16_t>(dist(rng)));
  WriteWav(path, in);
  Waveform out = LoadAudio(path);
  EXPECT_EQ(out.samples, in.samples);
  std::filesystem::remove(path);
}

TEST(LoadAudio, UpsampledToneKeepsItsFrequency) {
  const auto path = TempPath("tone12.wav");
  WritePcm16(path, {Tone(440, 12000, 1.0)}, 12000);
  Waveform w = LoadAudio(path);
  ASSERT_EQ(w.size(), 24000u);
  // Oracle: direct DFT at 1 Hz resolution around the expected peak.
  const auto x = ToDouble(w);
  double best_mag = -1.0;
  int best_hz = 0;
  for (int hz = 380; hz <= 500; ++hz) {
    std::complex<double> acc = 0.0;
    for (size_t n = 0; n < x.size(); ++n) {
      acc += x[n] * std::polar(1.0, -2.0 * M_PI * hz * n / 24000.0);
    }
    if (std::abs(acc) > best_mag) {
      best_mag = std::abs(acc);
      best_hz = hz;
    }
  }
  EXPECT_NEAR(best_hz, 440, 2);
  std::filesystem::remove(path);
}

TEST(LoadAudio, ErrorsAreClassified) {
  try {
    LoadAudio("/nonexistent.wav");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kIngestion);
  }
  const auto path = TempPath("empty.wav");
  WriteWav(path, Waveform{});
  try {
    LoadAudio(path);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kEmptyInput);
  }
  std::filesystem::remove(path);
}

TEST(Resample, PreservesToneEnergyBelow6k) {
  for (int in_rate : {16000, 22050, 44100, 48000}) {
    for (double hz : {100.0, 1000.0, 3000.0, 5900.0}) {
      if (hz >= 0.45 * in_rate) continue;
      const auto x = Tone(hz, in_rate, 1.0);
      const auto y = Resample(x, in_rate, 24000);
      const double ratio = MeanSquare(y, 200) / MeanSquare(x, 200);
      EXPECT_NEAR(ratio, 1.0, 0.05) << in_rate << " Hz input, tone " << hz;
    }
  }
}

TEST(Mel, SilenceSitsAtTheFloor) {
  MelConfig config;
  std::vector<double> silence(24000, 0.0);
  MelSpectrogram mel = ComputeMel(silence, config);
  EXPECT_TRUE((mel.frames.array() == config.floor_value()).all());
}

TEST(Mel, FrameGridMatchesHop) {
  std::vector<double> x(24000, 0.01);
  MelSpectrogram mel = ComputeMel(x);
  EXPECT_EQ(mel.num_frames(), 50);
  EXPECT_EQ(mel.num_mels, 80);
  EXPECT_DOUBLE_EQ(mel.frame_rate, 50.0);
  std::mt19937 rng(2);
  std::uniform_int_distribution<int> len(1, 5000);
  for (int i = 0; i < 50; ++i) {
    const int n = len(rng);
    EXPECT_EQ(ComputeMel(std::vector<double>(n, 0.1)).num_frames(),
              (n + 479) / 480);
  }
}

TEST(Mel, ToneLandsInNearestBand) {
  MelConfig config;
  // Oracle centres: num_mels+2 equally spaced points on the mel scale.
  auto to_mel = [](double f) { return 2595.0 * std::log10(1.0 + f / 700.0); };
  auto to_hz = [](double m) { return 700.0 * (std::pow(10.0, m / 2595.0) - 1.0); };
  int nearest = 0;
  double best = 1e9;
  for (int m = 0; m < config.num_mels; ++m) {
    const double c = to_hz(to_mel(config.fmax) * (m + 1) / (config.num_mels + 1));
    if (std::abs(c - 1000.0) < best) {
      best = std::abs(c - 1000.0);
      nearest = m;
    }
  }
  MelSpectrogram mel = ComputeMel(Tone(1000.0, 24000, 1.0), config);
  for (long t = 2; t < mel.num_frames() - 2; ++t) {
    Eigen::Index arg;
    mel.frames.row(t).maxCoeff(&arg);
    EXPECT_EQ(arg, nearest) << "frame " << t;
  }
}

TEST(Mel, DeterministicAndEmptyRejected) {
  const auto x = Tone(777.0, 24000, 0.3);
  EXPECT_EQ(ComputeMel(x).frames, ComputeMel(x).frames);
  try {
    ComputeMel(std::vector<double>{});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kEmptyInput);
  }
}

TEST(Mel, DifferentiableTransformMatchesFftPath) {
  std::mt19937 rng(3);
  std::normal_distribution<double> noise(0.0, 0.1);
  std::vector<double> x(7000);
  for (auto& v : x) v = noise(rng);
  MelConfig config;
  MelSpectrogram ref = ComputeMel(x, config);
  nn::Matrix col(static_cast<Eigen::Index>(x.size()), 1);
  for (size_t i = 0; i < x.size(); ++i) col(static_cast<Eigen::Index>(i), 0) = x[i];
  MelTransform transform(config);
  nn::Tensor out = transform.Forward(nn::Tensor(col));
  ASSERT_EQ(out.rows(), ref.num_frames());
  EXPECT_LT((out.value() - ref.frames).cwiseAbs().maxCoeff(), 1e-6);
}

TEST(Mel, ShippedConfigMatchesDefaults) {
  MelConfig file = MelConfig::FromFile(std::string(BASETTS_DATA_DIR) +
                                       "/mel_config.json");
  MelConfig defaults;
  EXPECT_EQ(file.ToJson(), defaults.ToJson());
}

}  // namespace
}  // namespace basetts::audio
