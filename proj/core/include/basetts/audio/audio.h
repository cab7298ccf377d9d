#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

namespace basetts::audio {

inline constexpr int kSampleRate = 24000;

// Ingested audio: signed 16-bit, 24 kHz, mono.
struct Waveform {
  std::vector<int16_t> samples;
  int sample_rate = kSampleRate;
  int channels = 1;

  size_t size() const { return samples.size(); }
  double duration_s() const {
    return static_cast<double>(samples.size()) / sample_rate;
  }
};

// Decoded file contents before ingestion: one vector per channel, [-1, 1).
struct RawAudio {
  std::vector<std::vector<double>> channels;
  int sample_rate = 0;

  size_t frames() const { return channels.empty() ? 0 : channels[0].size(); }
};

// Decodes RIFF/WAVE with integer PCM (8/16/24/32-bit) or IEEE float
// (32/64-bit) payloads, including WAVE_FORMAT_EXTENSIBLE headers.
RawAudio ReadWav(const std::filesystem::path& path);

// Writes 16-bit signed little-endian PCM.
void WriteWav(const std::filesystem::path& path, const Waveform& w);

// Band-limited rational resampling with a Kaiser-windowed sinc polyphase
// filter. Identity when the rates match.
std::vector<double> Resample(std::span<const double> input, int in_rate,
                             int out_rate);

// Reads, downmixes, and resamples to the 24 kHz mono 16-bit ingestion format.
Waveform LoadAudio(const std::filesystem::path& path);

// Ingests already-decoded audio the same way LoadAudio does.
Waveform Ingest(const RawAudio& raw);

std::vector<double> ToDouble(const Waveform& w);
// Scales [-1, 1) to int16 with saturation.
Waveform FromDouble(std::span<const double> samples,
                    int sample_rate = kSampleRate);

}  // namespace basetts::audio
