#include "basetts/audio/audio.h"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>

#include "basetts/error.h"

namespace basetts::audio {
namespace {

constexpr uint16_t kFormatPcm = 1;
constexpr uint16_t kFormatFloat = 3;
constexpr uint16_t kFormatExtensible = 0xFFFE;

uint16_t ReadU16(const unsigned char* p) {
  return static_cast<uint16_t>(p[0] | (p[1] << 8));
}
uint32_t ReadU32(const unsigned char* p) {
  return static_cast<uint32_t>(p[0]) | (static_cast<uint32_t>(p[1]) << 8) |
         (static_cast<uint32_t>(p[2]) << 16) |
         (static_cast<uint32_t>(p[3]) << 24);
}

void PutU16(std::string* s, uint16_t v) {
  s->push_back(static_cast<char>(v & 0xff));
  s->push_back(static_cast<char>(v >> 8));
}
void PutU32(std::string* s, uint32_t v) {
  for (int i = 0; i < 4; ++i) s->push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

double DecodeSample(const unsigned char* p, uint16_t format, int bits) {
  if (format == kFormatFloat) {
    if (bits == 32) {
      float f;
      std::memcpy(&f, p, 4);
      return f;
    }
    double d;
    std::memcpy(&d, p, 8);
    return d;
  }
  switch (bits) {
    case 8:
      return (static_cast<int>(p[0]) - 128) / 128.0;
    case 16:
      return static_cast<int16_t>(ReadU16(p)) / 32768.0;
    case 24: {
      int32_t v = (p[0] << 8) | (p[1] << 16) | (p[2] << 24);
      return (v >> 8) / 8388608.0;
    }
    case 32:
      return static_cast<int32_t>(ReadU32(p)) / 2147483648.0;
  }
  return 0.0;
}

// Kaiser-windowed sinc in input-sample units; cutoff in cycles/sample.
double KernelTap(double t, double cutoff, double half_width, double beta,
                 double i0_beta) {
  if (std::abs(t) >= half_width) return 0.0;
  const double x = 2.0 * cutoff * t;
  const double sinc = std::abs(x) < 1e-12 ? 1.0 : std::sin(M_PI * x) / (M_PI * x);
  const double r = t / half_width;
  const double window = std::cyl_bessel_i(0.0, beta * std::sqrt(1.0 - r * r)) / i0_beta;
  return 2.0 * cutoff * sinc * window;
}

}  // namespace

RawAudio ReadWav(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw Error(ErrorKind::kIngestion, "cannot open " + path.string());
  }
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)),
                                   std::istreambuf_iterator<char>());
  if (bytes.size() < 12 || std::memcmp(bytes.data(), "RIFF", 4) != 0 ||
      std::memcmp(bytes.data() + 8, "WAVE", 4) != 0) {
    throw Error(ErrorKind::kIngestion,
                path.string() + ": not a RIFF/WAVE file (compressed formats "
                                "must be converted to WAV first)");
  }
  uint16_t format = 0;
  uint16_t channels = 0;
  uint32_t rate = 0;
  uint16_t bits = 0;
  const unsigned char* data = nullptr;
  size_t data_len = 0;
  size_t pos = 12;
  while (pos + 8 <= bytes.size()) {
    const unsigned char* chunk = bytes.data() + pos;
    const uint32_t len = ReadU32(chunk + 4);
    const size_t body = pos + 8;
    const size_t avail = std::min<size_t>(len, bytes.size() - body);
    if (std::memcmp(chunk, "fmt ", 4) == 0 && avail >= 16) {
      format = ReadU16(chunk + 8);
      channels = ReadU16(chunk + 10);
      rate = ReadU32(chunk + 12);
      bits = ReadU16(chunk + 22);
      if (format == kFormatExtensible && avail >= 26) {
        format = ReadU16(chunk + 8 + 24);
      }
    } else if (std::memcmp(chunk, "data", 4) == 0) {
      data = chunk + 8;
      data_len = avail;
    }
    pos = body + len + (len & 1);
  }
  if (data == nullptr || channels == 0 || rate == 0) {
    throw Error(ErrorKind::kIngestion, path.string() + ": missing fmt/data");
  }
  const bool int_ok = format == kFormatPcm &&
                      (bits == 8 || bits == 16 || bits == 24 || bits == 32);
  const bool float_ok = format == kFormatFloat && (bits == 32 || bits == 64);
  if (!int_ok && !float_ok) {
    throw Error(ErrorKind::kIngestion,
                path.string() + ": unsupported WAV encoding (format " +
                    std::to_string(format) + ", " + std::to_string(bits) +
                    " bits)");
  }
  const size_t stride = static_cast<size_t>(bits / 8) * channels;
  const size_t frames = data_len / stride;
  RawAudio raw;
  raw.sample_rate = static_cast<int>(rate);
  raw.channels.assign(channels, std::vector<double>(frames));
  for (size_t f = 0; f < frames; ++f) {
    for (uint16_t c = 0; c < channels; ++c) {
      raw.channels[c][f] =
          DecodeSample(data + f * stride + c * (bits / 8), format, bits);
    }
  }
  return raw;
}

void WriteWav(const std::filesystem::path& path, const Waveform& w) {
  const uint32_t data_bytes = static_cast<uint32_t>(w.samples.size() * 2);
  std::string out;
  out.reserve(44 + data_bytes);
  out += "RIFF";
  PutU32(&out, 36 + data_bytes);
  out += "WAVEfmt ";
  PutU32(&out, 16);
  PutU16(&out, kFormatPcm);
  PutU16(&out, static_cast<uint16_t>(w.channels));
  PutU32(&out, static_cast<uint32_t>(w.sample_rate));
  PutU32(&out, static_cast<uint32_t>(w.sample_rate * w.channels * 2));
  PutU16(&out, static_cast<uint16_t>(w.channels * 2));
  PutU16(&out, 16);
  out += "data";
  PutU32(&out, data_bytes);
  for (int16_t s : w.samples) PutU16(&out, static_cast<uint16_t>(s));
  std::ofstream file(path, std::ios::binary);
  if (!file) {
    throw Error(ErrorKind::kIo, "cannot write " + path.string());
  }
  file.write(out.data(), static_cast<std::streamsize>(out.size()));
}

std::vector<double> Resample(std::span<const double> input, int in_rate,
                             int out_rate) {
  if (in_rate <= 0 || out_rate <= 0) {
    throw Error(ErrorKind::kConfig, "Resample: rates must be positive");
  }
  if (in_rate == out_rate) return {input.begin(), input.end()};
  const long g = std::gcd(in_rate, out_rate);
  const long up = out_rate / g;
  const long down = in_rate / g;
  // Cutoff just below the lower Nyquist, in cycles per input sample.
  const double cutoff = 0.5 * std::min(1.0, static_cast<double>(up) / down) * 0.96;
  constexpr double kZeroCrossings = 24.0;
  constexpr double kBeta = 8.6;
  const double half_width = kZeroCrossings / (2.0 * cutoff);
  const double i0_beta = std::cyl_bessel_i(0.0, kBeta);
  const long taps = static_cast<long>(std::ceil(half_width));

  const size_t n_in = input.size();
  const size_t n_out = static_cast<size_t>((n_in * up + down - 1) / down);
  std::vector<double> out(n_out, 0.0);

  // One normalized tap set per output phase; the phase count is `up`.
  const bool tabulate = up <= 2048;
  std::vector<std::vector<double>> table;
  auto make_phase = [&](long phase) {
    const double frac = static_cast<double>(phase) / up;
    std::vector<double> w(2 * taps + 1);
    double sum = 0.0;
    for (long j = -taps; j <= taps; ++j) {
      w[j + taps] = KernelTap(j - frac, cutoff, half_width, kBeta, i0_beta);
      sum += w[j + taps];
    }
    for (double& v : w) v /= sum;
    return w;
  };
  if (tabulate) {
    table.reserve(up);
    for (long p = 0; p < up; ++p) table.push_back(make_phase(p));
  }
  for (size_t n = 0; n < n_out; ++n) {
    const long long pos = static_cast<long long>(n) * down;
    const long long base = pos / up;
    const long phase = static_cast<long>(pos % up);
    std::vector<double> local;
    const std::vector<double>& w = tabulate ? table[phase] : (local = make_phase(phase));
    double acc = 0.0;
    for (long j = -taps; j <= taps; ++j) {
      const long long idx = base + j;
      if (idx >= 0 && idx < static_cast<long long>(n_in)) {
        acc += input[static_cast<size_t>(idx)] * w[j + taps];
      }
    }
    out[n] = acc;
  }
  return out;
}

Waveform Ingest(const RawAudio& raw) {
  if (raw.frames() == 0) {
    throw Error(ErrorKind::kEmptyInput, "zero-length audio");
  }
  std::vector<double> mono(raw.frames(), 0.0);
  for (const auto& ch : raw.channels) {
    for (size_t i = 0; i < mono.size(); ++i) mono[i] += ch[i];
  }
  const double inv = 1.0 / static_cast<double>(raw.channels.size());
  for (double& v : mono) v *= inv;
  if (raw.sample_rate == kSampleRate) {
    return FromDouble(mono);
  }
  return FromDouble(Resample(mono, raw.sample_rate, kSampleRate));
}

Waveform LoadAudio(const std::filesystem::path& path) {
  return Ingest(ReadWav(path));
}

std::vector<double> ToDouble(const Waveform& w) {
  std::vector<double> out(w.samples.size());
  for (size_t i = 0; i < out.size(); ++i) out[i] = w.samples[i] / 32768.0;
  return out;
}

Waveform FromDouble(std::span<const double> samples, int sample_rate) {
  Waveform w;
  w.sample_rate = sample_rate;
  w.samples.resize(samples.size());
  for (size_t i = 0; i < samples.size(); ++i) {
    const double v = std::round(samples[i] * 32768.0);
    w.samples[i] = static_cast<int16_t>(std::clamp(v, -32768.0, 32767.0));
  }
  return w;
}

}  // namespace basetts::audio
