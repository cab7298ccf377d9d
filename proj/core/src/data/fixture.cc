#include "basetts/data/fixture.h"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <random>

#include <nlohmann/json.hpp>

#include "basetts/error.h"

namespace basetts::data {
namespace {

constexpr double kRate = audio::kSampleRate;

struct Formants {
  double f1;
  double f2;
};

Formants VowelFormants(char c) {
  switch (c) {
    case 'a': return {730, 1090};
    case 'e': return {530, 1840};
    case 'i': return {270, 2290};
    case 'o': return {570, 840};
    default: return {300, 870};  // 'u'
  }
}

const std::vector<std::string>& Vocabulary() {
  static const std::vector<std::string> words = {
      "sa", "se", "si", "so", "su", "as", "es", "is", "os", "us",
      "ai", "oa", "sea", "sue", "ease", "oasis", "sis", "sous", "aise"};
  return words;
}

// Two-pole resonator with unit peak-ish gain.
class Resonator {
 public:
  Resonator(double freq, double bandwidth) {
    const double r = std::exp(-M_PI * bandwidth / kRate);
    a1_ = 2.0 * r * std::cos(2.0 * M_PI * freq / kRate);
    a2_ = -r * r;
    b0_ = 1.0 - r;
  }
  double operator()(double x) {
    const double y = b0_ * x + a1_ * y1_ + a2_ * y2_;
    y2_ = y1_;
    y1_ = y;
    return y;
  }

 private:
  double a1_, a2_, b0_;
  double y1_ = 0.0, y2_ = 0.0;
};

void NormalizeRms(std::vector<double>& x, double target) {
  double ss = 0.0;
  for (double v : x) ss += v * v;
  const double rms = std::sqrt(ss / std::max<size_t>(1, x.size()));
  if (rms <= 0.0) return;
  for (double& v : x) v *= target / rms;
}

void Fade(std::vector<double>& x) {
  const size_t ramp = std::min<size_t>(x.size() / 2, 240);
  for (size_t i = 0; i < ramp; ++i) {
    const double g = 0.5 - 0.5 * std::cos(M_PI * i / ramp);
    x[i] *= g;
    x[x.size() - 1 - i] *= g;
  }
}

std::vector<double> Vowel(char c, const Voice& v, size_t n, double t0,
                          double contour_phase) {
  const Formants f = VowelFormants(c);
  Resonator r1(f.f1, 90.0), r2(f.f2, 120.0), rs(v.resonance_hz, 400.0);
  std::vector<double> out(n);
  double phase = 0.0;
  double lp = 0.0;
  for (size_t i = 0; i < n; ++i) {
    const double t = t0 + i / kRate;
    const double f0 = v.f0_hz * (1.0 + 0.06 * std::sin(2.0 * M_PI * 0.8 * t +
                                                        contour_phase));
    phase += f0 / kRate;
    phase -= std::floor(phase);
    const double src = 2.0 * phase - 1.0;
    const double formed = r2(r1(src)) * 4.0;
    const double spk = formed + 0.6 * rs(formed);
    lp = (1.0 - v.tilt) * spk + v.tilt * lp;
    out[i] = lp;
  }
  NormalizeRms(out, v.gain);
  Fade(out);
  return out;
}

std::vector<double> Fricative(const Voice& v, size_t n, std::mt19937_64& rng) {
  std::normal_distribution<double> noise(0.0, 1.0);
  Resonator hiss(5500.0, 2500.0);
  std::vector<double> out(n);
  for (auto& s : out) s = hiss(noise(rng));
  NormalizeRms(out, 0.4 * v.gain);
  Fade(out);
  return out;
}

void AppendSilence(std::vector<double>& x, size_t n, std::mt19937_64& rng) {
  std::normal_distribution<double> floor(0.0, 3e-4);
  for (size_t i = 0; i < n; ++i) x.push_back(floor(rng));
}

std::string SourceText(const std::vector<std::string>& words) {
  std::string s;
  for (size_t i = 0; i < words.size(); ++i) {
    if (i > 0) s += (i % 5 == 0) ? ", " : " ";
    s += words[i];
  }
  s[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(s[0])));
  return s + ".";
}

FixtureUtterance Synthesize(const FixtureConfig& config, int speaker,
                            int index, std::mt19937_64& rng) {
  const Voice voice = SpeakerVoice(speaker, config.num_speakers);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  auto uniform = [&](double lo, double hi) { return lo + (hi - lo) * unit(rng); };
  const double target_s = uniform(config.min_seconds, config.max_seconds);
  const size_t target = static_cast<size_t>(std::round(target_s * kRate));
  const auto& vocab = Vocabulary();

  FixtureUtterance u;
  u.speaker_index = speaker;
  u.speaker_id = "spk" + std::to_string(speaker);
  u.id = u.speaker_id + "_" + std::to_string(index);
  std::vector<double> x;
  AppendSilence(x, static_cast<size_t>(uniform(0.1, 0.2) * kRate), rng);
  const double contour = uniform(0.0, 2.0 * M_PI);
  std::vector<std::string> words;
  while (true) {
    const std::string& w = vocab[rng() % vocab.size()];
    std::vector<std::vector<double>> phones;
    size_t len = 0;
    for (char c : w) {
      const size_t n = static_cast<size_t>(
          (c == 's' ? uniform(0.07, 0.13) : uniform(0.09, 0.2)) * kRate);
      phones.push_back(c == 's'
                           ? Fricative(voice, n, rng)
                           : Vowel(c, voice, n, (x.size() + len) / kRate, contour));
      len += n;
    }
    const size_t pause = static_cast<size_t>(uniform(0.05, 0.15) * kRate);
    if (!words.empty() && x.size() + len + pause + 0.1 * kRate > target) break;
    WordTiming timing{w, x.size() / kRate, (x.size() + len) / kRate};
    for (auto& p : phones) x.insert(x.end(), p.begin(), p.end());
    AppendSilence(x, pause, rng);
    words.push_back(w);
    u.words.push_back(timing);
    if (x.size() >= target) break;
  }
  if (x.size() < target) AppendSilence(x, target - x.size(), rng);
  u.audio = audio::FromDouble(x);
  for (size_t i = 0; i < words.size(); ++i) {
    u.text += (i ? " " : "") + words[i];
  }
  u.source_text = SourceText(words);
  return u;
}

}  // namespace

const std::string& FixtureAlphabet() {
  static const std::string letters = "aeiosu";
  return letters;
}

Voice SpeakerVoice(int index, int num_speakers) {
  const double frac =
      num_speakers > 1 ? static_cast<double>(index) / (num_speakers - 1) : 0.0;
  Voice v;
  v.f0_hz = 120.0 * std::pow(220.0 / 120.0, frac);
  v.resonance_hz = 2500.0 + 900.0 * frac;
  v.tilt = 0.55 - 0.3 * frac;
  v.gain = 0.25 - 0.08 * frac;
  return v;
}

Fixture GenerateFixture(const FixtureConfig& config) {
  if (config.num_speakers < 1 || config.utterances_per_speaker < 1 ||
      config.min_seconds <= 0.3 || config.max_seconds < config.min_seconds) {
    throw Error(ErrorKind::kConfig, "fixture: invalid speaker/duration setup");
  }
  Fixture f;
  f.config = config;
  for (int i = 0; i < config.utterances_per_speaker; ++i) {
    for (int s = 0; s < config.num_speakers; ++s) {
      std::seed_seq seq{config.seed, static_cast<uint64_t>(s),
                        static_cast<uint64_t>(i)};
      std::mt19937_64 rng(seq);
      f.utterances.push_back(Synthesize(config, s, i, rng));
    }
  }
  return f;
}

void WriteFixture(const Fixture& fixture, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir / "wavs");
  std::ofstream meta(dir / "metadata.jsonl");
  nlohmann::json asr = nlohmann::json::object();
  for (const auto& u : fixture.utterances) {
    const std::string rel = "wavs/" + u.id + ".wav";
    audio::WriteWav(dir / rel, u.audio);
    nlohmann::json words = nlohmann::json::array();
    for (const auto& w : u.words) {
      words.push_back({{"word", w.word}, {"start_s", w.start_s}, {"end_s", w.end_s}});
    }
    meta << nlohmann::json{{"id", u.id},
                           {"audio_path", rel},
                           {"speaker_id", u.speaker_id},
                           {"speaker_index", u.speaker_index},
                           {"text", u.text},
                           {"source_text", u.source_text}}
                .dump()
         << "\n";
    asr[rel] = words;
  }
  std::ofstream(dir / "asr.json") << asr.dump(1) << "\n";
  const auto& c = fixture.config;
  std::ofstream(dir / "fixture.json")
      << nlohmann::json{{"seed", c.seed},
                        {"num_speakers", c.num_speakers},
                        {"utterances_per_speaker", c.utterances_per_speaker},
                        {"min_seconds", c.min_seconds},
                        {"max_seconds", c.max_seconds}}
             .dump(1)
      << "\n";
  if (!meta) throw Error(ErrorKind::kIo, "cannot write " + dir.string());
}

Fixture ReadFixture(const std::filesystem::path& dir) {
  std::ifstream meta(dir / "metadata.jsonl");
  std::ifstream asr_in(dir / "asr.json");
  if (!meta || !asr_in) {
    throw Error(ErrorKind::kDependency, "no fixture corpus at " + dir.string());
  }
  const auto asr = nlohmann::json::parse(asr_in);
  Fixture f;
  std::ifstream cfg_in(dir / "fixture.json");
  if (cfg_in) {
    const auto c = nlohmann::json::parse(cfg_in);
    f.config.seed = c.at("seed");
    f.config.num_speakers = c.at("num_speakers");
    f.config.utterances_per_speaker = c.at("utterances_per_speaker");
    f.config.min_seconds = c.at("min_seconds");
    f.config.max_seconds = c.at("max_seconds");
  }
  std::string line;
  while (std::getline(meta, line)) {
    if (line.empty()) continue;
    const auto j = nlohmann::json::parse(line);
    FixtureUtterance u;
    u.id = j.at("id");
    u.speaker_id = j.at("speaker_id");
    u.speaker_index = j.at("speaker_index");
    u.text = j.at("text");
    u.source_text = j.at("source_text");
    const std::string rel = j.at("audio_path");
    u.audio = audio::LoadAudio(dir / rel);
    if (asr.contains(rel)) {
      for (const auto& w : asr.at(rel)) {
        u.words.push_back({w.at("word"), w.at("start_s"), w.at("end_s")});
      }
    }
    f.utterances.push_back(std::move(u));
  }
  return f;
}

}  // namespace basetts::data
