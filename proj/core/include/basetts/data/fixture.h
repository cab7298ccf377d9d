#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "basetts/audio/audio.h"

namespace basetts::data {

struct WordTiming {
  std::string word;
  double start_s = 0.0;
  double end_s = 0.0;
};

struct FixtureConfig {
  uint64_t seed = 7;
  int num_speakers = 2;
  int utterances_per_speaker = 12;
  double min_seconds = 1.0;
  double max_seconds = 8.0;
};

// Voice of a synthetic speaker. Speaker i of n gets a fundamental frequency
// geometrically spaced between 120 Hz and 220 Hz.
struct Voice {
  double f0_hz = 120.0;
  double resonance_hz = 2500.0;
  double tilt = 0.3;  // one-pole lowpass coefficient
  double gain = 0.25;
};

Voice SpeakerVoice(int index, int num_speakers);

struct FixtureUtterance {
  std::string id;
  std::string speaker_id;
  int speaker_index = 0;
  audio::Waveform audio;
  // Lowercase words, as a recognizer would emit them.
  std::string text;
  // Capitalized and punctuated, as in an original book text.
  std::string source_text;
  std::vector<WordTiming> words;
};

struct Fixture {
  FixtureConfig config;
  std::vector<FixtureUtterance> utterances;
};

// Deterministic in `config`: the same seed yields identical samples.
Fixture GenerateFixture(const FixtureConfig& config);

// Layout: wavs/<id>.wav, metadata.jsonl (one utterance per line) and
// asr.json (the lookup table behind the fake recognizer).
void WriteFixture(const Fixture& fixture, const std::filesystem::path& dir);
Fixture ReadFixture(const std::filesystem::path& dir);

// Letters that the synthesizer can pronounce.
const std::string& FixtureAlphabet();

}  // namespace basetts::data
