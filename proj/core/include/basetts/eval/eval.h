#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "basetts/audio/audio.h"
#include "basetts/data/pipeline.h"

namespace basetts::eval {

// Lowercase, punctuation removed, split on whitespace.
std::vector<std::string> NormalizeWords(std::string_view text);

struct WerCounts {
  size_t substitutions = 0;
  size_t deletions = 0;
  size_t insertions = 0;
  size_t reference_words = 0;

  size_t errors() const { return substitutions + deletions + insertions; }
  // Percentage; kUndefinedMetric when the reference is empty.
  double wer() const;
};

// Minimum-edit word alignment; among optimal alignments, prefers
// substitutions over deletions over insertions.
WerCounts AlignWords(std::span<const std::string> reference,
                     std::span<const std::string> hypothesis);

double Wer(std::span<const std::string> reference, std::span<const std::string> hypothesis);
// Normalizes both strings first.
double Wer(std::string_view reference, std::string_view hypothesis);

struct WerItem {
  std::string key;
  audio::Waveform audio;
  std::string reference;
};

// Corpus-level WER: summed errors over summed reference words, with the
// hypothesis produced by the recognizer.
WerCounts EvaluateWer(const data::AsrBackend& asr, const std::vector<WerItem>& items);

// Cosine similarity x 100; kUndefinedMetric for a zero vector.
double SpeakerSim(std::span<const double> a, std::span<const double> b);

struct MushraResult {
  std::string system;
  std::vector<double> scores;
  double mean = 0.0;
  double ci95_halfwidth = 0.0;
};

// Mean with a t-distribution 95% interval; kUndefinedMetric for fewer than
// two scores, kData for scores outside [0, 100].
MushraResult MushraAggregate(const std::string& system, std::span<const double> scores);

struct SignificanceResult {
  double t = 0.0;
  double df = 0.0;
  double p_value = 1.0;
  bool significant = false;
};

// Two-sided Welch t-test, or a paired t-test on elementwise differences.
// Zero variance with equal means gives p = 1; with different means, p = 0.
SignificanceResult Significance(std::span<const double> a, std::span<const double> b,
                                bool paired = false, double alpha = 0.05);

// "A: 74.8 vs B: 74.7"
std::string FormatComparison(const MushraResult& a, const MushraResult& b);
std::string RenderMushraTable(const std::vector<MushraResult>& results);

struct ObjectiveRow {
  std::string system;
  double wer = 0.0;
  double sim = 0.0;
};
std::string RenderObjectiveTable(const std::vector<ObjectiveRow>& rows);

const std::vector<std::string>& EmergentCategories();

inline constexpr int kSentencesPerCategory = 20;
inline constexpr uint32_t kEmergentTestsetCrc32 = 0x151ff664;

struct EmergentSentence {
  std::string category;
  int index = 0;  // 1-based within the category
  std::string text;
};

struct EmergentTestset {
  std::vector<EmergentSentence> sentences;

  size_t size() const { return sentences.size(); }
  std::vector<EmergentSentence> Category(std::string_view name) const;
  const EmergentSentence& At(std::string_view category, int index) const;
};

std::filesystem::path DefaultEmergentTestsetPath();
// kDataIntegrity on a checksum mismatch or a malformed or incomplete file.
EmergentTestset LoadEmergentTestset(
    const std::filesystem::path& path = DefaultEmergentTestsetPath());

uint32_t Crc32(std::string_view bytes);

struct EmergentRating {
  std::string system;
  std::string category;
  int sentence_id = 0;
  int score = 0;  // 1, 2 or 3
};

// One JSON record per line: system, category, sentence_id, score.
std::vector<EmergentRating> ReadRatings(const std::filesystem::path& path);
void WriteRatings(const std::filesystem::path& path, const std::vector<EmergentRating>& r);

struct EmergentReport {
  std::vector<std::string> systems;
  // means[system][category]
  std::map<std::string, std::map<std::string, double>> means;

  static constexpr double kLowThreshold = 1.25;
  static constexpr double kHighThreshold = 1.75;
};

// kCompleteness listing every missing (system, category, sentence) rating;
// kData on out-of-range or duplicate ratings.
EmergentReport BuildEmergentReport(const std::vector<EmergentRating>& ratings,
                                   const std::vector<std::string>& systems);

std::string RenderEmergentTable(const EmergentReport& report);
// Grouped bars per category with dashed reference lines at both thresholds.
std::string RenderEmergentSvg(const EmergentReport& report);

}  // namespace basetts::eval
