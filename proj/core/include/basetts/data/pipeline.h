#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "basetts/audio/audio.h"
#include "basetts/data/fixture.h"

namespace basetts::data {

// A recognizer output span: words with timings inside one recording.
struct AsrFragment {
  double start_s = 0.0;
  double end_s = 0.0;
  std::vector<WordTiming> words;

  double duration_s() const { return end_s - start_s; }
  std::string text() const;
};

class AsrBackend {
 public:
  virtual ~AsrBackend() = default;
  // Fragments of at most `max_fragment_s`, in time order.
  virtual std::vector<AsrFragment> Transcribe(const std::string& recording,
                                              const audio::Waveform& audio,
                                              double max_fragment_s) const = 0;
};

// Serves word timings from a table keyed by recording path.
class LookupAsr : public AsrBackend {
 public:
  explicit LookupAsr(std::map<std::string, std::vector<WordTiming>> table);
  // Reads the fixture's asr.json.
  static LookupAsr FromFile(const std::filesystem::path& path);

  std::vector<AsrFragment> Transcribe(const std::string& recording,
                                      const audio::Waveform& audio,
                                      double max_fragment_s) const override;

 private:
  std::map<std::string, std::vector<WordTiming>> table_;
};

enum class Provenance { kAsr, kSource };

std::string_view ProvenanceName(Provenance p);
Provenance ParseProvenance(std::string_view name);

struct TranscriptSegment {
  std::string recording;
  double start_s = 0.0;
  double end_s = 0.0;
  std::string asr_text;
  std::optional<std::string> restored_text;
  std::string speaker_id;
  // Longer than the split threshold with no usable silence gap.
  bool unsplit_warning = false;

  double duration_s() const { return end_s - start_s; }
  const std::string& text() const { return restored_text ? *restored_text : asr_text; }
  Provenance provenance() const {
    return restored_text ? Provenance::kSource : Provenance::kAsr;
  }
};

struct VadConfig {
  double frame_s = 0.01;
  double threshold_dbfs = -40.0;
  double min_gap_s = 0.3;
};

struct SilenceGap {
  double start_s = 0.0;
  double end_s = 0.0;
  double mean_dbfs = 0.0;

  double center_s() const { return 0.5 * (start_s + end_s); }
};

// Runs of frames whose RMS stays below the threshold for at least min_gap_s.
std::vector<SilenceGap> FindSilenceGaps(std::span<const double> samples,
                                        int sample_rate, const VadConfig& config = {});

struct SegmentConfig {
  double max_fragment_s = 30.0;
  double split_above_s = 20.0;
  double max_segment_s = 40.0;
  VadConfig vad;

  void Validate() const;
};

// Splits every fragment longer than split_above_s at the centre of its
// lowest-energy interior gap, recursively. Words follow their midpoints.
std::vector<TranscriptSegment> SplitLongFragments(const std::string& recording,
                                                  const std::string& speaker_id,
                                                  const std::vector<AsrFragment>& fragments,
                                                  std::span<const double> samples,
                                                  int sample_rate,
                                                  const SegmentConfig& config = {});

// Greedy left-to-right concatenation of neighbours while the merged span stays
// within max_segment_s. Never crosses a recording or speaker boundary.
std::vector<TranscriptSegment> Reassemble(const std::vector<TranscriptSegment>& segments,
                                          double max_segment_s = 40.0);

// Split then reassemble.
std::vector<TranscriptSegment> Segment(const std::string& recording,
                                       const std::string& speaker_id,
                                       const std::vector<AsrFragment>& fragments,
                                       std::span<const double> samples, int sample_rate,
                                       const SegmentConfig& config = {});

size_t LevenshteinDistance(std::string_view a, std::string_view b);
// Distance divided by the longer length; 0 for two empty strings.
double NormalizedEditDistance(std::string_view a, std::string_view b);
// Lowercase, punctuation removed, whitespace collapsed.
std::string NormalizeForComparison(std::string_view text);

struct RestoreConfig {
  double max_len_factor = 3.0;
  double max_norm_edit = 0.2;

  void Validate() const;
};

struct RestoreResult {
  std::string text;
  Provenance provenance = Provenance::kAsr;
  double length_ratio = 0.0;
  double normalized_distance = 0.0;
};

// Chooses the source sentence when the normalized forms are within
// max_len_factor in length and within max_norm_edit in edit distance.
RestoreResult RestoreText(std::string_view asr_sentence, std::string_view source_sentence,
                          const RestoreConfig& config = {});

// Splits on . ! ? (and runs of them), keeping trailing closing quotes and
// brackets with the sentence. Common abbreviations do not end a sentence.
std::vector<std::string> SplitSentences(std::string_view text);

struct AlignConfig {
  // Cost of leaving a sentence unpaired; pairing costs the normalized edit
  // distance of the normalized forms.
  double skip_penalty = 0.6;
};

// Monotone alignment minimizing total cost by dynamic programming.
std::vector<std::pair<size_t, size_t>> AlignSentences(
    const std::vector<std::string>& asr_doc, const std::vector<std::string>& source_doc,
    const AlignConfig& config = {});

double AlignmentCost(const std::vector<std::string>& asr_doc,
                     const std::vector<std::string>& source_doc,
                     const std::vector<std::pair<size_t, size_t>>& pairs,
                     const AlignConfig& config = {});

struct DatasetEntry {
  std::string audio_path;  // relative to the corpus root
  TranscriptSegment segment;
};

struct Dataset {
  std::vector<DatasetEntry> entries;

  size_t size() const { return entries.size(); }
};

// Keeps each speaker's total duration within cap_seconds by discarding a
// seeded-random subset of their segments. Speakers under the cap are
// untouched and the original order is preserved.
Dataset SpeakerCap(const Dataset& ds, double cap_seconds, uint64_t seed);

std::map<std::string, double> SpeakerDurations(const Dataset& ds);

// One JSON record per line: audio_path, start_s, end_s, speaker_id, text,
// provenance, asr_text.
void WriteManifest(const std::filesystem::path& path, const Dataset& ds);
Dataset ReadManifest(const std::filesystem::path& path);

// Cuts the segment's span out of the recording under `corpus_root`.
audio::Waveform LoadSegmentAudio(const std::filesystem::path& corpus_root,
                                 const DatasetEntry& entry);

struct PrepConfig {
  SegmentConfig segment;
  RestoreConfig restore;
  AlignConfig align;
  double cap_hours = 200.0;
  uint64_t seed = 0;

  void Validate() const;
  static PrepConfig FromJson(const nlohmann::json& j);
  nlohmann::json ToJson() const;
};

struct PrepReport {
  size_t recordings = 0;
  size_t segments = 0;
  size_t restored = 0;
  size_t unsplit_warnings = 0;
  size_t capped_segments = 0;
  double total_seconds = 0.0;

  double restored_fraction() const {
    return segments ? static_cast<double>(restored) / segments : 0.0;
  }
  nlohmann::json ToJson() const;
};

struct PrepResult {
  Dataset dataset;
  PrepReport report;
};

// Full preparation of a corpus in the fixture layout: recognizer fragments,
// segmentation, sentence alignment against the source text, restoration,
// and speaker capping.
PrepResult PrepareCorpus(const std::filesystem::path& corpus_dir, const AsrBackend& asr,
                         const PrepConfig& config = {});
PrepResult PrepareCorpus(const std::filesystem::path& corpus_dir,
                         const PrepConfig& config = {});

}  // namespace basetts::data
