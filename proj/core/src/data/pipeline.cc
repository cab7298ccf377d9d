#include "basetts/data/pipeline.h"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <random>
#include <set>

#include "basetts/error.h"

namespace basetts::data {
namespace {

bool IsSpace(char c) { return std::isspace(static_cast<unsigned char>(c)) != 0; }

std::string Join(const std::string& a, const std::string& b) {
  if (a.empty()) return b;
  if (b.empty()) return a;
  return a + " " + b;
}

std::string WordsText(const std::vector<WordTiming>& words) {
  std::string s;
  for (const auto& w : words) s = Join(s, w.word);
  return s;
}

void SplitRecursive(const std::string& recording, const std::string& speaker_id,
                    double start_s, double end_s, std::vector<WordTiming> words,
                    std::span<const double> samples, int sample_rate,
                    const SegmentConfig& config, std::vector<TranscriptSegment>& out) {
  TranscriptSegment seg;
  seg.recording = recording;
  seg.speaker_id = speaker_id;
  seg.start_s = start_s;
  seg.end_s = end_s;
  seg.asr_text = WordsText(words);
  if (end_s - start_s <= config.split_above_s) {
    out.push_back(std::move(seg));
    return;
  }
  const auto first = static_cast<size_t>(
      std::clamp<double>(std::floor(start_s * sample_rate), 0, samples.size()));
  const auto last = static_cast<size_t>(
      std::clamp<double>(std::ceil(end_s * sample_rate), 0, samples.size()));
  const double offset = static_cast<double>(first) / sample_rate;
  std::optional<SilenceGap> best;
  for (SilenceGap g : FindSilenceGaps(samples.subspan(first, last - first), sample_rate,
                                      config.vad)) {
    g.start_s += offset;
    g.end_s += offset;
    const double c = g.center_s();
    if (c <= start_s || c >= end_s) continue;
    if (g.start_s <= start_s || g.end_s >= end_s) continue;
    if (!best || g.mean_dbfs < best->mean_dbfs) best = g;
  }
  if (!best) {
    seg.unsplit_warning = true;
    out.push_back(std::move(seg));
    return;
  }
  const double cut = best->center_s();
  std::vector<WordTiming> left;
  std::vector<WordTiming> right;
  for (auto& w : words) {
    (0.5 * (w.start_s + w.end_s) < cut ? left : right).push_back(std::move(w));
  }
  SplitRecursive(recording, speaker_id, start_s, cut, std::move(left), samples,
                 sample_rate, config, out);
  SplitRecursive(recording, speaker_id, cut, end_s, std::move(right), samples,
                 sample_rate, config, out);
}

const std::set<std::string>& Abbreviations() {
  static const std::set<std::string> abbreviations = {
      "mr", "mrs", "ms", "dr", "st", "jr", "sr", "prof", "vs", "etc", "e.g", "i.e", "no"};
  return abbreviations;
}

bool IsClosing(char c) { return c == '"' || c == '\'' || c == ')' || c == ']'; }

std::string Trim(std::string_view s) {
  size_t b = 0;
  size_t e = s.size();
  while (b < e && IsSpace(s[b])) ++b;
  while (e > b && IsSpace(s[e - 1])) --e;
  return std::string(s.substr(b, e - b));
}

}  // namespace

std::string AsrFragment::text() const { return WordsText(words); }

LookupAsr::LookupAsr(std::map<std::string, std::vector<WordTiming>> table)
    : table_(std::move(table)) {}

LookupAsr LookupAsr::FromFile(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::kDependency, "no recognizer table at " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::kDataIntegrity, path.string() + ": " + e.what());
  }
  std::map<std::string, std::vector<WordTiming>> table;
  for (const auto& [key, words] : j.items()) {
    auto& list = table[key];
    for (const auto& w : words) {
      list.push_back({w.at("word"), w.at("start_s"), w.at("end_s")});
    }
  }
  return LookupAsr(std::move(table));
}

std::vector<AsrFragment> LookupAsr::Transcribe(const std::string& recording,
                                               const audio::Waveform& /*audio*/,
                                               double max_fragment_s) const {
  const auto it = table_.find(recording);
  if (it == table_.end()) {
    throw Error(ErrorKind::kData, "no transcript for " + recording);
  }
  std::vector<WordTiming> words = it->second;
  std::stable_sort(words.begin(), words.end(),
                   [](const auto& a, const auto& b) { return a.start_s < b.start_s; });
  std::vector<AsrFragment> out;
  for (auto& w : words) {
    if (w.end_s <= w.start_s) {
      throw Error(ErrorKind::kData, "non-positive word duration in " + recording);
    }
    if (out.empty() || w.end_s - out.back().start_s > max_fragment_s) {
      out.push_back({w.start_s, w.end_s, {}});
    }
    out.back().end_s = std::max(out.back().end_s, w.end_s);
    out.back().words.push_back(std::move(w));
  }
  return out;
}

std::string_view ProvenanceName(Provenance p) {
  return p == Provenance::kSource ? "source" : "asr";
}

Provenance ParseProvenance(std::string_view name) {
  if (name == "source") return Provenance::kSource;
  if (name == "asr") return Provenance::kAsr;
  throw Error(ErrorKind::kDataIntegrity, "unknown provenance " + std::string(name));
}

std::vector<SilenceGap> FindSilenceGaps(std::span<const double> samples, int sample_rate,
                                        const VadConfig& config) {
  if (sample_rate <= 0 || config.frame_s <= 0.0 || config.min_gap_s <= 0.0) {
    throw Error(ErrorKind::kConfig, "vad: invalid settings");
  }
  const auto frame = std::max<size_t>(1, std::lround(config.frame_s * sample_rate));
  std::vector<SilenceGap> gaps;
  size_t run_start = 0;
  size_t run_frames = 0;
  double run_db = 0.0;
  auto close = [&](size_t end_sample) {
    const double dur = static_cast<double>(end_sample - run_start) / sample_rate;
    if (run_frames > 0 && dur + 1e-9 >= config.min_gap_s) {
      gaps.push_back({static_cast<double>(run_start) / sample_rate,
                      static_cast<double>(end_sample) / sample_rate, run_db / run_frames});
    }
    run_frames = 0;
    run_db = 0.0;
  };
  for (size_t pos = 0; pos < samples.size(); pos += frame) {
    const size_t n = std::min(frame, samples.size() - pos);
    double energy = 0.0;
    for (size_t i = pos; i < pos + n; ++i) energy += samples[i] * samples[i];
    const double rms = std::sqrt(energy / n);
    const double db = 20.0 * std::log10(std::max(rms, 1e-10));
    if (db < config.threshold_dbfs) {
      if (run_frames == 0) run_start = pos;
      ++run_frames;
      run_db += db;
    } else {
      close(pos);
    }
  }
  close(samples.size());
  return gaps;
}

void SegmentConfig::Validate() const {
  if (!(max_fragment_s > 0.0 && split_above_s > 0.0 && max_segment_s >= max_fragment_s)) {
    throw Error(ErrorKind::kConfig,
                "segment: need positive limits and max_segment_s >= max_fragment_s");
  }
}

std::vector<TranscriptSegment> SplitLongFragments(const std::string& recording,
                                                  const std::string& speaker_id,
                                                  const std::vector<AsrFragment>& fragments,
                                                  std::span<const double> samples,
                                                  int sample_rate,
                                                  const SegmentConfig& config) {
  config.Validate();
  std::vector<TranscriptSegment> out;
  for (const auto& f : fragments) {
    if (!(f.duration_s() > 0.0) || f.duration_s() > config.max_fragment_s + 1e-9) {
      throw Error(ErrorKind::kData, recording + ": fragment duration " +
                                        std::to_string(f.duration_s()) + " s out of range");
    }
    SplitRecursive(recording, speaker_id, f.start_s, f.end_s, f.words, samples,
                   sample_rate, config, out);
  }
  return out;
}

std::vector<TranscriptSegment> Reassemble(const std::vector<TranscriptSegment>& segments,
                                          double max_segment_s) {
  std::vector<TranscriptSegment> out;
  for (const auto& s : segments) {
    if (!out.empty()) {
      auto& cur = out.back();
      if (cur.recording == s.recording && cur.speaker_id == s.speaker_id &&
          s.start_s >= cur.end_s - 1e-9 && s.end_s - cur.start_s <= max_segment_s + 1e-9) {
        cur.end_s = s.end_s;
        cur.asr_text = Join(cur.asr_text, s.asr_text);
        if (cur.restored_text && s.restored_text) {
          cur.restored_text = Join(*cur.restored_text, *s.restored_text);
        } else {
          cur.restored_text.reset();
        }
        cur.unsplit_warning = cur.unsplit_warning || s.unsplit_warning;
        continue;
      }
    }
    out.push_back(s);
  }
  return out;
}

std::vector<TranscriptSegment> Segment(const std::string& recording,
                                       const std::string& speaker_id,
                                       const std::vector<AsrFragment>& fragments,
                                       std::span<const double> samples, int sample_rate,
                                       const SegmentConfig& config) {
  return Reassemble(
      SplitLongFragments(recording, speaker_id, fragments, samples, sample_rate, config),
      config.max_segment_s);
}

size_t LevenshteinDistance(std::string_view a, std::string_view b) {
  std::vector<size_t> row(b.size() + 1);
  std::iota(row.begin(), row.end(), size_t{0});
  for (size_t i = 1; i <= a.size(); ++i) {
    size_t diag = row[0];
    row[0] = i;
    for (size_t j = 1; j <= b.size(); ++j) {
      const size_t up = row[j];
      row[j] = std::min({row[j] + 1, row[j - 1] + 1, diag + (a[i - 1] == b[j - 1] ? 0 : 1)});
      diag = up;
    }
  }
  return row[b.size()];
}

double NormalizedEditDistance(std::string_view a, std::string_view b) {
  const size_t longest = std::max(a.size(), b.size());
  if (longest == 0) return 0.0;
  return static_cast<double>(LevenshteinDistance(a, b)) / longest;
}

std::string NormalizeForComparison(std::string_view text) {
  std::string out;
  bool pending_space = false;
  for (char c : text) {
    const auto u = static_cast<unsigned char>(c);
    if (std::isalnum(u) || u >= 0x80) {
      if (pending_space && !out.empty()) out += ' ';
      pending_space = false;
      out += static_cast<char>(std::tolower(u));
    } else if (IsSpace(c)) {
      pending_space = true;
    } else if (c == '-' || c == '/') {
      pending_space = true;
    }
  }
  return out;
}

void RestoreConfig::Validate() const {
  if (!(max_len_factor >= 1.0) || !(max_norm_edit >= 0.0)) {
    throw Error(ErrorKind::kConfig, "restore: need max_len_factor >= 1, max_norm_edit >= 0");
  }
}

RestoreResult RestoreText(std::string_view asr_sentence, std::string_view source_sentence,
                          const RestoreConfig& config) {
  config.Validate();
  const std::string a = NormalizeForComparison(asr_sentence);
  const std::string s = NormalizeForComparison(source_sentence);
  RestoreResult r;
  r.text = std::string(asr_sentence);
  if (a.empty() || s.empty()) {
    r.normalized_distance = 1.0;
    return r;
  }
  r.length_ratio = static_cast<double>(s.size()) / a.size();
  r.normalized_distance = NormalizedEditDistance(a, s);
  const bool length_ok =
      r.length_ratio <= config.max_len_factor && r.length_ratio >= 1.0 / config.max_len_factor;
  if (length_ok && r.normalized_distance <= config.max_norm_edit) {
    r.text = std::string(source_sentence);
    r.provenance = Provenance::kSource;
  }
  return r;
}

std::vector<std::string> SplitSentences(std::string_view text) {
  std::vector<std::string> out;
  size_t begin = 0;
  size_t i = 0;
  while (i < text.size()) {
    const char c = text[i];
    if (c != '.' && c != '!' && c != '?') {
      ++i;
      continue;
    }
    size_t j = i;
    while (j < text.size() && (text[j] == '.' || text[j] == '!' || text[j] == '?')) ++j;
    const bool single_period = c == '.' && j == i + 1;
    while (j < text.size() && IsClosing(text[j])) ++j;
    bool boundary = j == text.size() || IsSpace(text[j]);
    if (boundary && single_period) {
      size_t w = i;
      while (w > begin && !IsSpace(text[w - 1])) --w;
      std::string word;
      for (size_t k = w; k < i; ++k) {
        const char ch = text[k];
        if (ch == '"' || ch == '\'' || ch == '(') continue;
        word += static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
      }
      if (Abbreviations().count(word) ||
          (word.size() == 1 && std::isalpha(static_cast<unsigned char>(word[0])))) {
        boundary = false;
      }
    }
    if (boundary) {
      size_t k = j;
      while (k < text.size() && IsSpace(text[k])) ++k;
      if (k < text.size() && std::islower(static_cast<unsigned char>(text[k]))) {
        boundary = false;
      }
    }
    if (boundary) {
      std::string s = Trim(text.substr(begin, j - begin));
      if (!s.empty()) out.push_back(std::move(s));
      begin = j;
    }
    i = j;
  }
  std::string tail = Trim(text.substr(begin));
  if (!tail.empty()) out.push_back(std::move(tail));
  return out;
}

std::vector<std::pair<size_t, size_t>> AlignSentences(const std::vector<std::string>& asr_doc,
                                                      const std::vector<std::string>& source_doc,
                                                      const AlignConfig& config) {
  if (!(config.skip_penalty >= 0.0)) {
    throw Error(ErrorKind::kConfig, "align: skip_penalty must be >= 0");
  }
  const size_t n = asr_doc.size();
  const size_t m = source_doc.size();
  if (n == 0 || m == 0) return {};
  std::vector<std::string> a(n);
  std::vector<std::string> s(m);
  for (size_t i = 0; i < n; ++i) a[i] = NormalizeForComparison(asr_doc[i]);
  for (size_t j = 0; j < m; ++j) s[j] = NormalizeForComparison(source_doc[j]);
  enum Move : uint8_t { kMatch, kSkipAsr, kSkipSource };
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<std::vector<double>> cost(n + 1, std::vector<double>(m + 1, inf));
  std::vector<std::vector<Move>> move(n + 1, std::vector<Move>(m + 1, kMatch));
  cost[0][0] = 0.0;
  const double p = config.skip_penalty;
  for (size_t i = 0; i <= n; ++i) {
    for (size_t j = 0; j <= m; ++j) {
      if (i == 0 && j == 0) continue;
      double best = inf;
      Move choice = kMatch;
      if (i > 0 && j > 0) {
        best = cost[i - 1][j - 1] + NormalizedEditDistance(a[i - 1], s[j - 1]);
      }
      if (i > 0 && cost[i - 1][j] + p < best) {
        best = cost[i - 1][j] + p;
        choice = kSkipAsr;
      }
      if (j > 0 && cost[i][j - 1] + p < best) {
        best = cost[i][j - 1] + p;
        choice = kSkipSource;
      }
      cost[i][j] = best;
      move[i][j] = choice;
    }
  }
  std::vector<std::pair<size_t, size_t>> pairs;
  size_t i = n;
  size_t j = m;
  while (i > 0 || j > 0) {
    switch (move[i][j]) {
      case kMatch:
        pairs.emplace_back(i - 1, j - 1);
        --i;
        --j;
        break;
      case kSkipAsr:
        --i;
        break;
      case kSkipSource:
        --j;
        break;
    }
  }
  std::reverse(pairs.begin(), pairs.end());
  return pairs;
}

double AlignmentCost(const std::vector<std::string>& asr_doc,
                     const std::vector<std::string>& source_doc,
                     const std::vector<std::pair<size_t, size_t>>& pairs,
                     const AlignConfig& config) {
  double cost = 0.0;
  for (const auto& [i, j] : pairs) {
    cost += NormalizedEditDistance(NormalizeForComparison(asr_doc.at(i)),
                                   NormalizeForComparison(source_doc.at(j)));
  }
  const size_t skipped = asr_doc.size() + source_doc.size() - 2 * pairs.size();
  return cost + config.skip_penalty * static_cast<double>(skipped);
}

std::map<std::string, double> SpeakerDurations(const Dataset& ds) {
  std::map<std::string, double> totals;
  for (const auto& e : ds.entries) totals[e.segment.speaker_id] += e.segment.duration_s();
  return totals;
}

Dataset SpeakerCap(const Dataset& ds, double cap_seconds, uint64_t seed) {
  if (!(cap_seconds > 0.0)) throw Error(ErrorKind::kConfig, "speaker cap must be positive");
  std::map<std::string, std::vector<size_t>> by_speaker;
  for (size_t i = 0; i < ds.entries.size(); ++i) {
    by_speaker[ds.entries[i].segment.speaker_id].push_back(i);
  }
  std::vector<bool> keep(ds.entries.size(), true);
  std::mt19937_64 rng(seed);
  for (auto& [speaker, indices] : by_speaker) {
    double total = 0.0;
    for (size_t i : indices) total += ds.entries[i].segment.duration_s();
    if (total <= cap_seconds) continue;
    std::shuffle(indices.begin(), indices.end(), rng);
    double kept = 0.0;
    for (size_t i : indices) {
      const double d = ds.entries[i].segment.duration_s();
      if (kept + d <= cap_seconds + 1e-9) {
        kept += d;
      } else {
        keep[i] = false;
      }
    }
  }
  Dataset out;
  for (size_t i = 0; i < ds.entries.size(); ++i) {
    if (keep[i]) out.entries.push_back(ds.entries[i]);
  }
  return out;
}

void WriteManifest(const std::filesystem::path& path, const Dataset& ds) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw Error(ErrorKind::kIo, "cannot write " + path.string());
  for (const auto& e : ds.entries) {
    const auto& s = e.segment;
    out << nlohmann::json{{"audio_path", e.audio_path},
                          {"start_s", s.start_s},
                          {"end_s", s.end_s},
                          {"speaker_id", s.speaker_id},
                          {"text", s.text()},
                          {"provenance", ProvenanceName(s.provenance())},
                          {"asr_text", s.asr_text}}
               .dump()
        << "\n";
  }
  if (!out) throw Error(ErrorKind::kIo, "cannot write " + path.string());
}

Dataset ReadManifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::kDependency, "no manifest at " + path.string());
  Dataset ds;
  std::string line;
  size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      DatasetEntry e;
      e.audio_path = j.at("audio_path");
      auto& s = e.segment;
      s.recording = e.audio_path;
      s.start_s = j.at("start_s");
      s.end_s = j.at("end_s");
      s.speaker_id = j.at("speaker_id");
      const std::string text = j.at("text");
      s.asr_text = j.value("asr_text", text);
      if (ParseProvenance(j.at("provenance").get<std::string>()) == Provenance::kSource) {
        s.restored_text = text;
      }
      if (!(s.duration_s() > 0.0)) {
        throw Error(ErrorKind::kDataIntegrity, "non-positive duration");
      }
      ds.entries.push_back(std::move(e));
    } catch (const nlohmann::json::exception& ex) {
      throw Error(ErrorKind::kDataIntegrity,
                  path.string() + ":" + std::to_string(line_no) + ": " + ex.what());
    } catch (const Error& ex) {
      throw Error(ErrorKind::kDataIntegrity,
                  path.string() + ":" + std::to_string(line_no) + ": " + ex.what());
    }
  }
  return ds;
}

audio::Waveform LoadSegmentAudio(const std::filesystem::path& corpus_root,
                                 const DatasetEntry& entry) {
  const audio::Waveform full = audio::LoadAudio(corpus_root / entry.audio_path);
  const auto clamp = [&](double t) {
    return static_cast<size_t>(std::clamp<double>(std::lround(t * full.sample_rate), 0,
                                                  full.samples.size()));
  };
  const size_t b = clamp(entry.segment.start_s);
  const size_t e = std::max(b, clamp(entry.segment.end_s));
  audio::Waveform out;
  out.sample_rate = full.sample_rate;
  out.samples.assign(full.samples.begin() + b, full.samples.begin() + e);
  return out;
}

void PrepConfig::Validate() const {
  segment.Validate();
  restore.Validate();
  if (!(align.skip_penalty >= 0.0)) throw Error(ErrorKind::kConfig, "align: bad penalty");
  if (!(cap_hours > 0.0)) throw Error(ErrorKind::kConfig, "cap_hours must be positive");
}

PrepConfig PrepConfig::FromJson(const nlohmann::json& j) {
  PrepConfig c;
  const auto seg = j.value("segment", nlohmann::json::object());
  c.segment.max_fragment_s = seg.value("max_fragment_s", c.segment.max_fragment_s);
  c.segment.split_above_s = seg.value("split_above_s", c.segment.split_above_s);
  c.segment.max_segment_s = seg.value("max_segment_s", c.segment.max_segment_s);
  const auto vad = seg.value("vad", nlohmann::json::object());
  c.segment.vad.frame_s = vad.value("frame_s", c.segment.vad.frame_s);
  c.segment.vad.threshold_dbfs = vad.value("threshold_dbfs", c.segment.vad.threshold_dbfs);
  c.segment.vad.min_gap_s = vad.value("min_gap_s", c.segment.vad.min_gap_s);
  const auto restore = j.value("restore", nlohmann::json::object());
  c.restore.max_len_factor = restore.value("max_len_factor", c.restore.max_len_factor);
  c.restore.max_norm_edit = restore.value("max_norm_edit", c.restore.max_norm_edit);
  const auto align = j.value("align", nlohmann::json::object());
  c.align.skip_penalty = align.value("skip_penalty", c.align.skip_penalty);
  c.cap_hours = j.value("cap_hours", c.cap_hours);
  c.seed = j.value("seed", c.seed);
  c.Validate();
  return c;
}

nlohmann::json PrepConfig::ToJson() const {
  return {{"segment",
           {{"max_fragment_s", segment.max_fragment_s},
            {"split_above_s", segment.split_above_s},
            {"max_segment_s", segment.max_segment_s},
            {"vad",
             {{"frame_s", segment.vad.frame_s},
              {"threshold_dbfs", segment.vad.threshold_dbfs},
              {"min_gap_s", segment.vad.min_gap_s}}}}},
          {"restore",
           {{"max_len_factor", restore.max_len_factor},
            {"max_norm_edit", restore.max_norm_edit}}},
          {"align", {{"skip_penalty", align.skip_penalty}}},
          {"cap_hours", cap_hours},
          {"seed", seed}};
}

nlohmann::json PrepReport::ToJson() const {
  return {{"recordings", recordings},
          {"segments", segments},
          {"restored", restored},
          {"restored_fraction", restored_fraction()},
          {"unsplit_warnings", unsplit_warnings},
          {"capped_segments", capped_segments},
          {"total_seconds", total_seconds}};
}

PrepResult PrepareCorpus(const std::filesystem::path& corpus_dir, const AsrBackend& asr,
                         const PrepConfig& config) {
  config.Validate();
  std::ifstream meta(corpus_dir / "metadata.jsonl");
  if (!meta) {
    throw Error(ErrorKind::kDependency, "no metadata.jsonl in " + corpus_dir.string());
  }
  PrepResult result;
  Dataset all;
  std::string line;
  while (std::getline(meta, line)) {
    if (line.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorKind::kDataIntegrity, "metadata.jsonl: " + std::string(e.what()));
    }
    const std::string rel = j.at("audio_path");
    const std::string speaker = j.at("speaker_id");
    const std::string source = j.value("source_text", std::string());
    const audio::Waveform wave = audio::LoadAudio(corpus_dir / rel);
    const std::vector<double> samples = audio::ToDouble(wave);
    auto segments = Segment(rel, speaker,
                            asr.Transcribe(rel, wave, config.segment.max_fragment_s),
                            samples, wave.sample_rate, config.segment);
    std::vector<std::string> asr_doc;
    for (const auto& s : segments) asr_doc.push_back(s.asr_text);
    const auto source_doc = SplitSentences(source);
    for (const auto& [i, k] : AlignSentences(asr_doc, source_doc, config.align)) {
      const RestoreResult r = RestoreText(segments[i].asr_text, source_doc[k], config.restore);
      if (r.provenance == Provenance::kSource) segments[i].restored_text = r.text;
    }
    ++result.report.recordings;
    for (auto& s : segments) {
      if (s.unsplit_warning) ++result.report.unsplit_warnings;
      all.entries.push_back({rel, std::move(s)});
    }
  }
  result.dataset = SpeakerCap(all, config.cap_hours * 3600.0, config.seed);
  auto& r = result.report;
  r.capped_segments = all.size() - result.dataset.size();
  r.segments = result.dataset.size();
  for (const auto& e : result.dataset.entries) {
    if (e.segment.restored_text) ++r.restored;
    r.total_seconds += e.segment.duration_s();
  }
  return result;
}

PrepResult PrepareCorpus(const std::filesystem::path& corpus_dir, const PrepConfig& config) {
  return PrepareCorpus(corpus_dir, LookupAsr::FromFile(corpus_dir / "asr.json"), config);
}

}  // namespace basetts::data
