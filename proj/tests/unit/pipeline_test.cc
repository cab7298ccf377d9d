#include "basetts/data/pipeline.h"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>

#include "basetts/error.h"
#include "gtest/gtest.h"
#include "text_oracle.h"

namespace basetts::data {
namespace {

constexpr int kRate = 24000;

// Tone everywhere except the given silent intervals.
std::vector<double> ToneWithGaps(double seconds,
                                 const std::vector<std::pair<double, double>>& gaps,
                                 double gap_level = 0.0) {
  std::vector<double> x(static_cast<size_t>(seconds * kRate));
  for (size_t i = 0; i < x.size(); ++i) {
    const double t = static_cast<double>(i) / kRate;
    bool silent = false;
    for (const auto& [a, b] : gaps) silent |= t >= a && t < b;
    x[i] = silent ? gap_level * std::sin(2 * M_PI * 300 * t)
                  : 0.3 * std::sin(2 * M_PI * 200 * t);
  }
  return x;
}

AsrFragment Fragment(double start, double end, int words = 0) {
  AsrFragment f{start, end, {}};
  for (int w = 0; w < words; ++w) {
    const double a = start + (end - start) * w / words;
    const double b = start + (end - start) * (w + 1) / words;
    f.words.push_back({"w" + std::to_string(w), a, b});
  }
  return f;
}

TranscriptSegment Seg(const std::string& rec, double start, double end,
                      const std::string& speaker = "s") {
  TranscriptSegment s;
  s.recording = rec;
  s.speaker_id = speaker;
  s.start_s = start;
  s.end_s = end;
  s.asr_text = "x";
  return s;
}

std::vector<double> Durations(const std::vector<TranscriptSegment>& segs) {
  std::vector<double> d;
  for (const auto& s : segs) d.push_back(s.duration_s());
  return d;
}

TEST(Segmentation, GreedyReassembly) {
  const auto out = Reassemble({Seg("r", 0, 15), Seg("r", 15, 30), Seg("r", 30, 45)});
  EXPECT_EQ(Durations(out), (std::vector<double>{30, 15}));
  EXPECT_EQ(out[0].asr_text, "x x");
}

TEST(Segmentation, ReassemblyRespectsRecordingAndSpeaker) {
  const auto out = Reassemble({Seg("a", 0, 5), Seg("b", 5, 10), Seg("b", 10, 12, "t")});
  EXPECT_EQ(out.size(), 3u);
}

TEST(Segmentation, ShortFragmentIsUnchanged) {
  const auto samples = ToneWithGaps(5, {});
  const auto out = Segment("r", "s", {Fragment(0, 5, 3)}, samples, kRate);
  ASSERT_EQ(out.size(), 1u);
  EXPECT_EQ(out[0].start_s, 0.0);
  EXPECT_EQ(out[0].end_s, 5.0);
  EXPECT_EQ(out[0].asr_text, "w0 w1 w2");
}

TEST(Segmentation, SplitsAtSilenceGap) {
  const auto samples = ToneWithGaps(25, {{11.75, 12.25}});
  const auto out = SplitLongFragments("r", "s", {Fragment(0, 25, 25)}, samples, kRate);
  ASSERT_EQ(out.size(), 2u);
  EXPECT_NEAR(out[0].duration_s(), 12.0, 1e-9);
  EXPECT_NEAR(out[1].duration_s(), 13.0, 1e-9);
  EXPECT_EQ(out[1].start_s, out[0].end_s);
  EXPECT_FALSE(out[0].unsplit_warning);
  EXPECT_EQ(out[0].asr_text.substr(0, 3), "w0 ");
  EXPECT_EQ(out[1].asr_text.substr(0, 4), "w12 ");
}

TEST(Segmentation, ChoosesLowestEnergyGap) {
  const auto loud_gap = ToneWithGaps(25, {{5.0, 5.5}}, 0.005);
  auto samples = ToneWithGaps(25, {{17.0, 17.5}});
  for (size_t i = 5 * kRate; i < static_cast<size_t>(5.5 * kRate); ++i) samples[i] = loud_gap[i];
  const auto out = SplitLongFragments("r", "s", {Fragment(0, 25)}, samples, kRate);
  ASSERT_EQ(out.size(), 2u);
  EXPECT_NEAR(out[0].end_s, 17.25, 1e-9);
}

TEST(Segmentation, NoGapKeepsFragmentWithWarning) {
  const auto samples = ToneWithGaps(25, {});
  const auto out = SplitLongFragments("r", "s", {Fragment(0, 25)}, samples, kRate);
  ASSERT_EQ(out.size(), 1u);
  EXPECT_TRUE(out[0].unsplit_warning);
  EXPECT_EQ(out[0].duration_s(), 25.0);
}

TEST(Segmentation, ShortGapIsIgnored) {
  const auto samples = ToneWithGaps(25, {{12.0, 12.2}});
  const auto out = SplitLongFragments("r", "s", {Fragment(0, 25)}, samples, kRate);
  EXPECT_EQ(out.size(), 1u);
}

TEST(Segmentation, RejectsOverlongFragment) {
  const auto samples = ToneWithGaps(31, {});
  try {
    Segment("r", "s", {Fragment(0, 31)}, samples, kRate);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kData);
  }
}

TEST(Segmentation, RandomRecordingsStayWithinLimits) {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> dur(0.5, 30.0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (int trial = 0; trial < 30; ++trial) {
    std::vector<AsrFragment> frags;
    std::vector<std::pair<double, double>> gaps;
    double t = 0.0;
    for (int k = 0; k < 6; ++k) {
      const double d = dur(rng);
      frags.push_back(Fragment(t, t + d, 1 + static_cast<int>(d)));
      if (d > 20 && unit(rng) < 0.7) {
        const double g = t + 2 + unit(rng) * (d - 5);
        gaps.emplace_back(g, g + 0.4);
      }
      t += d;
    }
    const auto samples = ToneWithGaps(t + 0.1, gaps);
    const auto split = SplitLongFragments("r", "s", frags, samples, kRate);
    size_t words = 0;
    for (const auto& f : frags) words += f.words.size();
    size_t split_words = 0;
    for (size_t i = 0; i < split.size(); ++i) {
      EXPECT_TRUE(split[i].duration_s() <= 20.0 || split[i].unsplit_warning);
      if (!split[i].asr_text.empty()) {
        split_words += std::count(split[i].asr_text.begin(), split[i].asr_text.end(), ' ') + 1;
      }
      if (i > 0) EXPECT_GE(split[i].start_s, split[i - 1].end_s - 1e-9);
    }
    EXPECT_EQ(split_words, words);
    const auto out = Reassemble(split);
    double covered = 0.0;
    for (size_t i = 0; i < out.size(); ++i) {
      EXPECT_GT(out[i].duration_s(), 0.0);
      EXPECT_LE(out[i].duration_s(), 40.0 + 1e-9);
      if (i > 0) EXPECT_GE(out[i].start_s, out[i - 1].end_s - 1e-9);
      covered += out[i].duration_s();
    }
    EXPECT_NEAR(covered, t, 1e-6);
  }
}

TEST(SilenceGaps, DetectsGapBounds) {
  const auto samples = ToneWithGaps(3, {{1.0, 1.5}});
  const auto gaps = FindSilenceGaps(samples, kRate);
  ASSERT_EQ(gaps.size(), 1u);
  EXPECT_NEAR(gaps[0].start_s, 1.0, 1e-9);
  EXPECT_NEAR(gaps[0].end_s, 1.5, 1e-9);
  EXPECT_LT(gaps[0].mean_dbfs, -100.0);
}

TEST(EditDistance, KittenSitting) {
  EXPECT_EQ(LevenshteinDistance("kitten", "sitting"), 3u);
  EXPECT_NEAR(NormalizedEditDistance("kitten", "sitting"), 3.0 / 7.0, 1e-15);
  EXPECT_EQ(LevenshteinDistance("", "abc"), 3u);
  EXPECT_EQ(NormalizedEditDistance("", ""), 0.0);
}

TEST(EditDistance, MatchesRecursiveDefinition) {
  std::mt19937_64 rng(5);
  std::uniform_int_distribution<int> len(0, 6);
  std::uniform_int_distribution<int> ch(0, 2);
  for (int i = 0; i < 300; ++i) {
    std::string a(len(rng), 'a');
    std::string b(len(rng), 'a');
    for (char& c : a) c = static_cast<char>('a' + ch(rng));
    for (char& c : b) c = static_cast<char>('a' + ch(rng));
    ASSERT_EQ(LevenshteinDistance(a, b), oracle::RecursiveLevenshtein(a, b)) << a << "|" << b;
  }
}

TEST(RestoreText, Gates) {
  struct Case {
    std::string asr;
    std::string source;
    Provenance expected;
  };
  const std::vector<Case> table = {
      {"the cat sat", "the cat sat", Provenance::kSource},
      {"the cat sat on the mat", "The cat sat on the mat.", Provenance::kSource},
      {"she said hello to him", "\"Hello,\" she said to him.", Provenance::kAsr},
      {"abcdefghij", std::string(50, 'a'), Provenance::kAsr},
      {"kitten", "sitting", Provenance::kAsr},
      {"one two three four five", "One, two, three, four, five!", Provenance::kSource},
      {"one two three four five", "One two three for five.", Provenance::kSource},
      {"completely different words", "Nothing alike here at all.", Provenance::kAsr},
  };
  for (const auto& c : table) {
    const RestoreResult r = RestoreText(c.asr, c.source);
    EXPECT_EQ(r.provenance, c.expected) << c.asr << " | " << c.source;
    EXPECT_EQ(r.text, c.expected == Provenance::kSource ? c.source : c.asr);
  }
  const RestoreResult same = RestoreText("hello there", "hello there");
  EXPECT_EQ(same.normalized_distance, 0.0);
}

TEST(RestoreText, LengthFactorBoundary) {
  RestoreConfig loose;
  loose.max_norm_edit = 1.0;
  EXPECT_EQ(RestoreText("abc", "abcabcabc", loose).provenance, Provenance::kSource);
  EXPECT_EQ(RestoreText("abc", "abcabcabca", loose).provenance, Provenance::kAsr);
  EXPECT_EQ(RestoreText("abcabcabc", "abc", loose).provenance, Provenance::kSource);
  EXPECT_EQ(RestoreText("abcabcabca", "abc", loose).provenance, Provenance::kAsr);
}

TEST(RestoreText, ThresholdBoundary) {
  RestoreConfig c;
  c.max_norm_edit = 0.2;
  EXPECT_EQ(RestoreText("abcde", "abcdx", c).provenance, Provenance::kSource);
  EXPECT_EQ(RestoreText("abcde", "abcxx", c).provenance, Provenance::kAsr);
  c.max_norm_edit = 3.0 / 7.0;
  EXPECT_EQ(RestoreText("kitten", "sitting", c).provenance, Provenance::kSource);
}

TEST(Sentences, Splitting) {
  EXPECT_EQ(SplitSentences("One. Two! Three?"),
            (std::vector<std::string>{"One.", "Two!", "Three?"}));
  EXPECT_EQ(SplitSentences("Mr. Smith came. He left."),
            (std::vector<std::string>{"Mr. Smith came.", "He left."}));
  EXPECT_EQ(SplitSentences("\"Stop!\" She ran. Then what?!"),
            (std::vector<std::string>{"\"Stop!\"", "She ran.", "Then what?!"}));
  EXPECT_EQ(SplitSentences("He said \"wait!\" and left."),
            (std::vector<std::string>{"He said \"wait!\" and left."}));
  EXPECT_EQ(SplitSentences("Pi is 3.14 today. Yes"),
            (std::vector<std::string>{"Pi is 3.14 today.", "Yes"}));
  EXPECT_TRUE(SplitSentences("   ").empty());
}

std::vector<std::string> Doc(std::initializer_list<const char*> s) { return {s.begin(), s.end()}; }

TEST(Alignment, IdentityAndInsertion) {
  const auto doc = Doc({"the cat sat", "a dog ran far", "birds sing loudly", "rain fell"});
  const auto id = AlignSentences(doc, doc);
  ASSERT_EQ(id.size(), 4u);
  for (size_t i = 0; i < 4; ++i) EXPECT_EQ(id[i], std::make_pair(i, i));

  auto source = doc;
  source.insert(source.begin() + 2, "an entirely unrelated interjection appears");
  const auto pairs = AlignSentences(doc, source);
  EXPECT_EQ(pairs, (oracle::Pairs{{0, 0}, {1, 1}, {2, 3}, {3, 4}}));
  EXPECT_TRUE(AlignSentences({}, doc).empty());
  EXPECT_TRUE(AlignSentences(doc, {}).empty());
}

TEST(Alignment, DisjointPairsAreRejectedByRestore) {
  const auto a = Doc({"alpha beta", "gamma delta", "epsilon"});
  const auto b = Doc({"Zzz qqq.", "Xxx yyy www.", "Vvv."});
  for (const auto& [i, j] : AlignSentences(a, b)) {
    EXPECT_EQ(RestoreText(a[i], b[j]).provenance, Provenance::kAsr);
  }
}

TEST(Alignment, MatchesExhaustiveOracle) {
  std::mt19937_64 rng(9);
  const std::vector<std::string> pool = {"the cat sat", "the cat sat down", "a dog",
                                         "a dog ran",   "rain",             "rain fell",
                                         "xyz",         "birds sing"};
  std::uniform_int_distribution<size_t> pick(0, pool.size() - 1);
  std::uniform_int_distribution<int> len(0, 6);
  for (int trial = 0; trial < 80; ++trial) {
    std::vector<std::string> a(len(rng));
    std::vector<std::string> b(len(rng));
    for (auto& s : a) s = pool[pick(rng)];
    for (auto& s : b) s = pool[pick(rng)];
    const auto pairs = AlignSentences(a, b);
    for (size_t k = 1; k < pairs.size(); ++k) {
      EXPECT_LT(pairs[k - 1].first, pairs[k].first);
      EXPECT_LT(pairs[k - 1].second, pairs[k].second);
    }
    double best = std::numeric_limits<double>::infinity();
    oracle::EnumerateAlignments(a.size(), b.size(), [&](const oracle::Pairs& p) {
      best = std::min(best, AlignmentCost(a, b, p));
    });
    EXPECT_NEAR(AlignmentCost(a, b, pairs), best, 1e-12);
  }
}

Dataset HourDataset(const std::string& speaker, int segments, double hours_each) {
  Dataset ds;
  for (int i = 0; i < segments; ++i) {
    ds.entries.push_back({"a.wav", Seg("a.wav", i * hours_each * 3600,
                                       (i + 1) * hours_each * 3600, speaker)});
  }
  return ds;
}

TEST(SpeakerCap, Examples) {
  const Dataset under = HourDataset("u", 150, 1.0);
  EXPECT_EQ(SpeakerCap(under, 200 * 3600.0, 1).size(), 150u);
  const Dataset over = HourDataset("o", 10, 1.0);
  const Dataset capped = SpeakerCap(over, 5 * 3600.0, 1);
  EXPECT_EQ(capped.size(), 5u);
  const Dataset again = SpeakerCap(over, 5 * 3600.0, 1);
  for (size_t i = 0; i < capped.size(); ++i) {
    EXPECT_EQ(capped.entries[i].segment.start_s, again.entries[i].segment.start_s);
  }
  EXPECT_THROW(SpeakerCap(over, 0.0, 1), Error);
}

TEST(SpeakerCap, Properties) {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> dur(1.0, 40.0);
  for (int trial = 0; trial < 20; ++trial) {
    Dataset ds;
    for (int i = 0; i < 120; ++i) {
      const std::string spk = "spk" + std::to_string(i % 4);
      const double start = i * 50.0;
      ds.entries.push_back({"r.wav", Seg("r.wav", start, start + dur(rng), spk)});
    }
    const double cap = 800.0;
    const Dataset out = SpeakerCap(ds, cap, trial);
    const auto before = SpeakerDurations(ds);
    for (const auto& [spk, total] : SpeakerDurations(out)) {
      EXPECT_LE(total, cap + 1e-9);
      if (before.at(spk) <= cap) EXPECT_EQ(total, before.at(spk));
    }
    for (size_t i = 1; i < out.size(); ++i) {
      EXPECT_LT(out.entries[i - 1].segment.start_s, out.entries[i].segment.start_s);
    }
  }
}

TEST(Manifest, RoundTripAndValidation) {
  Dataset ds;
  auto a = Seg("wavs/a.wav", 0.5, 3.25, "spk0");
  a.asr_text = "hello world";
  a.restored_text = "Hello, world.";
  auto b = Seg("wavs/b.wav", 0, 2, "spk1");
  b.asr_text = "plain";
  ds.entries = {{"wavs/a.wav", a}, {"wavs/b.wav", b}};
  const auto dir = std::filesystem::temp_directory_path() / "basetts_manifest_test";
  std::filesystem::create_directories(dir);
  WriteManifest(dir / "m.jsonl", ds);
  const Dataset back = ReadManifest(dir / "m.jsonl");
  ASSERT_EQ(back.size(), 2u);
  EXPECT_EQ(back.entries[0].segment.text(), "Hello, world.");
  EXPECT_EQ(back.entries[0].segment.asr_text, "hello world");
  EXPECT_EQ(back.entries[0].segment.provenance(), Provenance::kSource);
  EXPECT_EQ(back.entries[1].segment.provenance(), Provenance::kAsr);
  EXPECT_EQ(back.entries[0].segment.end_s, 3.25);
  std::ofstream(dir / "bad.jsonl") << "{\"audio_path\": 3}\n";
  try {
    ReadManifest(dir / "bad.jsonl");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kDataIntegrity);
  }
  EXPECT_THROW(ReadManifest(dir / "missing.jsonl"), Error);
  std::filesystem::remove_all(dir);
}

TEST(PrepConfig, JsonRoundTrip) {
  PrepConfig c;
  c.cap_hours = 12;
  c.restore.max_norm_edit = 0.3;
  c.segment.vad.min_gap_s = 0.5;
  const PrepConfig back = PrepConfig::FromJson(c.ToJson());
  EXPECT_EQ(back.ToJson(), c.ToJson());
  EXPECT_THROW(PrepConfig::FromJson({{"cap_hours", -1}}), Error);
}

TEST(PrepareCorpus, FixtureEndToEnd) {
  FixtureConfig fc;
  fc.utterances_per_speaker = 3;
  const Fixture fixture = GenerateFixture(fc);
  const auto dir = std::filesystem::temp_directory_path() / "basetts_prep_test";
  std::filesystem::remove_all(dir);
  WriteFixture(fixture, dir);
  const PrepResult r = PrepareCorpus(dir);
  EXPECT_EQ(r.report.recordings, 6u);
  EXPECT_EQ(r.dataset.size(), 6u);
  EXPECT_EQ(r.report.restored, 6u);
  EXPECT_DOUBLE_EQ(r.report.restored_fraction(), 1.0);
  for (const auto& e : r.dataset.entries) {
    EXPECT_GT(e.segment.duration_s(), 0.0);
    EXPECT_LE(e.segment.duration_s(), 40.0);
    const auto wave = LoadSegmentAudio(dir, e);
    EXPECT_NEAR(wave.duration_s(), e.segment.duration_s(), 1.0 / kRate);
  }
  PrepConfig capped;
  capped.cap_hours = 4.0 / 3600;
  const PrepResult c = PrepareCorpus(dir, capped);
  for (const auto& [spk, total] : SpeakerDurations(c.dataset)) EXPECT_LE(total, 4.0);
  EXPECT_EQ(c.report.capped_segments + c.report.segments, 6u);
  std::filesystem::remove_all(dir);
}

TEST(PrepareCorpus, MissingInputs) {
  const auto dir = std::filesystem::temp_directory_path() / "basetts_prep_missing";
  std::filesystem::create_directories(dir);
  try {
    PrepareCorpus(dir);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kDependency);
  }
  std::filesystem::remove_all(dir);
}

}  // namespace
}  // namespace basetts::data
