#include "basetts/eval/eval.h"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

#include <boost/crc.hpp>
#include <boost/math/distributions/students_t.hpp>
#include <nlohmann/json.hpp>

#include "basetts/error.h"

namespace basetts::eval {
namespace {

std::string Fixed(double v, int digits) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

std::string Pad(const std::string& s, size_t width) {
  return s.size() >= width ? s : s + std::string(width - s.size(), ' ');
}

std::string PadLeft(const std::string& s, size_t width) {
  return s.size() >= width ? s : std::string(width - s.size(), ' ') + s;
}

double Mean(std::span<const double> x) {
  return std::accumulate(x.begin(), x.end(), 0.0) / static_cast<double>(x.size());
}

double SampleVariance(std::span<const double> x, double mean) {
  double s = 0.0;
  for (double v : x) s += (v - mean) * (v - mean);
  return s / static_cast<double>(x.size() - 1);
}

double TwoSidedP(double t, double df) {
  boost::math::students_t dist(df);
  return 2.0 * boost::math::cdf(boost::math::complement(dist, std::abs(t)));
}

std::string XmlEscape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

}  // namespace

std::vector<std::string> NormalizeWords(std::string_view text) {
  std::istringstream in(data::NormalizeForComparison(text));
  std::vector<std::string> words;
  for (std::string w; in >> w;) words.push_back(w);
  return words;
}

double WerCounts::wer() const {
  if (reference_words == 0) {
    throw Error(ErrorKind::kUndefinedMetric, "WER is undefined for an empty reference");
  }
  return 100.0 * static_cast<double>(errors()) / static_cast<double>(reference_words);
}

WerCounts AlignWords(std::span<const std::string> reference,
                     std::span<const std::string> hypothesis) {
  const size_t n = reference.size();
  const size_t m = hypothesis.size();
  std::vector<std::vector<size_t>> d(n + 1, std::vector<size_t>(m + 1));
  for (size_t i = 0; i <= n; ++i) d[i][0] = i;
  for (size_t j = 0; j <= m; ++j) d[0][j] = j;
  for (size_t i = 1; i <= n; ++i) {
    for (size_t j = 1; j <= m; ++j) {
      d[i][j] = std::min({d[i - 1][j - 1] + (reference[i - 1] == hypothesis[j - 1] ? 0 : 1),
                          d[i - 1][j] + 1, d[i][j - 1] + 1});
    }
  }
  WerCounts c;
  c.reference_words = n;
  size_t i = n;
  size_t j = m;
  while (i > 0 || j > 0) {
    if (i > 0 && j > 0) {
      const bool same = reference[i - 1] == hypothesis[j - 1];
      if (d[i][j] == d[i - 1][j - 1] + (same ? 0 : 1)) {
        if (!same) ++c.substitutions;
        --i;
        --j;
        continue;
      }
    }
    if (i > 0 && d[i][j] == d[i - 1][j] + 1) {
      ++c.deletions;
      --i;
    } else {
      ++c.insertions;
      --j;
    }
  }
  return c;
}

double Wer(std::span<const std::string> reference, std::span<const std::string> hypothesis) {
  return AlignWords(reference, hypothesis).wer();
}

double Wer(std::string_view reference, std::string_view hypothesis) {
  const auto r = NormalizeWords(reference);
  const auto h = NormalizeWords(hypothesis);
  return Wer(r, h);
}

WerCounts EvaluateWer(const data::AsrBackend& asr, const std::vector<WerItem>& items) {
  WerCounts total;
  for (const auto& item : items) {
    std::string hyp;
    for (const auto& f : asr.Transcribe(item.key, item.audio, 30.0)) {
      hyp += (hyp.empty() ? "" : " ") + f.text();
    }
    const WerCounts c = AlignWords(NormalizeWords(item.reference), NormalizeWords(hyp));
    total.substitutions += c.substitutions;
    total.deletions += c.deletions;
    total.insertions += c.insertions;
    total.reference_words += c.reference_words;
  }
  return total;
}

double SpeakerSim(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size() || a.empty()) {
    throw Error(ErrorKind::kUndefinedMetric, "similarity needs equal nonempty embeddings");
  }
  double dot = 0.0;
  double na = 0.0;
  double nb = 0.0;
  for (size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  if (na == 0.0 || nb == 0.0) {
    throw Error(ErrorKind::kUndefinedMetric, "similarity of a zero embedding");
  }
  return 100.0 * std::clamp(dot / std::sqrt(na * nb), -1.0, 1.0);
}

MushraResult MushraAggregate(const std::string& system, std::span<const double> scores) {
  if (scores.size() < 2) {
    throw Error(ErrorKind::kUndefinedMetric, "confidence interval needs at least 2 scores");
  }
  for (double s : scores) {
    if (!(s >= 0.0 && s <= 100.0)) {
      throw Error(ErrorKind::kData, "MUSHRA score outside [0, 100]");
    }
  }
  MushraResult r;
  r.system = system;
  r.scores.assign(scores.begin(), scores.end());
  r.mean = Mean(scores);
  const double n = static_cast<double>(scores.size());
  const double sd = std::sqrt(SampleVariance(scores, r.mean));
  boost::math::students_t dist(n - 1.0);
  r.ci95_halfwidth = boost::math::quantile(dist, 0.975) * sd / std::sqrt(n);
  return r;
}

SignificanceResult Significance(std::span<const double> a, std::span<const double> b,
                                bool paired, double alpha) {
  if (a.size() < 2 || b.size() < 2) {
    throw Error(ErrorKind::kUndefinedMetric, "t-test needs at least 2 scores per system");
  }
  SignificanceResult r;
  double diff = 0.0;
  double se2 = 0.0;
  if (paired) {
    if (a.size() != b.size()) {
      throw Error(ErrorKind::kData, "paired t-test needs equal-length samples");
    }
    std::vector<double> d(a.size());
    for (size_t i = 0; i < a.size(); ++i) d[i] = a[i] - b[i];
    diff = Mean(d);
    const double n = static_cast<double>(d.size());
    se2 = SampleVariance(d, diff) / n;
    r.df = n - 1.0;
  } else {
    const double ma = Mean(a);
    const double mb = Mean(b);
    const double na = static_cast<double>(a.size());
    const double nb = static_cast<double>(b.size());
    const double va = SampleVariance(a, ma) / na;
    const double vb = SampleVariance(b, mb) / nb;
    diff = ma - mb;
    se2 = va + vb;
    if (se2 > 0.0) {
      r.df = se2 * se2 / (va * va / (na - 1.0) + vb * vb / (nb - 1.0));
    }
  }
  if (se2 <= 0.0) {
    r.t = diff == 0.0 ? 0.0 : std::copysign(INFINITY, diff);
    r.p_value = diff == 0.0 ? 1.0 : 0.0;
  } else {
    r.t = diff / std::sqrt(se2);
    r.p_value = TwoSidedP(r.t, r.df);
  }
  r.significant = r.p_value < alpha;
  return r;
}

std::string FormatComparison(const MushraResult& a, const MushraResult& b) {
  return a.system + ": " + Fixed(a.mean, 1) + " vs " + b.system + ": " + Fixed(b.mean, 1);
}

std::string RenderMushraTable(const std::vector<MushraResult>& results) {
  size_t width = 6;
  for (const auto& r : results) width = std::max(width, r.system.size());
  std::string out = Pad("System", width) + "  " + PadLeft("MUSHRA", 6) + "  " +
                    PadLeft("95% CI", 7) + "  " + PadLeft("n", 4) + "\n";
  for (const auto& r : results) {
    out += Pad(r.system, width) + "  " + PadLeft(Fixed(r.mean, 1), 6) + "  " +
           PadLeft("±" + Fixed(r.ci95_halfwidth, 2), 8) + "  " +
           PadLeft(std::to_string(r.scores.size()), 4) + "\n";
  }
  return out;
}

std::string RenderObjectiveTable(const std::vector<ObjectiveRow>& rows) {
  size_t width = 6;
  for (const auto& r : rows) width = std::max(width, r.system.size());
  std::string out =
      Pad("System", width) + "  " + PadLeft("WER", 5) + "  " + PadLeft("SIM", 5) + "\n";
  for (const auto& r : rows) {
    out += Pad(r.system, width) + "  " + PadLeft(Fixed(r.wer, 1), 5) + "  " +
           PadLeft(Fixed(r.sim, 1), 5) + "\n";
  }
  return out;
}

const std::vector<std::string>& EmergentCategories() {
  static const std::vector<std::string> categories = {
      "Questions",     "Emotions",        "Compound Nouns", "Syntactic Complexities",
      "Foreign Words", "Paralinguistics", "Punctuations"};
  return categories;
}

std::vector<EmergentSentence> EmergentTestset::Category(std::string_view name) const {
  std::vector<EmergentSentence> out;
  for (const auto& s : sentences) {
    if (s.category == name) out.push_back(s);
  }
  return out;
}

const EmergentSentence& EmergentTestset::At(std::string_view category, int index) const {
  for (const auto& s : sentences) {
    if (s.category == category && s.index == index) return s;
  }
  throw Error(ErrorKind::kData,
              "no sentence " + std::to_string(index) + " in " + std::string(category));
}

std::filesystem::path DefaultEmergentTestsetPath() {
  if (const char* dir = std::getenv("BASETTS_DATA_DIR")) {
    return std::filesystem::path(dir) / "emergent_testset.jsonl";
  }
  return std::filesystem::path(BASETTS_DATA_DIR) / "emergent_testset.jsonl";
}

uint32_t Crc32(std::string_view bytes) {
  boost::crc_32_type crc;
  crc.process_bytes(bytes.data(), bytes.size());
  return crc.checksum();
}

EmergentTestset LoadEmergentTestset(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::kDependency, "no testset at " + path.string());
  const std::string bytes((std::istreambuf_iterator<char>(in)),
                          std::istreambuf_iterator<char>());
  if (Crc32(bytes) != kEmergentTestsetCrc32) {
    throw Error(ErrorKind::kDataIntegrity, "testset checksum mismatch: " + path.string());
  }
  EmergentTestset set;
  std::istringstream lines(bytes);
  std::string line;
  try {
    while (std::getline(lines, line)) {
      if (line.empty()) continue;
      const auto j = nlohmann::json::parse(line);
      set.sentences.push_back({j.at("category"), j.at("index"), j.at("text")});
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::kDataIntegrity, "testset: " + std::string(e.what()));
  }
  for (const auto& c : EmergentCategories()) {
    const auto items = set.Category(c);
    if (items.size() != kSentencesPerCategory) {
      throw Error(ErrorKind::kDataIntegrity, "testset: category " + c + " has " +
                                                 std::to_string(items.size()) + " sentences");
    }
    for (int i = 0; i < kSentencesPerCategory; ++i) {
      if (items[i].index != i + 1) {
        throw Error(ErrorKind::kDataIntegrity, "testset: category " + c + " is misnumbered");
      }
    }
  }
  if (set.size() != EmergentCategories().size() * kSentencesPerCategory) {
    throw Error(ErrorKind::kDataIntegrity, "testset: unexpected categories");
  }
  return set;
}

std::vector<EmergentRating> ReadRatings(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::kDependency, "no ratings file at " + path.string());
  std::vector<EmergentRating> out;
  std::string line;
  size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      out.push_back({j.at("system"), j.at("category"), j.at("sentence_id"), j.at("score")});
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorKind::kDataIntegrity,
                  path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

void WriteRatings(const std::filesystem::path& path, const std::vector<EmergentRating>& r) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorKind::kIo, "cannot write " + path.string());
  for (const auto& x : r) {
    out << nlohmann::json{{"system", x.system},
                          {"category", x.category},
                          {"sentence_id", x.sentence_id},
                          {"score", x.score}}
               .dump()
        << "\n";
  }
}

EmergentReport BuildEmergentReport(const std::vector<EmergentRating>& ratings,
                                   const std::vector<std::string>& systems) {
  const auto& categories = EmergentCategories();
  const std::set<std::string> known(categories.begin(), categories.end());
  const std::set<std::string> wanted(systems.begin(), systems.end());
  std::map<std::string, std::map<std::string, std::map<int, int>>> grid;
  for (const auto& r : ratings) {
    if (!wanted.count(r.system)) continue;
    if (!known.count(r.category)) {
      throw Error(ErrorKind::kData, "unknown category " + r.category);
    }
    if (r.score < 1 || r.score > 3) {
      throw Error(ErrorKind::kData, "rating must be 1, 2 or 3");
    }
    if (r.sentence_id < 1 || r.sentence_id > kSentencesPerCategory) {
      throw Error(ErrorKind::kData, "sentence_id out of range");
    }
    if (!grid[r.system][r.category].emplace(r.sentence_id, r.score).second) {
      throw Error(ErrorKind::kData, "duplicate rating for " + r.system + " / " + r.category +
                                        " / " + std::to_string(r.sentence_id));
    }
  }
  std::string missing;
  size_t gaps = 0;
  for (const auto& s : systems) {
    for (const auto& c : categories) {
      for (int i = 1; i <= kSentencesPerCategory; ++i) {
        if (!grid[s][c].count(i)) {
          ++gaps;
          missing += "\n  " + s + " / " + c + " / " + std::to_string(i);
        }
      }
    }
  }
  if (gaps > 0) {
    throw Error(ErrorKind::kCompleteness,
                std::to_string(gaps) + " missing ratings:" + missing);
  }
  EmergentReport report;
  report.systems = systems;
  for (const auto& s : systems) {
    for (const auto& c : categories) {
      double sum = 0.0;
      for (const auto& [id, score] : grid[s][c]) sum += score;
      report.means[s][c] = sum / kSentencesPerCategory;
    }
  }
  return report;
}

std::string RenderEmergentTable(const EmergentReport& report) {
  size_t width = 8;
  for (const auto& c : EmergentCategories()) width = std::max(width, c.size());
  std::string out = Pad("Category", width);
  for (const auto& s : report.systems) out += "  " + PadLeft(s, std::max<size_t>(s.size(), 5));
  out += "\n";
  for (const auto& c : EmergentCategories()) {
    out += Pad(c, width);
    for (const auto& s : report.systems) {
      out += "  " + PadLeft(Fixed(report.means.at(s).at(c), 2), std::max<size_t>(s.size(), 5));
    }
    out += "\n";
  }
  out += "Reference lines: " + Fixed(EmergentReport::kLowThreshold, 2) + " and " +
         Fixed(EmergentReport::kHighThreshold, 2) + "\n";
  return out;
}

std::string RenderEmergentSvg(const EmergentReport& report) {
  const auto& categories = EmergentCategories();
  const double left = 50.0;
  const double top = 20.0;
  const double plot_h = 240.0;
  const double group_w = 110.0;
  const double plot_w = group_w * static_cast<double>(categories.size());
  const double width = left + plot_w + 20.0;
  const double height = top + plot_h + 110.0;
  const size_t k = std::max<size_t>(1, report.systems.size());
  const double bar_w = (group_w - 20.0) / static_cast<double>(k);
  static const char* kColors[] = {"#4e79a7", "#f28e2b", "#59a14f", "#e15759",
                                  "#76b7b2", "#edc948", "#b07aa1", "#9c755f"};
  auto y_of = [&](double score) { return top + plot_h * (1.0 - (score - 1.0) / 2.0); };
  std::ostringstream svg;
  svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\""
      << height << "\" font-family=\"sans-serif\" font-size=\"11\">\n";
  svg << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  for (double tick : {1.0, 1.5, 2.0, 2.5, 3.0}) {
    svg << "<line x1=\"" << left << "\" x2=\"" << left + plot_w << "\" y1=\"" << y_of(tick)
        << "\" y2=\"" << y_of(tick) << "\" stroke=\"#ddd\"/>\n";
    svg << "<text x=\"" << left - 6 << "\" y=\"" << y_of(tick) + 4
        << "\" text-anchor=\"end\">" << Fixed(tick, 1) << "</text>\n";
  }
  for (size_t ci = 0; ci < categories.size(); ++ci) {
    const double gx = left + group_w * static_cast<double>(ci) + 10.0;
    for (size_t si = 0; si < report.systems.size(); ++si) {
      const double m = report.means.at(report.systems[si]).at(categories[ci]);
      const double x = gx + bar_w * static_cast<double>(si);
      svg << "<rect class=\"bar\" x=\"" << x << "\" y=\"" << y_of(m) << "\" width=\""
          << bar_w - 2 << "\" height=\"" << y_of(1.0) - y_of(m) << "\" fill=\""
          << kColors[si % 8] << "\"><title>" << XmlEscape(report.systems[si]) << " "
          << XmlEscape(categories[ci]) << " " << Fixed(m, 2) << "</title></rect>\n";
    }
    svg << "<text x=\"" << gx + (group_w - 20.0) / 2 << "\" y=\"" << top + plot_h + 16
        << "\" text-anchor=\"middle\">" << XmlEscape(categories[ci]) << "</text>\n";
  }
  for (double t : {EmergentReport::kLowThreshold, EmergentReport::kHighThreshold}) {
    svg << "<line class=\"threshold\" x1=\"" << left << "\" x2=\"" << left + plot_w
        << "\" y1=\"" << y_of(t) << "\" y2=\"" << y_of(t)
        << "\" stroke=\"#c00\" stroke-dasharray=\"6,4\"/>\n";
    svg << "<text x=\"" << left + plot_w << "\" y=\"" << y_of(t) - 3
        << "\" text-anchor=\"end\" fill=\"#c00\">" << Fixed(t, 2) << "</text>\n";
  }
  for (size_t si = 0; si < report.systems.size(); ++si) {
    const double y = top + plot_h + 40 + 16 * static_cast<double>(si);
    svg << "<rect x=\"" << left << "\" y=\"" << y - 9 << "\" width=\"10\" height=\"10\" fill=\""
        << kColors[si % 8] << "\"/>\n";
    svg << "<text x=\"" << left + 16 << "\" y=\"" << y << "\">"
        << XmlEscape(report.systems[si]) << "</text>\n";
  }
  svg << "</svg>\n";
  return svg.str();
}

}  // namespace basetts::eval
