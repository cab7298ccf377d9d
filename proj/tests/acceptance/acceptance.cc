// Prints one PASS/FAIL line per acceptance criterion; exits nonzero on any
// failure. Pass criterion numbers as arguments to run a subset.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <memory>
#include <optional>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "basetts/audio/audio.h"
#include "basetts/bpe/bpe.h"
#include "basetts/data/fixture.h"
#include "basetts/data/pipeline.h"
#include "basetts/decoder/speech_decoder.h"
#include "basetts/eval/eval.h"
#include "basetts/gpt/speech_gpt.h"
#include "basetts/nn/ops.h"
#include "basetts/run/experiment.h"
#include "basetts/tokenizer/loss.h"
#include "basetts/tokenizer/probe.h"
#include "basetts/tokenizer/speaker.h"
#include "basetts/tokenizer/speechcode.h"
#include "basetts/tokenizer/ssl_tokenizer.h"
#include "basetts/tokenizer/vq.h"
#include "bpe_oracle.h"
#include "stats_oracle.h"
#include "text_oracle.h"

namespace basetts {
namespace {

namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;
using nn::Matrix;
using nn::Tensor;
using Ids = std::vector<int64_t>;

class Check {
 public:
  void Expect(bool ok, const std::string& what) {
    if (!ok) failures_.push_back(what);
  }
  void Note(const std::string& s) { notes_.push_back(s); }
  bool ok() const { return failures_.empty(); }
  std::string Summary() const {
    std::ostringstream out;
    const auto& items = ok() ? notes_ : failures_;
    for (size_t i = 0; i < items.size() && i < 4; ++i) out << (i ? "; " : "") << items[i];
    if (items.size() > 4) out << "; +" << items.size() - 4 << " more";
    return out.str();
  }

 private:
  std::vector<std::string> failures_;
  std::vector<std::string> notes_;
};

std::string Fmt(double v, int precision = 4) {
  std::ostringstream s;
  s << std::setprecision(precision) << v;
  return s.str();
}

double Seconds(Clock::time_point since) {
  return std::chrono::duration<double>(Clock::now() - since).count();
}

double FiniteDifference(const std::function<double()>& f, Tensor& p, Eigen::Index r,
                        Eigen::Index c, double h = 1e-6) {
  nn::NoGradGuard guard;
  const double saved = p.value()(r, c);
  p.mutable_value()(r, c) = saved + h;
  const double plus = f();
  p.mutable_value()(r, c) = saved - h;
  const double minus = f();
  p.mutable_value()(r, c) = saved;
  return (plus - minus) / (2.0 * h);
}

double RelativeError(double a, double b, double floor) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

std::vector<double> RandomRef(std::mt19937_64& rng, int dim) {
  std::normal_distribution<double> n(0.0, 1.0);
  std::vector<double> r(dim);
  for (auto& v : r) v = n(rng);
  return r;
}

Ids RandomIds(std::mt19937_64& rng, size_t n, int vocab) {
  Ids ids(n);
  for (auto& v : ids) v = static_cast<int64_t>(rng() % vocab);
  return ids;
}

gpt::ModelConfig ToyLm(int text_vocab, int code_vocab) {
  gpt::ModelConfig c = gpt::ModelConfig::Preset("toy");
  c.text_vocab = text_vocab;
  c.code_vocab = code_vocab;
  c.ref_dim = 4;
  c.context = 128;
  return c;
}

// ---- 1 ----------------------------------------------------------------------

void Bitrate(Check& check) {
  const double ssl = tokenizer::Bitrate(50, 256);
  const double vq = tokenizer::Bitrate(25, 8196);
  check.Expect(ssl == 400.0, "bitrate(50, 256) = " + Fmt(ssl, 17));
  check.Expect(std::abs(vq - 325.0) <= 0.1, "bitrate(25, 8196) = " + Fmt(vq, 10));
  check.Note("400 and " + Fmt(vq, 6) + " bit/s");
}

// ---- 2 ----------------------------------------------------------------------

void BpeCorrectness(Check& check) {
  std::mt19937_64 rng(2);
  std::vector<double> weights(256);
  for (int i = 0; i < 256; ++i) weights[i] = 1.0 / (1 + i);
  std::discrete_distribution<int> zipf(weights.begin(), weights.end());
  std::vector<std::vector<bpe::Token>> train(200);
  for (auto& s : train) {
    s.resize(300);
    for (auto& t : s) t = zipf(rng);
  }
  const bpe::BpeVocab vocab = bpe::TrainBpe(train, 256, 512);
  std::uniform_int_distribution<int> len(1, 512);
  int failures = 0;
  for (int i = 0; i < 1000; ++i) {
    std::vector<bpe::Token> s(len(rng));
    for (auto& t : s) t = i % 2 ? zipf(rng) : static_cast<bpe::Token>(rng() % 256);
    failures += bpe::DecodeTokens(bpe::Encode(s, vocab), vocab) != s;
  }
  check.Expect(failures == 0, std::to_string(failures) + "/1000 round trips differ");

  int corpora = 0;
  int mismatched = 0;
  for (int base : {2, 3, 4, 6}) {
    for (const auto& corpus : oracle::SmallBpeCorpora(100, base, 100 + base)) {
      const auto expected = oracle::ExhaustiveBpe(corpus, base, base + 12);
      const auto got = bpe::TrainBpe(corpus, base, base + 12);
      bool same = got.merges.size() == expected.size();
      for (size_t k = 0; same && k < expected.size(); ++k) {
        same = got.merges[k].a == expected[k].a && got.merges[k].b == expected[k].b &&
               got.merges[k].result == expected[k].result;
      }
      mismatched += !same;
      ++corpora;
    }
  }
  check.Expect(mismatched == 0,
               std::to_string(mismatched) + "/" + std::to_string(corpora) + " oracle mismatches");
  check.Note("1000 round trips, " + std::to_string(corpora) + " corpora match the oracle");
}

// ---- 3 ----------------------------------------------------------------------

void SequenceLogProb(Check& check) {
  const gpt::ModelConfig c = ToyLm(40, 64);
  nn::Rng init(14);
  gpt::SpeechGpt m(c, init);
  std::mt19937_64 g(15);
  double worst = 0.0;
  for (int i = 0; i < 50; ++i) {
    const auto ref = RandomRef(g, 4);
    const Ids text = RandomIds(g, 1 + g() % 10, 40);
    const Ids codes = RandomIds(g, 1 + g() % 20, 64);
    const auto parts = m.Loss(gpt::BuildSequence(ref, text, codes, c, false));
    const double expected = -(text.size() * parts.text_ce.item() +
                              codes.size() * parts.speech_ce.item());
    worst = std::max(worst, std::abs(m.SequenceLogProb(ref, text, codes) - expected));
  }
  check.Expect(worst <= 1e-5, "log-prob identity off by " + Fmt(worst));

  const gpt::ModelConfig small = ToyLm(10, 12);
  nn::Rng init2(17);
  gpt::SpeechGpt m2(small, init2);
  double worst_sum = 0.0;
  for (int trial = 0; trial < 5; ++trial) {
    const auto ref = RandomRef(g, 4);
    const Ids text = RandomIds(g, 1 + trial, 10);
    const Ids prefix = RandomIds(g, trial, 12);
    const Eigen::VectorXd first = m2.NextSpeechLogProbs(ref, text, prefix);
    worst_sum = std::max(worst_sum, std::abs(first.array().exp().sum() - 1.0));
    double total = std::exp(first(m2.end_token()));
    for (int a = 0; a < small.code_vocab; ++a) {
      Ids next = prefix;
      next.push_back(a);
      const Eigen::VectorXd second = m2.NextSpeechLogProbs(ref, text, next);
      for (int b = 0; b <= small.code_vocab; ++b) total += std::exp(first(a) + second(b));
    }
    worst_sum = std::max(worst_sum, std::abs(total - 1.0));
  }
  check.Expect(worst_sum <= 1e-5, "enumerated probabilities off by " + Fmt(worst_sum));
  check.Note("identity error " + Fmt(worst, 2) + ", sum error " + Fmt(worst_sum, 2));
}

// ---- 4 ----------------------------------------------------------------------

void LossArithmetic(Check& check) {
  check.Expect(gpt::JointLoss(2.0, 3.0) == 2.03,
               "joint_loss(2, 3) = " + Fmt(gpt::JointLoss(2.0, 3.0), 17));
  gpt::LossParts parts{Tensor::Scalar(3.0), Tensor::Scalar(2.0), 1, 1};
  check.Expect(gpt::JointLoss(parts).item() == 2.03, "tensor joint loss differs");
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> u(0.0, 3.0);
  double worst = 0.0;
  for (int i = 0; i < 100; ++i) {
    const double r = u(rng), q = u(rng), ct = u(rng), cs = u(rng);
    const tokenizer::TokenizerLossWeights w{u(rng), u(rng), u(rng)};
    const tokenizer::TokenizerLossComponents comp{Tensor::Scalar(r), Tensor::Scalar(q),
                                                  Tensor::Scalar(ct), Tensor::Scalar(cs)};
    const double hand = r + w.alpha * q + w.beta * ct + w.gamma * cs;
    worst = std::max(worst, std::abs(tokenizer::CombineTokenizerLoss(comp, w).total.item() - hand));
  }
  check.Expect(worst <= 1e-6, "tokenizer loss off by " + Fmt(worst));
  check.Note("2.03 exact, weighted sum error " + Fmt(worst, 2));
}

// ---- 5 ----------------------------------------------------------------------

tokenizer::SslTokenizerConfig TinySsl() {
  tokenizer::SslTokenizerConfig c;
  c.codebook_size = 8;
  c.code_dim = 2;
  c.regressor_dim = 4;
  c.channels = 4;
  c.encoder_blocks = 1;
  c.decoder_blocks = 1;
  c.extractor.channels = 4;
  c.extractor.heads = 1;
  c.extractor.embedding_dim = 3;
  return c;
}

void GradientChecks(Check& check) {
  // Reversal on the content branch: analytic gradient == -(numeric slope).
  nn::Rng rng(11);
  tokenizer::SslTokenizer model(TinySsl(), 5, rng);
  tokenizer::SpeakerExtractor frozen(4, TinySsl().extractor, rng);
  frozen.CopyParametersFrom(model.extractor());
  frozen.SetRequiresGrad(false);
  Tensor features(nn::RandomNormal(6, 5, 1.0, rng));
  Tensor speaker(nn::L2NormalizeRows(Tensor(nn::RandomNormal(1, 3, 1.0, rng))).value());
  auto cosine = [&] {
    return tokenizer::CosineLeakageLoss(
        speaker, frozen.Forward(nn::GradientReversal(model.ContentRegress(features), 1.0)));
  };
  model.ZeroGrad();
  cosine().Backward();
  double worst_grl = 0.0;
  int checked = 0;
  for (auto& [name, p] : model.Parameters()) {
    if (name.rfind("content_regressor.", 0) != 0) continue;
    const Matrix analytic = p.grad();
    for (Eigen::Index r = 0; r < p.rows(); ++r) {
      for (Eigen::Index c = 0; c < p.cols(); ++c) {
        const double slope = FiniteDifference([&] { return cosine().item(); }, p, r, c);
        worst_grl = std::max(worst_grl, RelativeError(analytic(r, c), -slope, 1e-7));
        ++checked;
      }
    }
  }
  check.Expect(checked > 0, "no reversed parameters found");
  check.Expect(worst_grl <= 1e-3, "reversal relative error " + Fmt(worst_grl));

  // Straight-through: gradient at the input equals the slope at the
  // quantized point.
  double worst_ste = 0.0;
  for (int trial = 0; trial < 10; ++trial) {
    nn::Rng r2(100 + trial);
    Tensor x(nn::RandomNormal(3, 2, 1.0, r2), true);
    const Matrix entries = nn::RandomNormal(5, 2, 1.0, r2);
    Tensor w(nn::RandomNormal(3, 2, 1.0, r2));
    const tokenizer::VqOutput out = tokenizer::VqQuantize(x, entries);
    auto f = [&](const Tensor& z) { return nn::Sum(nn::Tanh(nn::Mul(z, w))); };
    f(out.quantized).Backward();
    Tensor q(out.quantized.value(), true);
    for (int r = 0; r < 3; ++r) {
      for (int c = 0; c < 2; ++c) {
        const double numeric = FiniteDifference([&] { return f(q).item(); }, q, r, c);
        worst_ste = std::max(worst_ste, RelativeError(x.grad()(r, c), numeric, 1e-6));
      }
    }
  }
  check.Expect(worst_ste <= 1e-3, "straight-through relative error " + Fmt(worst_ste));
  check.Note(std::to_string(checked) + " reversed entries, max rel err " + Fmt(worst_grl, 2) +
             "; straight-through " + Fmt(worst_ste, 2));
}

// ---- Shared tokenizer run for 6 and 7 ---------------------------------------

struct TokenizerRun {
  double initial_l1 = 0.0;
  double final_l1 = 0.0;
  double code_probe = 0.0;
  double embedding_probe = 0.0;
  double seconds = 0.0;
};

const TokenizerRun& SharedTokenizerRun() {
  static const TokenizerRun result = [] {
    const auto start = Clock::now();
    data::FixtureConfig fc;
    fc.utterances_per_speaker = 20;
    const data::Fixture fx = data::GenerateFixture(fc);
    tokenizer::SslTokenizerConfig cfg;
    cfg.train.steps = 2000;
    auto provider = tokenizer::MakeFeatureProvider(cfg.provider);
    std::vector<std::pair<audio::Waveform, int>> tr, te;
    for (const auto& u : fx.utterances) {
      const int idx = std::stoi(u.id.substr(u.id.find('_') + 1));
      (idx < 12 ? tr : te).push_back({u.audio, u.speaker_index});
    }
    const auto train = tokenizer::MakeExamples(tr, provider.get(), cfg.mel);
    const auto test = tokenizer::MakeExamples(te, provider.get(), cfg.mel);
    nn::Rng rng(1);
    tokenizer::SslTokenizer model(cfg, provider->dim(), rng);
    TokenizerRun r;
    r.initial_l1 = tokenizer::ReconstructionL1(model, train);
    tokenizer::TrainSslTokenizer(model, train, 42);
    r.final_l1 = tokenizer::ReconstructionL1(model, train);
    auto collect = [&](const std::vector<tokenizer::TokenizerExample>& d, Ids& codes,
                       std::vector<int>& code_y, Matrix& emb, std::vector<int>& emb_y) {
      nn::NoGradGuard guard;
      emb.resize(static_cast<Eigen::Index>(d.size()), cfg.extractor.embedding_dim);
      for (size_t i = 0; i < d.size(); ++i) {
        const auto z = model.EncodeContent(model.ContentRegress(Tensor(d[i].features)));
        for (auto k : tokenizer::NearestCodes(z.value(), model.quantizer().entries())) {
          codes.push_back(k);
          code_y.push_back(d[i].speaker);
        }
        emb.row(static_cast<Eigen::Index>(i)) = tokenizer::ExtractSpeaker(model, d[i].features);
        emb_y.push_back(d[i].speaker);
      }
    };
    Ids ctr, cte;
    std::vector<int> ytr, yte, eytr, eyte;
    Matrix etr, ete;
    collect(train, ctr, ytr, etr, eytr);
    collect(test, cte, yte, ete, eyte);
    r.code_probe = tokenizer::LinearProbe(tokenizer::OneHot(ctr, cfg.codebook_size), ytr,
                                          tokenizer::OneHot(cte, cfg.codebook_size), yte, 2)
                       .test_accuracy;
    r.embedding_probe = tokenizer::LinearProbe(etr, eytr, ete, eyte, 2).test_accuracy;
    r.seconds = Seconds(start);
    return r;
  }();
  return result;
}

// ---- 6 ----------------------------------------------------------------------

void Trainability(Check& check) {
  const gpt::ModelConfig c = ToyLm(20, 32);
  nn::Rng rng(20);
  gpt::SpeechGpt m(c, rng);
  std::mt19937_64 g(21);
  const std::vector<gpt::GptExample> batch = {
      {RandomRef(g, 4), RandomIds(g, 8, 20), RandomIds(g, 16, 32)},
      {RandomRef(g, 4), RandomIds(g, 6, 20), RandomIds(g, 12, 32)}};
  gpt::TrainingConfig t;
  t.max_lr = 3e-3;
  t.min_lr = 1e-3;
  t.warmup_steps = 50;
  t.total_steps = 2000;
  t.weight_decay = 0.0;
  t.batch_size = 2;
  gpt::GptTrainer trainer(m, t);
  double loss = 1e9;
  int steps = 0;
  while (steps < 2000 && loss >= 0.1) {
    loss = trainer.Step(batch).loss;
    ++steps;
  }
  check.Expect(loss < 0.1, "joint loss " + Fmt(loss) + " after 2000 steps");
  const TokenizerRun& tok = SharedTokenizerRun();
  const double drop = 1.0 - tok.final_l1 / tok.initial_l1;
  check.Expect(drop >= 0.5, "tokenizer L1 dropped only " + Fmt(100 * drop, 3) + "%");
  check.Note("LM loss " + Fmt(loss, 3) + " at step " + std::to_string(steps) +
             "; tokenizer L1 " + Fmt(tok.initial_l1, 3) + " -> " + Fmt(tok.final_l1, 3));
}

// ---- 7 ----------------------------------------------------------------------

void Disentanglement(Check& check) {
  const TokenizerRun& tok = SharedTokenizerRun();
  check.Expect(tok.code_probe <= 0.60, "code probe " + Fmt(100 * tok.code_probe, 3) + "%");
  check.Expect(tok.embedding_probe >= 0.90,
               "embedding probe " + Fmt(100 * tok.embedding_probe, 3) + "%");
  check.Note("code probe " + Fmt(100 * tok.code_probe, 3) + "%, embedding probe " +
             Fmt(100 * tok.embedding_probe, 3) + "%");
}

// ---- 8 ----------------------------------------------------------------------

decoder::DecoderInput RandomDecoderInput(const decoder::DecoderConfig& c, long frames,
                                         nn::Rng& rng) {
  decoder::DecoderInput in;
  in.hidden = nn::RandomNormal(frames, c.input_dim, 1.0, rng);
  in.speaker = nn::RandomNormal(1, c.speaker_dim, 1.0, rng);
  return in;
}

double FirstChunkSeconds(const decoder::SpeechDecoder& m, const decoder::DecoderInput& in,
                         int chunk) {
  double best = 1e9;
  for (int rep = 0; rep < 9; ++rep) {
    const auto start = Clock::now();
    double first = -1.0;
    decoder::DecodeStream(m, in, chunk, [&](const decoder::StreamChunk& c) {
      if (c.chunk_index == 0) first = Seconds(start);
    });
    best = std::min(best, first);
  }
  return best;
}

void Streaming(Check& check) {
  const decoder::DecoderConfig c;
  nn::Rng rng(8);
  decoder::SpeechDecoder m(c, rng);
  std::mt19937_64 g(9);
  double worst = 0.0;
  for (int i = 0; i < 20; ++i) {
    const auto in = RandomDecoderInput(c, 10 + static_cast<long>(g() % 60), rng);
    const Matrix full = m.Forward(Tensor(in.hidden), Tensor(in.speaker)).value();
    for (int chunk : {1, 7, 25}) {
      std::vector<double> streamed;
      decoder::DecodeStream(m, in, chunk, [&](const decoder::StreamChunk& s) {
        streamed.insert(streamed.end(), s.samples.begin(), s.samples.end());
      });
      if (streamed.size() != static_cast<size_t>(full.size())) {
        check.Expect(false, "streamed length differs");
        continue;
      }
      for (size_t k = 0; k < streamed.size(); ++k) {
        worst = std::max(worst, std::abs(streamed[k] - full.data()[k]));
      }
    }
  }
  check.Expect(worst <= 1e-4, "max |streamed - full| = " + Fmt(worst));
  const auto short_in = RandomDecoderInput(c, 100, rng);
  const auto long_in = RandomDecoderInput(c, 400, rng);
  FirstChunkSeconds(m, short_in, 25);
  const double t1 = FirstChunkSeconds(m, short_in, 25);
  const double t4 = FirstChunkSeconds(m, long_in, 25);
  const double growth = t4 / t1 - 1.0;
  check.Expect(growth < 0.10, "first-chunk time grew " + Fmt(100 * growth, 3) + "%");
  check.Note("max diff " + Fmt(worst, 2) + "; first chunk " + Fmt(1e3 * t1, 3) + " ms vs " +
             Fmt(1e3 * t4, 3) + " ms at 4x length");
}

// ---- 9 ----------------------------------------------------------------------

void LrSchedule(Check& check) {
  const gpt::TrainingConfig c;
  const std::vector<std::pair<long, double>> anchors = {
      {0, 0.0}, {5000, 1.5e-4}, {10000, 3.0e-4}, {c.total_steps, 1.5e-4}};
  for (const auto& [step, expected] : anchors) {
    const double got = gpt::LearningRate(step, c);
    check.Expect(got == expected, "lr(" + std::to_string(step) + ") = " + Fmt(got, 17));
  }
  check.Note("0, 1.5e-4, 3e-4, 1.5e-4 at steps 0/5000/10000/" + std::to_string(c.total_steps));
}

// ---- 10 ---------------------------------------------------------------------

data::TranscriptSegment Seg(const std::string& rec, double start, double end) {
  data::TranscriptSegment s;
  s.recording = rec;
  s.speaker_id = "s";
  s.start_s = start;
  s.end_s = end;
  s.asr_text = "x";
  return s;
}

std::vector<double> ToneWithGaps(double seconds,
                                 const std::vector<std::pair<double, double>>& gaps) {
  const int rate = audio::kSampleRate;
  std::vector<double> x(static_cast<size_t>(seconds * rate));
  for (size_t i = 0; i < x.size(); ++i) {
    const double t = static_cast<double>(i) / rate;
    bool silent = false;
    for (const auto& [a, b] : gaps) silent |= t >= a && t < b;
    x[i] = silent ? 0.0 : 0.3 * std::sin(2 * M_PI * 200 * t);
  }
  return x;
}

data::AsrFragment Fragment(double start, double end, int words) {
  data::AsrFragment f{start, end, {}};
  for (int w = 0; w < words; ++w) {
    f.words.push_back({"w" + std::to_string(w), start + (end - start) * w / words,
                       start + (end - start) * (w + 1) / words});
  }
  return f;
}

void PipelineRules(Check& check) {
  std::mt19937_64 rng(10);
  std::uniform_real_distribution<double> dur(0.5, 30.0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  double longest = 0.0;
  size_t segments = 0;
  for (int trial = 0; trial < 30; ++trial) {
    std::vector<data::AsrFragment> frags;
    std::vector<std::pair<double, double>> gaps;
    double t = 0.0;
    for (int k = 0; k < 6; ++k) {
      const double d = dur(rng);
      frags.push_back(Fragment(t, t + d, 1 + static_cast<int>(d)));
      if (d > 20 && unit(rng) < 0.7) {
        const double gap = t + 2 + unit(rng) * (d - 5);
        gaps.emplace_back(gap, gap + 0.4);
      }
      t += d;
    }
    const auto samples = ToneWithGaps(t + 0.1, gaps);
    for (const auto& s : data::Segment("r", "s", frags, samples, audio::kSampleRate)) {
      longest = std::max(longest, s.duration_s());
      ++segments;
    }
  }
  check.Expect(longest <= 40.0, "segment of " + Fmt(longest) + " s");

  const auto merged = data::Reassemble({Seg("r", 0, 15), Seg("r", 15, 30), Seg("r", 30, 45)});
  std::vector<double> durations;
  for (const auto& s : merged) durations.push_back(s.duration_s());
  check.Expect(durations == std::vector<double>{30, 15}, "[15,15,15] did not become [30,15]");

  using data::Provenance;
  struct Case {
    std::string asr, source;
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
    check.Expect(data::RestoreText(c.asr, c.source).provenance == c.expected,
                 "restore gate: " + c.asr);
  }
  data::RestoreConfig loose;
  loose.max_norm_edit = 1.0;
  check.Expect(data::RestoreText("abc", "abcabcabc", loose).provenance == Provenance::kSource,
               "factor 3 should be accepted");
  check.Expect(data::RestoreText("abc", "abcabcabca", loose).provenance == Provenance::kAsr,
               "factor above 3 should be rejected");
  check.Expect(data::RestoreText("abcabcabca", "abc", loose).provenance == Provenance::kAsr,
               "factor below 1/3 should be rejected");
  const size_t kitten = data::LevenshteinDistance("kitten", "sitting");
  check.Expect(kitten == 3, "kitten/sitting = " + std::to_string(kitten));

  const fs::path dir = fs::temp_directory_path() / "basetts_acceptance_prep";
  fs::remove_all(dir);
  data::FixtureConfig fc;
  fc.utterances_per_speaker = 4;
  data::WriteFixture(data::GenerateFixture(fc), dir);
  const auto prep = data::PrepareCorpus(dir, data::PrepConfig{});
  for (const auto& e : prep.dataset.entries) {
    check.Expect(e.segment.duration_s() <= 40.0, "fixture segment over 40 s");
  }
  check.Expect(prep.report.restored == prep.report.segments, "fixture text not fully restored");
  fs::remove_all(dir);
  check.Note(std::to_string(segments) + " segments, longest " + Fmt(longest, 3) +
             " s; gates and reassembly as specified");
}

// ---- 11 ---------------------------------------------------------------------

void EvaluationArithmetic(Check& check) {
  std::mt19937_64 rng(11);
  const std::vector<std::string> vocab = {"a", "b", "c", "d"};
  int wer_mismatch = 0;
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<std::string> ref(1 + rng() % 8);
    std::vector<std::string> hyp(rng() % 9);
    for (auto& w : ref) w = vocab[rng() % 4];
    for (auto& w : hyp) w = vocab[rng() % 4];
    wer_mismatch += eval::AlignWords(ref, hyp).errors() != ::oracle::RecursiveWordEdits(ref, 0, hyp, 0);
  }
  check.Expect(wer_mismatch == 0, std::to_string(wer_mismatch) + " WER oracle mismatches");

  const std::vector<double> three = {60, 70, 80};
  const eval::MushraResult m = eval::MushraAggregate("x", three);
  check.Expect(m.mean == 70.0, "MUSHRA mean " + Fmt(m.mean));
  check.Expect(std::abs(m.ci95_halfwidth - 24.84) <= 0.005, "MUSHRA CI " + Fmt(m.ci95_halfwidth));

  std::normal_distribution<double> unit(0, 1);
  int agree = 0;
  for (int trial = 0; trial < 50; ++trial) {
    const double effect = trial % 2 == 0 ? 0.0 : 3.0;
    std::vector<double> a(12), b(12);
    for (double& v : a) v = unit(rng);
    for (double& v : b) v = unit(rng) + effect;
    agree += eval::Significance(a, b).significant ==
             (::oracle::PermutationPValue(a, b, 10000, trial) < 0.05);
  }
  check.Expect(agree == 50, "significance agrees on " + std::to_string(agree) + "/50");

  const eval::EmergentTestset set = eval::LoadEmergentTestset();
  check.Expect(set.size() == 140, "testset size " + std::to_string(set.size()));
  check.Expect(eval::EmergentCategories().size() == 7, "category count");
  for (const auto& c : eval::EmergentCategories()) {
    check.Expect(set.Category(c).size() == 20, "category " + c);
  }
  check.Expect(set.At("Questions", 1).text ==
                   "You went to the party, even though I explicitly told you not to?",
               "Questions 1");
  check.Expect(set.At("Syntactic Complexities", 2).text ==
                   "Time flies like an arrow; fruit flies like a banana.",
               "Syntactic Complexities 2");
  check.Expect(set.At("Punctuations", 14).text ==
                   "She received an odd text from her brother: 'Emergency @ home; call ASAP! "
                   "Mom & Dad are worried...#familymatters.'",
               "Punctuations 14");
  check.Note("WER oracle 200/200, CI " + Fmt(m.ci95_halfwidth, 4) + ", significance " +
             std::to_string(agree) + "/50, testset 7x20");
}

// ---- 12 ---------------------------------------------------------------------

uint32_t WavSampleRate(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  char header[28] = {};
  in.read(header, sizeof(header));
  uint32_t rate = 0;
  std::memcpy(&rate, header + 24, sizeof(rate));
  return rate;
}

void EndToEnd(Check& check) {
  const fs::path root = fs::temp_directory_path() / "basetts_acceptance_e2e";
  fs::remove_all(root);
  data::WriteFixture(data::GenerateFixture({}), root / "corpus");
  run::ExperimentConfig cfg = run::ExperimentConfig::Toy();
  cfg.corpus = (root / "corpus").string();
  run::RunDirectory dir = run::RunDirectory::Create(root / "run", cfg);
  run::Prep(dir);
  run::TrainTokenizer(dir);
  run::TrainLm(dir);
  run::TrainDecoder(dir);
  const run::Models models = run::Models::Load(dir);
  run::SynthesisRequest req;
  req.text = "the quick brown fox";
  req.speaker = run::ResolveSpeaker(dir, models, "", "");
  req.seed = 12;
  const run::SynthesisResult r = run::Synthesize(models, req);
  const fs::path wav = root / "out.wav";
  audio::WriteWav(wav, r.waveform);
  const audio::Waveform loaded = audio::LoadAudio(wav);
  check.Expect(WavSampleRate(wav) == 24000, "WAV rate " + std::to_string(WavSampleRate(wav)));
  check.Expect(loaded.samples.size() == r.frames * 480,
               std::to_string(loaded.samples.size()) + " samples for " +
                   std::to_string(r.frames) + " frames");
  check.Expect(loaded.samples == r.waveform.samples, "WAV contents differ from synthesis");

  nn::NoGradGuard guard;
  const gpt::Generation gen = models.lm().Generate(req.speaker, models.text_tokenizer().Encode(req.text),
                                                   [&] {
                                                     auto s = models.config().sampling;
                                                     s.seed = *req.seed;
                                                     return s;
                                                   }());
  Matrix speaker(1, static_cast<Eigen::Index>(req.speaker.size()));
  for (size_t k = 0; k < req.speaker.size(); ++k) speaker(0, static_cast<Eigen::Index>(k)) = req.speaker[k];
  const Matrix raw = models.decoder()
                         .Forward(Tensor(models.DecoderInput(gen.hidden, gen.codes)), Tensor(speaker))
                         .value();
  check.Expect(raw.allFinite(), "decoder output has non-finite samples");
  check.Expect(static_cast<size_t>(raw.size()) == r.frames * 480, "raw decode length differs");
  check.Note(std::to_string(r.frames) + " frames -> " + std::to_string(loaded.samples.size()) +
             " samples at 24 kHz, all finite");
}

struct Criterion {
  int id;
  std::string name;
  double budget_seconds;
  std::function<void(Check&)> run;
};

}  // namespace
}  // namespace basetts

int main(int argc, char** argv) {
  using namespace basetts;
  const std::vector<Criterion> criteria = {
      {1, "bitrate identity", 1, Bitrate},
      {2, "bpe correctness", 30, BpeCorrectness},
      {3, "sequence log-probability consistency", 60, SequenceLogProb},
      {4, "loss arithmetic", 1e9, LossArithmetic},
      {5, "gradient checks", 120, GradientChecks},
      {6, "trainability", 15 * 60, Trainability},
      {7, "disentanglement direction", 20 * 60, Disentanglement},
      {8, "streaming equivalence", 5 * 60, Streaming},
      {9, "learning-rate schedule", 1e9, LrSchedule},
      {10, "pipeline rules", 1e9, PipelineRules},
      {11, "evaluation arithmetic", 1e9, EvaluationArithmetic},
      {12, "end-to-end smoke", 30 * 60, EndToEnd},
  };
  std::set<int> selected;
  for (int i = 1; i < argc; ++i) selected.insert(std::atoi(argv[i]));
  int failed = 0;
  for (const auto& c : criteria) {
    if (!selected.empty() && !selected.count(c.id)) continue;
    Check check;
    const auto start = Clock::now();
    try {
      c.run(check);
    } catch (const std::exception& e) {
      check.Expect(false, std::string("exception: ") + e.what());
    }
    double seconds = Seconds(start);
    // Criteria sharing the tokenizer run are charged its full cost.
    if (c.id == 7) seconds = std::max(seconds, SharedTokenizerRun().seconds);
    if (seconds > c.budget_seconds) {
      check.Expect(false, "took " + Fmt(seconds, 3) + " s, budget " + Fmt(c.budget_seconds, 3) + " s");
    }
    failed += !check.ok();
    std::cout << (check.ok() ? "PASS" : "FAIL") << " " << std::setw(2) << c.id << " "
              << c.name << " [" << std::fixed << std::setprecision(1) << seconds << " s] "
              << std::defaultfloat << check.Summary() << std::endl;
  }
  return failed == 0 ? 0 : 1;
}
