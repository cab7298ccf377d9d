#include "basetts/decoder/speech_decoder.h"

#include <chrono>
#include <cmath>
#include <filesystem>

#include "basetts/error.h"
#include "basetts/nn/ops.h"
#include "gtest/gtest.h"

namespace basetts::decoder {
namespace {

using nn::Matrix;
using nn::Tensor;

DecoderConfig Small() {
  DecoderConfig c;
  c.input_dim = 6;
  c.speaker_dim = 4;
  c.channels = 16;
  c.stage_channels = {12, 8, 6};
  return c;
}

DecoderInput RandomInput(const DecoderConfig& c, Eigen::Index frames, nn::Rng& rng) {
  return {nn::RandomNormal(frames, c.input_dim, 1.0, rng),
          nn::RandomNormal(1, c.speaker_dim, 1.0, rng)};
}

std::vector<double> Reference(const SpeechDecoder& m, const DecoderInput& in) {
  const Matrix w = m.Forward(Tensor(in.hidden), Tensor(in.speaker)).value();
  return {w.data(), w.data() + w.size()};
}

std::vector<double> Stream(const SpeechDecoder& m, const DecoderInput& in, int chunk,
                           std::vector<StreamChunk>* chunks = nullptr) {
  std::vector<double> out;
  DecodeStream(m, in, chunk, [&](const StreamChunk& c) {
    out.insert(out.end(), c.samples.begin(), c.samples.end());
    if (chunks) chunks->push_back(c);
  });
  return out;
}

TEST(SpeechDecoder, LengthIdentity) {
  nn::Rng rng(1);
  const DecoderConfig c = Small();
  SpeechDecoder m(c, rng);
  EXPECT_EQ(c.total_upsample(), 480);
  EXPECT_EQ(DecodeFull(m, RandomInput(c, 50, rng)).samples.size(), 24000u);
  EXPECT_EQ(DecodeFull(m, RandomInput(c, 1, rng)).samples.size(), 480u);
  for (int frames : {2, 7, 13}) {
    EXPECT_EQ(DecodeFull(m, RandomInput(c, frames, rng)).samples.size(),
              static_cast<size_t>(frames) * 480);
  }
}

TEST(SpeechDecoder, ZeroInputIsFinite) {
  nn::Rng rng(2);
  const DecoderConfig c = Small();
  SpeechDecoder m(c, rng);
  const Tensor w = m.Forward(Tensor(Matrix::Zero(10, c.input_dim)),
                             Tensor(Matrix::Zero(1, c.speaker_dim)));
  EXPECT_TRUE(w.value().allFinite());
  EXPECT_LE(w.value().cwiseAbs().maxCoeff(), 1.0);
}

TEST(SpeechDecoder, ShapeErrors) {
  nn::Rng rng(3);
  const DecoderConfig c = Small();
  SpeechDecoder m(c, rng);
  try {
    m.Forward(Tensor(Matrix::Zero(4, c.input_dim + 1)), Tensor(Matrix::Zero(1, 4)));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kConfig);
  }
  DecoderConfig bad = c;
  bad.upsample = {8, 6, 4};
  EXPECT_THROW(SpeechDecoder(bad, rng), Error);
}

TEST(SpeechDecoder, CausalInFrames) {
  nn::Rng rng(4);
  const DecoderConfig c = Small();
  SpeechDecoder m(c, rng);
  DecoderInput in = RandomInput(c, 12, rng);
  const auto base = DecodeFull(m, in).samples;
  in.hidden.row(8).setRandom();
  const auto changed = DecodeFull(m, in).samples;
  for (size_t i = 0; i < 8 * 480; ++i) ASSERT_EQ(base[i], changed[i]) << i;
  bool differs = false;
  for (size_t i = 8 * 480; i < base.size(); ++i) differs |= base[i] != changed[i];
  EXPECT_TRUE(differs);
}

TEST(StreamDecoder, MatchesFullDecode) {
  nn::Rng rng(5);
  const DecoderConfig c = Small();
  SpeechDecoder m(c, rng);
  for (int i = 0; i < 5; ++i) {
    const DecoderInput in = RandomInput(c, 20 + 7 * i, rng);
    const auto full = Reference(m, in);
    for (int chunk : {1, 4, 9}) {
      const auto streamed = Stream(m, in, chunk);
      ASSERT_EQ(streamed.size(), full.size());
      double worst = 0.0;
      for (size_t k = 0; k < streamed.size(); ++k) {
        worst = std::max(worst, std::abs(streamed[k] - full[k]));
      }
      EXPECT_LE(worst, 1e-4) << "chunk " << chunk;
    }
  }
}

TEST(StreamDecoder, ChunkLayout) {
  nn::Rng rng(6);
  const DecoderConfig c = Small();
  SpeechDecoder m(c, rng);
  const DecoderInput in = RandomInput(c, 100, rng);
  std::vector<StreamChunk> chunks;
  Stream(m, in, 25, &chunks);
  ASSERT_EQ(chunks.size(), 4u);
  for (int i = 0; i < 4; ++i) {
    EXPECT_EQ(chunks[i].chunk_index, i);
    EXPECT_EQ(chunks[i].samples.size(), 12000u);
    EXPECT_EQ(chunks[i].is_final, i == 3);
  }
  chunks.clear();
  const auto whole = Stream(m, in, 100, &chunks);
  ASSERT_EQ(chunks.size(), 1u);
  EXPECT_TRUE(chunks[0].is_final);
  EXPECT_EQ(whole, Reference(m, in));
  chunks.clear();
  Stream(m, RandomInput(c, 30, rng), 25, &chunks);
  ASSERT_EQ(chunks.size(), 2u);
  EXPECT_EQ(chunks[1].samples.size(), 5u * 480);
  EXPECT_THROW(Stream(m, in, 0), Error);
}

TEST(StreamDecoder, FirstChunkNeedsOnlyItsFrames) {
  nn::Rng rng(7);
  const DecoderConfig c = Small();
  SpeechDecoder m(c, rng);
  const DecoderInput in = RandomInput(c, 60, rng);
  StreamDecoder s(m, in.speaker, 25);
  EXPECT_TRUE(s.Push(in.hidden.topRows(24)).empty());
  const auto first = s.Push(in.hidden.middleRows(24, 1));
  ASSERT_EQ(first.size(), 1u);
  const auto full = Reference(m, in);
  for (size_t k = 0; k < first[0].samples.size(); ++k) {
    ASSERT_NEAR(first[0].samples[k], full[k], 1e-4);
  }
}

TEST(Losses, HingeHandArithmetic) {
  const Tensor real(Matrix::Constant(3, 1, 1.0));
  const Tensor fake(Matrix::Constant(3, 1, -1.0));
  EXPECT_EQ(HingeDiscriminatorLoss({real}, {fake}).item(), 0.0);
  EXPECT_EQ(HingeGeneratorLoss({fake}).item(), 1.0);
  Matrix r(2, 1), f(2, 1);
  r << 0.5, 2.0;   // relu(1 - r) = 0.5, 0
  f << 0.25, -3.0; // relu(1 + f) = 1.25, 0
  EXPECT_DOUBLE_EQ(HingeDiscriminatorLoss({Tensor(r)}, {Tensor(f)}).item(),
                   0.25 + 0.625);
  EXPECT_DOUBLE_EQ(HingeGeneratorLoss({Tensor(f), Tensor(f)}).item(), 2 * 1.375);
  EXPECT_DOUBLE_EQ(HingeDiscriminatorLoss({Tensor(r), Tensor(r)}, {Tensor(f), Tensor(f)})
                       .item(),
                   2 * 0.875);
}

TEST(Losses, PerfectCopyHasZeroReconstruction) {
  nn::Rng rng(8);
  Discriminators disc(rng);
  const audio::MelTransform mel{audio::MelConfig{}};
  const Tensor wave(nn::RandomNormal(4800, 1, 0.1, rng));
  const GeneratorLoss loss = ComputeGeneratorLoss(wave, wave, disc, mel, {}, true);
  EXPECT_EQ(loss.mel_l1, 0.0);
  EXPECT_EQ(loss.feature, 0.0);
  EXPECT_TRUE(std::isfinite(loss.adversarial));
}

TEST(Discriminators, OutputsCoverAllBanks) {
  nn::Rng rng(9);
  Discriminators disc(rng);
  const auto out = disc.Forward(Tensor(nn::RandomNormal(4800, 1, 0.1, rng)));
  EXPECT_EQ(out.scores.size(), 6u);
  EXPECT_EQ(out.features.size(), 6u);
  for (const auto& s : out.scores) {
    EXPECT_GT(s.rows(), 0);
    EXPECT_TRUE(s.value().allFinite());
  }
}

TEST(DecoderTrainer, GradientsFiniteAtInit) {
  nn::Rng rng(10);
  const DecoderConfig c = Small();
  SpeechDecoder m(c, rng);
  Discriminators disc(rng);
  const audio::MelTransform mel{audio::MelConfig{}};
  const DecoderInput in = RandomInput(c, 6, rng);
  const Tensor real(nn::RandomNormal(6 * 480, 1, 0.1, rng));
  const Tensor fake = m.Forward(Tensor(in.hidden), Tensor(in.speaker));
  ComputeGeneratorLoss(fake, real, disc, mel, {}, true).total.Backward();
  for (const auto& [name, p] : m.Parameters()) {
    EXPECT_TRUE(p.grad().allFinite()) << name;
  }
  EXPECT_GT(nn::GradNorm(m.Parameters()), 0.0);
}

std::vector<double> Tone(size_t n, double hz, double amp) {
  std::vector<double> x(n);
  for (size_t i = 0; i < n; ++i) x[i] = amp * std::sin(2 * M_PI * hz * i / 24000.0);
  return x;
}

TEST(DecoderTrainer, ToyTrainingHalvesMelError) {
  nn::Rng rng(11);
  const DecoderConfig c = Small();
  SpeechDecoder m(c, rng);
  Discriminators disc(rng);
  DecoderExample ex{nn::RandomNormal(8, c.input_dim, 1.0, rng),
                    nn::RandomNormal(1, c.speaker_dim, 1.0, rng), Tone(8 * 480, 220, 0.3)};
  const std::vector<DecoderExample> data = {ex};
  DecoderTrainConfig t;
  t.crop_frames = 8;
  t.batch_size = 1;
  t.learning_rate = 2e-3;
  t.adversarial_start = 300;
  DecoderTrainer trainer(m, disc, t, 12);
  const double before = MelReconstructionL1(m, data);
  DecoderStepResult last;
  for (int s = 0; s < 500; ++s) {
    last = trainer.Step(data);
    ASSERT_TRUE(std::isfinite(last.generator_loss));
    ASSERT_TRUE(std::isfinite(last.discriminator_loss));
  }
  EXPECT_GT(last.discriminator_loss, 0.0);
  EXPECT_FALSE(last.collapse_warning);
  EXPECT_LE(MelReconstructionL1(m, data), 0.5 * before);
}

TEST(ExpandHidden, RepeatsPerBaseCode) {
  bpe::BpeVocab v{4, {{1, 2, 4}, {4, 3, 5}}};
  Matrix h(3, 2);
  h << 1, 2, 3, 4, 5, 6;
  const std::vector<int64_t> tokens = {5, 0, 4};
  const Matrix e = ExpandHidden(h, tokens, v);
  ASSERT_EQ(e.rows(), 6);
  ASSERT_EQ(e.cols(), 4);
  Matrix expected(6, 4);
  expected << 1, 2, 0.0, 1.0 / 3,  //
      1, 2, 1.0 / 3, 1.0 / 3,      //
      1, 2, 2.0 / 3, 1.0 / 3,      //
      3, 4, 0.0, 1.0,              //
      5, 6, 0.0, 0.5,              //
      5, 6, 0.5, 0.5;
  EXPECT_TRUE(e.isApprox(expected, 1e-12));
  EXPECT_THROW(ExpandHidden(h, std::vector<int64_t>{0, 1}, v), Error);
}

TEST(Benchmark, StreamingFirstChunkBeatsFullDecode) {
  nn::Rng rng(13);
  SpeechDecoder m(Small(), rng);
  const auto full = BenchmarkSynthesis(m, 2, 2.0, false);
  EXPECT_EQ(full.first_chunk_time, full.mean_wall_time);
  const auto stream = BenchmarkSynthesis(m, 2, 2.0, true, 25);
  EXPECT_LT(stream.first_chunk_time, stream.mean_wall_time);
}

TEST(SpeechDecoder, CheckpointRoundTrip) {
  nn::Rng rng(14);
  const DecoderConfig c = Small();
  SpeechDecoder m(c, rng);
  const auto path = std::filesystem::temp_directory_path() / "basetts_decoder.ckpt";
  SaveDecoder(path, m);
  const auto back = LoadDecoder(path);
  const DecoderInput in = RandomInput(c, 3, rng);
  EXPECT_EQ(DecodeFull(*back, in).samples, DecodeFull(m, in).samples);
  std::filesystem::remove(path);
}

}  // namespace
}  // namespace basetts::decoder
