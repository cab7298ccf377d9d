#include "basetts/decoder/speech_decoder.h"

#include <array>
#include <chrono>
#include <cmath>
#include <numeric>
#include <optional>

#include "basetts/error.h"
#include "basetts/nn/checkpoint.h"
#include "basetts/nn/ops.h"

namespace basetts::decoder {

using nn::Matrix;
using nn::Tensor;

int DecoderConfig::total_upsample() const {
  return 2 * std::accumulate(upsample.begin(), upsample.end(), 1, std::multiplies<>());
}

void DecoderConfig::Validate() const {
  if (input_dim < 1 || speaker_dim < 1 || channels < 1 || kernel < 1 ||
      vocoder_kernel < 1) {
    throw Error(ErrorKind::kConfig, "decoder: non-positive dimension");
  }
  if (upsample.empty() || upsample.size() != stage_channels.size()) {
    throw Error(ErrorKind::kConfig, "decoder: upsample and stage_channels differ");
  }
  for (size_t i = 0; i < upsample.size(); ++i) {
    if (upsample[i] < 1 || stage_channels[i] < 1) {
      throw Error(ErrorKind::kConfig, "decoder: invalid vocoder stage");
    }
  }
  if (total_upsample() != kSamplesPerFrame) {
    throw Error(ErrorKind::kConfig, "decoder: total upsampling is " +
                                        std::to_string(total_upsample()) +
                                        ", must be 480");
  }
}

DecoderConfig DecoderConfig::FromJson(const nlohmann::json& j) {
  DecoderConfig c;
  c.input_dim = j.value("input_dim", c.input_dim);
  c.speaker_dim = j.value("speaker_dim", c.speaker_dim);
  c.channels = j.value("channels", c.channels);
  c.kernel = j.value("kernel", c.kernel);
  c.upsample = j.value("upsample", c.upsample);
  c.stage_channels = j.value("stage_channels", c.stage_channels);
  c.vocoder_kernel = j.value("vocoder_kernel", c.vocoder_kernel);
  c.Validate();
  return c;
}

nlohmann::json DecoderConfig::ToJson() const {
  return {{"input_dim", input_dim},       {"speaker_dim", speaker_dim},
          {"channels", channels},         {"kernel", kernel},
          {"upsample", upsample},         {"stage_channels", stage_channels},
          {"vocoder_kernel", vocoder_kernel}};
}

namespace {

Tensor Film(const Tensor& h, const nn::Linear& film, const Tensor& speaker) {
  const Eigen::Index c = h.cols();
  const Tensor params = film.Forward(speaker);
  const Tensor gain = nn::AddScalar(nn::SliceCols(params, 0, c), 1.0);
  return nn::AddRow(nn::MulRow(h, gain), nn::SliceCols(params, c, c));
}

Tensor Act(const Tensor& x) { return nn::LeakyRelu(x, 0.1); }

}  // namespace

SpeechDecoder::SpeechDecoder(const DecoderConfig& config, nn::Rng& rng)
    : config_((config.Validate(), config)),
      in_(config.input_dim, config.channels, config.kernel, rng),
      film0_(config.speaker_dim, 2 * config.channels, rng),
      block0_(config.channels, config.kernel, 1, rng),
      up_(config.channels, config.channels, config.kernel, rng),
      film1_(config.speaker_dim, 2 * config.channels, rng),
      block1_(config.channels, config.kernel, 2, rng),
      out_(config.stage_channels.back(), 1, config.vocoder_kernel, rng) {
  RegisterModule("in", &in_);
  RegisterModule("film0", &film0_);
  RegisterModule("block0", &block0_);
  RegisterModule("up", &up_);
  RegisterModule("film1", &film1_);
  RegisterModule("block1", &block1_);
  // History in frames: receptive field (in rows) divided by rows per frame.
  double history = (config.kernel - 1) + (block0_.receptive_field() - 1) +
                   (config.kernel - 1) / 2.0 + (block1_.receptive_field() - 1) / 2.0;
  int in_ch = config.channels;
  int rate = 2;
  for (size_t i = 0; i < config.upsample.size(); ++i) {
    const int f = config.upsample[i];
    rate *= f;
    stage_up_.push_back(
        std::make_unique<nn::CausalConv>(in_ch, config.stage_channels[i], f + 1, rng));
    stage_res_.push_back(std::make_unique<nn::ResidualConvBlock>(
        config.stage_channels[i], config.vocoder_kernel, 3, rng));
    RegisterModule("stage" + std::to_string(i) + ".up", stage_up_.back().get());
    RegisterModule("stage" + std::to_string(i) + ".res", stage_res_.back().get());
    history += static_cast<double>(f + stage_res_.back()->receptive_field() - 1) / rate;
    in_ch = config.stage_channels[i];
  }
  RegisterModule("out", &out_);
  history += static_cast<double>(config.vocoder_kernel - 1) / rate;
  history_frames_ = static_cast<int>(std::ceil(history)) + 1;
}

Tensor SpeechDecoder::Forward(const Tensor& hidden, const Tensor& speaker) const {
  if (hidden.rows() == 0) throw Error(ErrorKind::kEmptyInput, "decoder: no frames");
  if (hidden.cols() != config_.input_dim || speaker.cols() != config_.speaker_dim ||
      speaker.rows() != 1) {
    throw Error(ErrorKind::kConfig,
                "decoder: input is " + std::to_string(hidden.cols()) + "-dim with a " +
                    std::to_string(speaker.cols()) + "-dim speaker, model expects " +
                    std::to_string(config_.input_dim) + " and " +
                    std::to_string(config_.speaker_dim));
  }
  Tensor h = Film(in_.Forward(hidden), film0_, speaker);
  h = block0_.Forward(h);
  h = up_.Forward(Act(nn::RepeatRows(h, 2)));
  h = block1_.Forward(Film(h, film1_, speaker));
  for (size_t i = 0; i < stage_up_.size(); ++i) {
    h = stage_up_[i]->Forward(nn::RepeatRows(Act(h), config_.upsample[i]));
    h = stage_res_[i]->Forward(h);
  }
  return nn::Tanh(out_.Forward(Act(h)));
}

audio::Waveform DecodeFull(const SpeechDecoder& model, const DecoderInput& input) {
  nn::NoGradGuard guard;
  const Tensor wave = model.Forward(Tensor(input.hidden), Tensor(input.speaker));
  const Matrix& v = wave.value();
  return audio::FromDouble(std::span<const double>(v.data(), v.size()));
}

StreamDecoder::StreamDecoder(const SpeechDecoder& model, const Matrix& speaker,
                             int chunk_frames)
    : model_(model),
      speaker_(speaker),
      chunk_frames_(chunk_frames),
      frames_(0, model.config().input_dim) {
  if (chunk_frames < 1) {
    throw Error(ErrorKind::kConfig, "stream: chunk_frames must be at least 1");
  }
}

StreamChunk StreamDecoder::Emit(long end, bool final) {
  StreamChunk chunk;
  chunk.chunk_index = next_index_++;
  chunk.is_final = final;
  if (end > emitted_) {
    nn::NoGradGuard guard;
    const long start = std::max<long>(0, emitted_ - model_.history_frames());
    const Tensor wave = model_.Forward(Tensor(Matrix(frames_.middleRows(start, end - start))),
                                       Tensor(speaker_));
    const long skip = (emitted_ - start) * kSamplesPerFrame;
    chunk.samples.assign(wave.value().data() + skip,
                         wave.value().data() + wave.value().size());
  }
  emitted_ = end;
  return chunk;
}

std::vector<StreamChunk> StreamDecoder::Push(const Matrix& frames) {
  if (frames.cols() != frames_.cols()) {
    throw Error(ErrorKind::kConfig, "stream: frame width mismatch");
  }
  frames_.conservativeResize(frames_.rows() + frames.rows(), Eigen::NoChange);
  frames_.bottomRows(frames.rows()) = frames;
  std::vector<StreamChunk> out;
  while (frames_.rows() - emitted_ >= chunk_frames_) {
    out.push_back(Emit(emitted_ + chunk_frames_, false));
  }
  return out;
}

StreamChunk StreamDecoder::Finish() { return Emit(frames_.rows(), true); }

void DecodeStream(const SpeechDecoder& model, const DecoderInput& input,
                  int chunk_frames,
                  const std::function<void(const StreamChunk&)>& sink) {
  if (input.hidden.rows() == 0) throw Error(ErrorKind::kEmptyInput, "stream: no frames");
  StreamDecoder stream(model, input.speaker, chunk_frames);
  std::optional<StreamChunk> held;
  for (Eigen::Index start = 0; start < input.hidden.rows(); start += chunk_frames) {
    const Eigen::Index n = std::min<Eigen::Index>(chunk_frames, input.hidden.rows() - start);
    for (auto& c : stream.Push(input.hidden.middleRows(start, n))) {
      if (held) sink(*held);
      held = std::move(c);
    }
  }
  StreamChunk last = stream.Finish();
  if (last.samples.empty() && held) {
    held->is_final = true;
    sink(*held);
    return;
  }
  if (held) sink(*held);
  sink(last);
}

Matrix ExpandHidden(const Matrix& hidden, std::span<const int64_t> tokens,
                    const bpe::BpeVocab& vocab) {
  if (hidden.rows() != static_cast<Eigen::Index>(tokens.size())) {
    throw Error(ErrorKind::kData, "expand: one hidden row per token required");
  }
  std::vector<size_t> lengths(tokens.size());
  size_t total = 0;
  for (size_t i = 0; i < tokens.size(); ++i) {
    lengths[i] = bpe::DecodeTokens(tokens.subspan(i, 1), vocab).size();
    total += lengths[i];
  }
  const Eigen::Index d = hidden.cols();
  Matrix out(static_cast<Eigen::Index>(total), d + 2);
  Eigen::Index row = 0;
  for (size_t i = 0; i < tokens.size(); ++i) {
    const double len = static_cast<double>(lengths[i]);
    for (size_t k = 0; k < lengths[i]; ++k, ++row) {
      out.block(row, 0, 1, d) = hidden.row(static_cast<Eigen::Index>(i));
      out(row, d) = k / len;
      out(row, d + 1) = 1.0 / len;
    }
  }
  return out;
}

struct Discriminators::Stack : nn::Module {
  std::vector<std::unique_ptr<nn::CausalConv>> convs;

  Stack(const std::vector<std::array<int, 4>>& layers, nn::Rng& rng) {
    for (const auto& [in, out, k, s] : layers) {
      convs.push_back(std::make_unique<nn::CausalConv>(in, out, k, rng, 1, s));
      RegisterModule("conv" + std::to_string(convs.size() - 1), convs.back().get());
    }
  }

  Tensor Forward(const Tensor& x, std::vector<Tensor>* features) const {
    Tensor h = x;
    for (size_t i = 0; i < convs.size(); ++i) {
      h = convs[i]->Forward(h);
      if (i + 1 < convs.size()) {
        h = Act(h);
        features->push_back(h);
      }
    }
    return h;
  }
};

Discriminators::Discriminators(nn::Rng& rng, std::vector<int> periods,
                               std::vector<int> scales)
    : periods_(std::move(periods)), scales_(std::move(scales)) {
  for (int p : periods_) {
    period_stacks_.push_back(std::make_unique<Stack>(
        std::vector<std::array<int, 4>>{
            {1, 8, 5, 3}, {8, 16, 5, 3}, {16, 16, 3, 1}, {16, 1, 3, 1}},
        rng));
    RegisterModule("period" + std::to_string(p), period_stacks_.back().get());
  }
  for (int s : scales_) {
    scale_stacks_.push_back(std::make_unique<Stack>(
        std::vector<std::array<int, 4>>{
            {1, 8, 15, 1}, {8, 16, 11, 4}, {16, 16, 5, 1}, {16, 1, 3, 1}},
        rng));
    RegisterModule("scale" + std::to_string(s), scale_stacks_.back().get());
  }
}

Discriminators::~Discriminators() = default;

DiscriminatorOutput Discriminators::Forward(const Tensor& wave) const {
  DiscriminatorOutput out;
  for (size_t i = 0; i < periods_.size(); ++i) {
    const int p = periods_[i];
    std::vector<Tensor> scores;
    std::vector<std::vector<Tensor>> per_column;
    for (int j = 0; j < p && j < wave.rows(); ++j) {
      std::vector<Tensor> f;
      scores.push_back(period_stacks_[i]->Forward(nn::StrideRows(wave, j, p), &f));
      per_column.push_back(std::move(f));
    }
    out.scores.push_back(nn::ConcatRows(scores));
    std::vector<Tensor> layers;
    for (size_t l = 0; l < per_column.front().size(); ++l) {
      std::vector<Tensor> cols;
      for (const auto& f : per_column) cols.push_back(f[l]);
      layers.push_back(nn::ConcatRows(cols));
    }
    out.features.push_back(std::move(layers));
  }
  for (size_t i = 0; i < scales_.size(); ++i) {
    const Tensor x = scales_[i] == 1 ? wave : nn::AvgPoolRows(wave, scales_[i]);
    std::vector<Tensor> f;
    out.scores.push_back(scale_stacks_[i]->Forward(x, &f));
    out.features.push_back(std::move(f));
  }
  return out;
}

Tensor HingeDiscriminatorLoss(const std::vector<Tensor>& real,
                              const std::vector<Tensor>& fake) {
  if (real.size() != fake.size() || real.empty()) {
    throw Error(ErrorKind::kData, "hinge: mismatched discriminator outputs");
  }
  Tensor total = Tensor::Scalar(0.0);
  for (size_t i = 0; i < real.size(); ++i) {
    total = nn::Add(total, nn::Mean(nn::Relu(nn::AddScalar(nn::Scale(real[i], -1.0), 1.0))));
    total = nn::Add(total, nn::Mean(nn::Relu(nn::AddScalar(fake[i], 1.0))));
  }
  return total;
}

Tensor HingeGeneratorLoss(const std::vector<Tensor>& fake) {
  Tensor total = Tensor::Scalar(0.0);
  for (const auto& f : fake) total = nn::Sub(total, nn::Mean(f));
  return total;
}

Tensor FeatureMatchingLoss(const std::vector<std::vector<Tensor>>& real,
                           const std::vector<std::vector<Tensor>>& fake) {
  Tensor total = Tensor::Scalar(0.0);
  int count = 0;
  for (size_t d = 0; d < real.size(); ++d) {
    for (size_t l = 0; l < real[d].size(); ++l) {
      total = nn::Add(total,
                      nn::Mean(nn::Abs(nn::Sub(nn::Detach(real[d][l]), fake[d][l]))));
      ++count;
    }
  }
  return count ? nn::Scale(total, 1.0 / count) : total;
}

GeneratorLoss ComputeGeneratorLoss(const Tensor& fake, const Tensor& real,
                                   const Discriminators& disc,
                                   const audio::MelTransform& mel,
                                   const LossWeights& w, bool adversarial) {
  GeneratorLoss out;
  const Tensor mel_l1 =
      nn::Mean(nn::Abs(nn::Sub(mel.Forward(fake), mel.Forward(nn::Detach(real)))));
  out.mel_l1 = mel_l1.item();
  out.total = nn::Scale(mel_l1, w.mel);
  if (adversarial) {
    const DiscriminatorOutput d_fake = disc.Forward(fake);
    DiscriminatorOutput d_real;
    {
      nn::NoGradGuard guard;
      d_real = disc.Forward(real);
    }
    const Tensor fm = FeatureMatchingLoss(d_real.features, d_fake.features);
    const Tensor adv = HingeGeneratorLoss(d_fake.scores);
    out.feature = fm.item();
    out.adversarial = adv.item();
    out.total = nn::Add(out.total,
                        nn::Add(nn::Scale(fm, w.feature), nn::Scale(adv, w.adversarial)));
  }
  return out;
}

DecoderTrainConfig DecoderTrainConfig::FromJson(const nlohmann::json& j) {
  DecoderTrainConfig c;
  c.crop_frames = j.value("crop_frames", c.crop_frames);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.learning_rate = j.value("learning_rate", c.learning_rate);
  c.grad_clip = j.value("grad_clip", c.grad_clip);
  c.adversarial_start = j.value("adversarial_start", c.adversarial_start);
  c.weights.mel = j.value("mel_weight", c.weights.mel);
  c.weights.feature = j.value("feature_weight", c.weights.feature);
  c.weights.adversarial = j.value("adversarial_weight", c.weights.adversarial);
  if (c.crop_frames < 1 || c.batch_size < 1 || c.learning_rate <= 0.0) {
    throw Error(ErrorKind::kConfig, "decoder training: invalid settings");
  }
  return c;
}

nlohmann::json DecoderTrainConfig::ToJson() const {
  return {{"crop_frames", crop_frames},
          {"batch_size", batch_size},
          {"learning_rate", learning_rate},
          {"grad_clip", grad_clip},
          {"adversarial_start", adversarial_start},
          {"mel_weight", weights.mel},
          {"feature_weight", weights.feature},
          {"adversarial_weight", weights.adversarial}};
}

DecoderTrainer::DecoderTrainer(SpeechDecoder& model, Discriminators& disc,
                               const DecoderTrainConfig& config, uint64_t seed)
    : model_(model),
      disc_(disc),
      config_(config),
      mel_(audio::MelConfig{}),
      gen_opt_(model.Parameters(), nn::AdamConfig{.beta1 = 0.8, .beta2 = 0.99}),
      disc_opt_(disc.Parameters(), nn::AdamConfig{.beta1 = 0.8, .beta2 = 0.99}),
      rng_(seed) {}

DecoderStepResult DecoderTrainer::Step(const std::vector<DecoderExample>& data) {
  if (data.empty()) throw Error(ErrorKind::kEmptyInput, "decoder: no training data");
  struct Crop {
    Tensor hidden, speaker, real;
  };
  std::vector<Crop> crops;
  for (int b = 0; b < config_.batch_size; ++b) {
    const DecoderExample& ex = data[rng_() % data.size()];
    const Eigen::Index frames = ex.hidden.rows();
    if (static_cast<size_t>(frames) * kSamplesPerFrame != ex.samples.size()) {
      throw Error(ErrorKind::kData, "decoder: target length is not frames x 480");
    }
    const Eigen::Index len = std::min<Eigen::Index>(config_.crop_frames, frames);
    const Eigen::Index off = frames > len ? rng_() % (frames - len + 1) : 0;
    Matrix real(len * kSamplesPerFrame, 1);
    std::copy_n(ex.samples.begin() + off * kSamplesPerFrame, real.rows(), real.data());
    crops.push_back({Tensor(Matrix(ex.hidden.middleRows(off, len))),
                     Tensor(ex.speaker), Tensor(std::move(real))});
  }
  const bool adversarial = step_ >= config_.adversarial_start;
  ++step_;
  std::vector<Tensor> fakes;
  for (const Crop& c : crops) fakes.push_back(model_.Forward(c.hidden, c.speaker));
  const double n = static_cast<double>(crops.size());

  DecoderStepResult result;
  if (adversarial) {
    disc_opt_.ZeroGrad();
    Tensor d_loss = Tensor::Scalar(0.0);
    for (size_t i = 0; i < crops.size(); ++i) {
      const DiscriminatorOutput real = disc_.Forward(crops[i].real);
      const DiscriminatorOutput fake = disc_.Forward(nn::Detach(fakes[i]));
      d_loss = nn::Add(d_loss, HingeDiscriminatorLoss(real.scores, fake.scores));
    }
    d_loss = nn::Scale(d_loss, 1.0 / n);
    if (!std::isfinite(d_loss.item())) {
      throw Error(ErrorKind::kNumerical, "decoder: non-finite discriminator loss");
    }
    d_loss.Backward();
    const auto params = disc_.Parameters();
    nn::ClipGradNorm(params, config_.grad_clip);
    disc_opt_.Step(config_.learning_rate);
    result.discriminator_loss = d_loss.item();
    collapsed_steps_ = result.discriminator_loss < kCollapseLoss ? collapsed_steps_ + 1 : 0;
    result.collapse_warning = collapsed_steps_ >= kCollapseSteps;
  }

  gen_opt_.ZeroGrad();
  Tensor g_loss = Tensor::Scalar(0.0);
  for (size_t i = 0; i < crops.size(); ++i) {
    const GeneratorLoss parts = ComputeGeneratorLoss(fakes[i], crops[i].real, disc_, mel_,
                                                     config_.weights, adversarial);
    g_loss = nn::Add(g_loss, parts.total);
    result.mel_l1 += parts.mel_l1 / n;
    result.feature += parts.feature / n;
    result.adversarial += parts.adversarial / n;
  }
  g_loss = nn::Scale(g_loss, 1.0 / n);
  if (!std::isfinite(g_loss.item())) {
    throw Error(ErrorKind::kNumerical, "decoder: non-finite generator loss");
  }
  g_loss.Backward();
  const auto params = model_.Parameters();
  nn::ClipGradNorm(params, config_.grad_clip);
  gen_opt_.Step(config_.learning_rate);
  disc_opt_.ZeroGrad();
  result.generator_loss = g_loss.item();
  return result;
}

double MelReconstructionL1(const SpeechDecoder& model,
                           const std::vector<DecoderExample>& data) {
  if (data.empty()) throw Error(ErrorKind::kEmptyInput, "decoder: no examples");
  nn::NoGradGuard guard;
  const audio::MelTransform mel{audio::MelConfig{}};
  double total = 0.0;
  for (const auto& ex : data) {
    const Tensor fake = model.Forward(Tensor(ex.hidden), Tensor(ex.speaker));
    Matrix real(static_cast<Eigen::Index>(ex.samples.size()), 1);
    std::copy(ex.samples.begin(), ex.samples.end(), real.data());
    total += (mel.Forward(fake).value() - mel.Forward(Tensor(real)).value())
                 .cwiseAbs()
                 .mean();
  }
  return total / data.size();
}

SynthesisBenchmark BenchmarkSynthesis(const SpeechDecoder& model, int n_utts,
                                      double utt_seconds, bool stream,
                                      int chunk_frames, uint64_t seed) {
  using Clock = std::chrono::steady_clock;
  if (n_utts < 1 || utt_seconds <= 0.0) {
    throw Error(ErrorKind::kConfig, "benchmark: need at least one utterance");
  }
  nn::Rng rng(seed);
  SynthesisBenchmark r;
  r.utterances = n_utts;
  r.utterance_seconds = utt_seconds;
  r.streaming = stream;
  const auto frames = static_cast<Eigen::Index>(
      std::max(1.0, std::round(utt_seconds * audio::kSampleRate / kSamplesPerFrame)));
  for (int u = 0; u < n_utts; ++u) {
    DecoderInput in{nn::RandomNormal(frames, model.config().input_dim, 1.0, rng),
                    nn::RandomNormal(1, model.config().speaker_dim, 1.0, rng)};
    const auto t0 = Clock::now();
    double first = -1.0;
    if (stream) {
      DecodeStream(model, in, chunk_frames, [&](const StreamChunk&) {
        if (first < 0) first = std::chrono::duration<double>(Clock::now() - t0).count();
      });
    } else {
      DecodeFull(model, in);
    }
    const double total = std::chrono::duration<double>(Clock::now() - t0).count();
    r.mean_wall_time += total / n_utts;
    r.first_chunk_time += (stream ? first : total) / n_utts;
  }
  return r;
}

void SaveDecoder(const std::filesystem::path& path, const SpeechDecoder& model) {
  nn::Checkpoint ck("speech_decoder", model.config().ToJson());
  ck.AddModule("model", model);
  ck.Save(path);
}

std::unique_ptr<SpeechDecoder> LoadDecoder(const std::filesystem::path& path) {
  const nn::Checkpoint ck = nn::Checkpoint::Load(path);
  if (ck.kind() != "speech_decoder") {
    throw Error(ErrorKind::kDataIntegrity,
                path.string() + " is a '" + ck.kind() + "' checkpoint, not speech_decoder");
  }
  nn::Rng rng(0);
  auto model = std::make_unique<SpeechDecoder>(DecoderConfig::FromJson(ck.config()), rng);
  ck.RestoreModule("model", *model);
  return model;
}

}  // namespace basetts::decoder
