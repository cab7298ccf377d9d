#pragma once

#include <filesystem>
#include <functional>
#include <memory>
#include <span>
#include <vector>

#include <nlohmann/json.hpp>

#include "basetts/audio/audio.h"
#include "basetts/audio/mel.h"
#include "basetts/bpe/bpe.h"
#include "basetts/nn/module.h"
#include "basetts/nn/optim.h"

namespace basetts::decoder {

inline constexpr int kSamplesPerFrame = 480;

struct DecoderConfig {
  int input_dim = 34;
  int speaker_dim = 16;
  int channels = 64;
  int kernel = 3;
  // Vocoder upsampling stages after the x2 decoder block; product must be 240.
  std::vector<int> upsample = {8, 6, 5};
  std::vector<int> stage_channels = {32, 16, 8};
  int vocoder_kernel = 7;

  int total_upsample() const;
  void Validate() const;
  static DecoderConfig FromJson(const nlohmann::json& j);
  nlohmann::json ToJson() const;
};

// Hidden states at 50 frames/s -> x2 decoder block with speaker modulation ->
// causal vocoder stack -> waveform at 24 kHz. Every convolution is causal, so
// sample n depends only on frames up to floor(n / 480).
class SpeechDecoder : public nn::Module {
 public:
  SpeechDecoder(const DecoderConfig& config, nn::Rng& rng);

  // [S x input_dim], [1 x speaker_dim] -> [S*480 x 1]
  nn::Tensor Forward(const nn::Tensor& hidden, const nn::Tensor& speaker) const;
  // Frames of left context that can influence the current frame's samples.
  int history_frames() const { return history_frames_; }
  const DecoderConfig& config() const { return config_; }

 private:
  DecoderConfig config_;
  nn::CausalConv in_;
  nn::Linear film0_;
  nn::ResidualConvBlock block0_;
  nn::CausalConv up_;
  nn::Linear film1_;
  nn::ResidualConvBlock block1_;
  std::vector<std::unique_ptr<nn::CausalConv>> stage_up_;
  std::vector<std::unique_ptr<nn::ResidualConvBlock>> stage_res_;
  nn::CausalConv out_;
  int history_frames_ = 0;
};

struct DecoderInput {
  nn::Matrix hidden;   // [S x input_dim]
  nn::Matrix speaker;  // [1 x speaker_dim]
};

audio::Waveform DecodeFull(const SpeechDecoder& model, const DecoderInput& input);

struct StreamChunk {
  std::vector<double> samples;
  int chunk_index = 0;
  bool is_final = false;
};

// Incremental decoding: frames are pushed as they are produced and a chunk is
// emitted as soon as `chunk_frames` new frames are available. Each chunk is
// decoded from its own frames plus history_frames() of left context.
class StreamDecoder {
 public:
  StreamDecoder(const SpeechDecoder& model, const nn::Matrix& speaker,
                int chunk_frames);
  std::vector<StreamChunk> Push(const nn::Matrix& frames);
  // Emits the remaining frames (possibly none) as the final chunk.
  StreamChunk Finish();

 private:
  StreamChunk Emit(long end, bool final);

  const SpeechDecoder& model_;
  nn::Matrix speaker_;
  int chunk_frames_;
  nn::Matrix frames_;
  long emitted_ = 0;
  int next_index_ = 0;
};

void DecodeStream(const SpeechDecoder& model, const DecoderInput& input,
                  int chunk_frames, const std::function<void(const StreamChunk&)>& sink);

// Repeats each token's hidden state once per base code it expands to and
// appends two features: position within the token / length, and 1 / length.
nn::Matrix ExpandHidden(const nn::Matrix& hidden, std::span<const int64_t> tokens,
                        const bpe::BpeVocab& vocab);

// Discriminators return per-position scores plus intermediate activations.
struct DiscriminatorOutput {
  std::vector<nn::Tensor> scores;
  std::vector<std::vector<nn::Tensor>> features;
};

class Discriminators : public nn::Module {
 public:
  Discriminators(nn::Rng& rng, std::vector<int> periods = {2, 3, 5},
                 std::vector<int> scales = {1, 2, 4});
  ~Discriminators() override;
  DiscriminatorOutput Forward(const nn::Tensor& wave) const;

 private:
  struct Stack;
  std::vector<int> periods_;
  std::vector<int> scales_;
  std::vector<std::unique_ptr<Stack>> period_stacks_;
  std::vector<std::unique_ptr<Stack>> scale_stacks_;
};

// Hinge objective: mean(relu(1 - real)) + mean(relu(1 + fake)), summed over
// discriminators.
nn::Tensor HingeDiscriminatorLoss(const std::vector<nn::Tensor>& real,
                                  const std::vector<nn::Tensor>& fake);
// -mean(fake), summed over discriminators.
nn::Tensor HingeGeneratorLoss(const std::vector<nn::Tensor>& fake);
// Mean absolute feature difference, averaged over layers and discriminators.
nn::Tensor FeatureMatchingLoss(const std::vector<std::vector<nn::Tensor>>& real,
                               const std::vector<std::vector<nn::Tensor>>& fake);

struct LossWeights {
  double mel = 45.0;
  double feature = 2.0;
  double adversarial = 1.0;
};

struct GeneratorLoss {
  nn::Tensor total;
  double mel_l1 = 0.0;
  double feature = 0.0;
  double adversarial = 0.0;
};

// Mel L1 + feature matching + hinge adversarial for a generated waveform.
GeneratorLoss ComputeGeneratorLoss(const nn::Tensor& fake, const nn::Tensor& real,
                                   const Discriminators& disc,
                                   const audio::MelTransform& mel,
                                   const LossWeights& weights, bool adversarial);

struct DecoderExample {
  nn::Matrix hidden;   // [S x input_dim]
  nn::Matrix speaker;  // [1 x speaker_dim]
  std::vector<double> samples;  // S * 480 target samples
};

struct DecoderTrainConfig {
  int crop_frames = 16;
  int batch_size = 2;
  double learning_rate = 2e-4;
  double grad_clip = 10.0;
  int adversarial_start = 0;
  LossWeights weights;

  static DecoderTrainConfig FromJson(const nlohmann::json& j);
  nlohmann::json ToJson() const;
};

struct DecoderStepResult {
  double generator_loss = 0.0;
  double discriminator_loss = 0.0;
  double mel_l1 = 0.0;
  double feature = 0.0;
  double adversarial = 0.0;
  bool collapse_warning = false;
};

class DecoderTrainer {
 public:
  static constexpr double kCollapseLoss = 1e-6;
  static constexpr int kCollapseSteps = 100;

  DecoderTrainer(SpeechDecoder& model, Discriminators& disc,
                 const DecoderTrainConfig& config, uint64_t seed);
  DecoderStepResult Step(const std::vector<DecoderExample>& data);
  int collapsed_steps() const { return collapsed_steps_; }

 private:
  SpeechDecoder& model_;
  Discriminators& disc_;
  DecoderTrainConfig config_;
  audio::MelTransform mel_;
  nn::AdamW gen_opt_;
  nn::AdamW disc_opt_;
  nn::Rng rng_;
  int step_ = 0;
  int collapsed_steps_ = 0;
};

// Mel L1 of the full decode of every example against its target.
double MelReconstructionL1(const SpeechDecoder& model,
                           const std::vector<DecoderExample>& data);

struct SynthesisBenchmark {
  double mean_wall_time = 0.0;
  double first_chunk_time = 0.0;
  int utterances = 0;
  double utterance_seconds = 0.0;
  bool streaming = false;
};

SynthesisBenchmark BenchmarkSynthesis(const SpeechDecoder& model, int n_utts,
                                      double utt_seconds, bool stream,
                                      int chunk_frames = 25, uint64_t seed = 0);

void SaveDecoder(const std::filesystem::path& path, const SpeechDecoder& model);
std::unique_ptr<SpeechDecoder> LoadDecoder(const std::filesystem::path& path);

}  // namespace basetts::decoder
