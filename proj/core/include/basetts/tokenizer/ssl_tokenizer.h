#pragma once

#include <filesystem>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "basetts/audio/audio.h"
#include "basetts/audio/mel.h"
#include "basetts/nn/module.h"
#include "basetts/nn/optim.h"
#include "basetts/tokenizer/loss.h"
#include "basetts/tokenizer/speaker.h"
#include "basetts/tokenizer/speechcode.h"
#include "basetts/tokenizer/ssl.h"
#include "basetts/tokenizer/vq.h"

namespace basetts::tokenizer {

struct TokenizerTrainConfig {
  int steps = 2000;
  int batch_size = 8;
  int crop_frames = 100;
  double learning_rate = 1e-3;
  double grad_clip = 1.0;
  // Steps between refreshes of the frozen extractor snapshot. Zero means one
  // pass over the training set.
  int epoch_steps = 0;

  static TokenizerTrainConfig FromJson(const nlohmann::json& j);
  nlohmann::json ToJson() const;
};

struct SslTokenizerConfig {
  int codebook_size = kSslCodebookSize;
  int code_dim = 16;
  int regressor_dim = 32;
  int channels = 64;
  int encoder_blocks = 2;
  int decoder_blocks = 3;
  int kernel = 3;
  // Per-utterance mean/variance normalization of the content-regressor
  // output over time.
  bool content_norm = true;
  double grl_lambda = 1.0;
  double temperature = 0.1;
  double vq_decay = 0.99;
  int dead_code_steps = 100;
  TokenizerLossWeights weights;
  SpeakerExtractorConfig extractor;
  nlohmann::json provider = {{"type", "random_conv"}};
  audio::MelConfig mel;
  TokenizerTrainConfig train;

  static SslTokenizerConfig FromJson(const nlohmann::json& j);
  nlohmann::json ToJson() const;
};

// Features -> {content, speaker} linear regressors; content -> residual conv
// encoder -> VQ; speaker -> transformer extractor; codes + embedding ->
// convolutional mel decoder.
class SslTokenizer : public nn::Module {
 public:
  SslTokenizer(const SslTokenizerConfig& config, int feature_dim, nn::Rng& rng);

  struct Output {
    nn::Tensor content;  // content-regressor output, [T x regressor_dim]
    nn::Tensor encoded;  // quantizer input, [T x code_dim]
    VqOutput vq;
    nn::Tensor speaker_regressed;
    nn::Tensor speaker_embedding;  // [1 x E]
    nn::Tensor mel;                // [T x num_mels]
  };
  Output Run(const nn::Tensor& features) const;

  nn::Tensor ContentRegress(const nn::Tensor& features) const;
  nn::Tensor EncodeContent(const nn::Tensor& content) const;
  nn::Tensor SpeakerRegress(const nn::Tensor& features) const;
  nn::Tensor SpeakerEmbedding(const nn::Tensor& features) const;
  nn::Tensor Decode(const nn::Tensor& quantized, const nn::Tensor& embedding) const;

  const SslTokenizerConfig& config() const { return config_; }
  int feature_dim() const { return feature_dim_; }
  VectorQuantizer& quantizer() { return quantizer_; }
  const VectorQuantizer& quantizer() const { return quantizer_; }
  const SpeakerExtractor& extractor() const { return extractor_; }

 private:
  SslTokenizerConfig config_;
  int feature_dim_;
  nn::Linear content_regressor_;
  nn::Linear speaker_regressor_;
  nn::CausalConv enc_in_;
  std::vector<std::unique_ptr<nn::ResidualConvBlock>> enc_blocks_;
  nn::Linear enc_out_;
  VectorQuantizer quantizer_;
  SpeakerExtractor extractor_;
  nn::CausalConv dec_in_;
  std::vector<std::unique_ptr<nn::ResidualConvBlock>> dec_blocks_;
  nn::Linear dec_out_;
};

struct SslEncoding {
  SpeechcodeSequence codes;
  nn::Matrix content;  // quantizer input per frame
};

// One code per 20 ms frame. Audio shorter than one frame is rejected.
SslEncoding EncodeSsl(const SslTokenizer& model, const audio::Waveform& w,
                      const SslFeatureProvider& provider);
nn::Matrix ExtractSpeaker(const SslTokenizer& model, const nn::Matrix& features);

struct TokenizerExample {
  std::string id;
  int speaker = 0;
  nn::Matrix features;  // provider output; empty for mel-only models
  nn::Matrix mel;
};

std::vector<TokenizerExample> MakeExamples(
    const std::vector<std::pair<audio::Waveform, int>>& utterances,
    const SslFeatureProvider* provider, const audio::MelConfig& mel);

class SslTokenizerTrainer {
 public:
  SslTokenizerTrainer(SslTokenizer& model, uint64_t seed);

  // Draws `batch_size` crops, two or more per sampled speaker.
  std::vector<TokenizerExample> SampleBatch(
      const std::vector<TokenizerExample>& data);
  TokenizerLoss Step(const std::vector<TokenizerExample>& batch);
  // Loss components on a batch without updating anything.
  TokenizerLossComponents Components(const std::vector<TokenizerExample>& batch);
  void RefreshFrozenExtractor();
  const SpeakerExtractor& frozen_extractor() const { return *frozen_; }
  int step() const { return step_; }

 private:
  void UpdateCodebook(const std::vector<TokenizerExample>& batch);

  SslTokenizer& model_;
  nn::Rng rng_;
  std::unique_ptr<SpeakerExtractor> frozen_;
  std::unique_ptr<nn::AdamW> optimizer_;
  int step_ = 0;
};

// Mean absolute mel error over whole utterances.
double ReconstructionL1(const SslTokenizer& model,
                        const std::vector<TokenizerExample>& data);

struct TrainLogEntry {
  int step = 0;
  TokenizerLoss loss;
};

// Runs `config.train.steps` updates, refreshing the frozen extractor every
// epoch. `log` (optional) receives every step.
void TrainSslTokenizer(SslTokenizer& model,
                       const std::vector<TokenizerExample>& data, uint64_t seed,
                       const std::function<void(const TrainLogEntry&)>& log = {});

void SaveSslTokenizer(const std::filesystem::path& path, const SslTokenizer& model);
std::unique_ptr<SslTokenizer> LoadSslTokenizer(const std::filesystem::path& path);

}  // namespace basetts::tokenizer
