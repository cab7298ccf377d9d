#pragma once

#include <filesystem>
#include <functional>
#include <memory>
#include <vector>

#include <nlohmann/json.hpp>

#include "basetts/audio/mel.h"
#include "basetts/nn/module.h"
#include "basetts/nn/optim.h"
#include "basetts/tokenizer/loss.h"
#include "basetts/tokenizer/speechcode.h"
#include "basetts/tokenizer/ssl_tokenizer.h"
#include "basetts/tokenizer/vq.h"

namespace basetts::tokenizer {

struct VqVaeConfig {
  int codebook_size = kVqVaeCodebookSize;
  int code_dim = 16;
  int channels = 64;
  int encoder_blocks = 2;
  int decoder_blocks = 3;
  int kernel = 3;
  int ref_channels = 32;
  int ref_dim = 16;
  double vq_decay = 0.99;
  int dead_code_steps = 100;
  double alpha = 0.25;  // commitment weight
  audio::MelConfig mel;
  TokenizerTrainConfig train;

  static VqVaeConfig FromJson(const nlohmann::json& j);
  nlohmann::json ToJson() const;
};

// Mel autoencoder with a 2x temporal downsampling to 25 Hz, a discrete
// bottleneck and a global reference encoder whose utterance-level embedding
// is concatenated to every code before decoding.
class VqVae : public nn::Module {
 public:
  VqVae(const VqVaeConfig& config, nn::Rng& rng);

  // [T x num_mels] -> [ceil(T/2) x code_dim]
  nn::Tensor Encode(const nn::Tensor& mel) const;
  // [T x num_mels] -> [1 x ref_dim], unit norm, for any T >= 1.
  nn::Tensor Reference(const nn::Tensor& mel) const;
  // [S x code_dim], [1 x ref_dim] -> [2S x num_mels]
  nn::Tensor Decode(const nn::Tensor& quantized, const nn::Tensor& ref) const;

  const VqVaeConfig& config() const { return config_; }
  VectorQuantizer& quantizer() { return quantizer_; }
  const VectorQuantizer& quantizer() const { return quantizer_; }

 private:
  VqVaeConfig config_;
  nn::CausalConv enc_in_;
  std::vector<std::unique_ptr<nn::ResidualConvBlock>> enc_blocks_;
  nn::CausalConv enc_down_;
  nn::Linear enc_out_;
  VectorQuantizer quantizer_;
  nn::CausalConv ref_conv_;
  nn::Linear ref_out_;
  nn::CausalConv dec_in_;
  std::vector<std::unique_ptr<nn::ResidualConvBlock>> dec_blocks_;
  nn::Linear dec_out_;
};

struct VqVaeEncoding {
  SpeechcodeSequence codes;
  nn::Matrix reference;  // [1 x ref_dim]
};

VqVaeEncoding EncodeVqVae(const VqVae& model, const audio::MelSpectrogram& mel,
                          const audio::MelSpectrogram& ref);
audio::MelSpectrogram DecodeVqVae(const VqVae& model,
                                  const SpeechcodeSequence& codes,
                                  const nn::Matrix& reference);

class VqVaeTrainer {
 public:
  VqVaeTrainer(VqVae& model, uint64_t seed);
  // Crops of even start; references are other crops of the same speaker.
  std::vector<TokenizerExample> SampleBatch(const std::vector<TokenizerExample>& data,
                                            std::vector<TokenizerExample>* refs);
  TokenizerLoss Step(const std::vector<TokenizerExample>& batch,
                     const std::vector<TokenizerExample>& refs);

 private:
  void UpdateCodebook(const std::vector<TokenizerExample>& batch);

  VqVae& model_;
  nn::Rng rng_;
  std::unique_ptr<nn::AdamW> optimizer_;
  int step_ = 0;
};

// Mean absolute mel error, each utterance using itself as reference.
double ReconstructionL1(const VqVae& model, const std::vector<TokenizerExample>& data);

void TrainVqVae(VqVae& model, const std::vector<TokenizerExample>& data,
                uint64_t seed,
                const std::function<void(const TrainLogEntry&)>& log = {});

void SaveVqVae(const std::filesystem::path& path, const VqVae& model);
std::unique_ptr<VqVae> LoadVqVae(const std::filesystem::path& path);

}  // namespace basetts::tokenizer
