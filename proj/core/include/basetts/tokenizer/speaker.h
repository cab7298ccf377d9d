#pragma once

#include <memory>
#include <span>
#include <vector>

#include <nlohmann/json.hpp>

#include "basetts/nn/module.h"

namespace basetts::tokenizer {

struct SpeakerExtractorConfig {
  int channels = 32;
  int heads = 2;
  int layers = 1;
  int embedding_dim = 16;
  int kernel = 3;

  static SpeakerExtractorConfig FromJson(const nlohmann::json& j);
  nlohmann::json ToJson() const;
};

// Convolutional front end, transformer layers, mean pooling over time and a
// projection to a unit-norm utterance embedding.
class SpeakerExtractor : public nn::Module {
 public:
  SpeakerExtractor(int input_dim, const SpeakerExtractorConfig& config,
                   nn::Rng& rng);
  // [T x input_dim] -> [1 x embedding_dim], unit L2 norm.
  nn::Tensor Forward(const nn::Tensor& x) const;
  int embedding_dim() const { return config_.embedding_dim; }

 private:
  SpeakerExtractorConfig config_;
  nn::CausalConv conv_;
  std::vector<std::unique_ptr<nn::TransformerBlock>> blocks_;
  nn::Linear proj_;
};

// Supervised InfoNCE over cosine similarities: each anchor with at least one
// same-speaker partner contributes the mean negative log-softmax of its
// positives against all other batch members.
nn::Tensor ContrastiveSpeakerLoss(const nn::Tensor& embeddings,
                                  std::span<const int> speaker_ids,
                                  double temperature = 0.1);

}  // namespace basetts::tokenizer
