#pragma once

#include <nlohmann/json.hpp>

#include "basetts/nn/tensor.h"

namespace basetts::tokenizer {

// Weights of the commitment, contrastive and cosine terms; reconstruction has
// weight one.
struct TokenizerLossWeights {
  double alpha = 0.25;
  double beta = 1.0;
  double gamma = 1.0;

  void Validate() const;
  static TokenizerLossWeights FromJson(const nlohmann::json& j);
  nlohmann::json ToJson() const;
};

// Any component may be left undefined, in which case it counts as zero.
struct TokenizerLossComponents {
  nn::Tensor recon;
  nn::Tensor commitment;
  nn::Tensor contrastive;
  nn::Tensor cosine;
};

struct TokenizerLoss {
  nn::Tensor total;
  double recon = 0.0;
  double commitment = 0.0;
  double contrastive = 0.0;
  double cosine = 0.0;
};

// total = recon + alpha * commitment + beta * contrastive + gamma * cosine.
// A non-finite component raises a numerical error naming it.
TokenizerLoss CombineTokenizerLoss(const TokenizerLossComponents& components,
                                   const TokenizerLossWeights& weights);

// 1 - cos(stopgrad(speaker_embedding), content_embedding), averaged over
// rows. The caller computes content_embedding by running the frozen extractor
// on the gradient-reversed content-regressor output.
nn::Tensor CosineLeakageLoss(const nn::Tensor& speaker_embedding,
                             const nn::Tensor& content_embedding);

}  // namespace basetts::tokenizer
