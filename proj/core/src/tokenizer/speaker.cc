#include "basetts/tokenizer/speaker.h"

#include "basetts/error.h"
#include "basetts/nn/ops.h"

namespace basetts::tokenizer {

using nn::Matrix;
using nn::Tensor;

SpeakerExtractorConfig SpeakerExtractorConfig::FromJson(const nlohmann::json& j) {
  SpeakerExtractorConfig c;
  c.channels = j.value("channels", c.channels);
  c.heads = j.value("heads", c.heads);
  c.layers = j.value("layers", c.layers);
  c.embedding_dim = j.value("embedding_dim", c.embedding_dim);
  c.kernel = j.value("kernel", c.kernel);
  if (c.channels % c.heads != 0 || c.embedding_dim < 1 || c.layers < 0) {
    throw Error(ErrorKind::kConfig, "speaker extractor: invalid shape");
  }
  return c;
}

nlohmann::json SpeakerExtractorConfig::ToJson() const {
  return {{"channels", channels},
          {"heads", heads},
          {"layers", layers},
          {"embedding_dim", embedding_dim},
          {"kernel", kernel}};
}

SpeakerExtractor::SpeakerExtractor(int input_dim,
                                   const SpeakerExtractorConfig& config,
                                   nn::Rng& rng)
    : config_(config),
      conv_(input_dim, config.channels, config.kernel, rng),
      proj_(config.channels, config.embedding_dim, rng) {
  RegisterModule("conv", &conv_);
  for (int i = 0; i < config.layers; ++i) {
    blocks_.push_back(std::make_unique<nn::TransformerBlock>(
        config.channels, config.heads, 2 * config.channels, rng));
    RegisterModule("block" + std::to_string(i), blocks_.back().get());
  }
  RegisterModule("proj", &proj_);
}

Tensor SpeakerExtractor::Forward(const Tensor& x) const {
  if (x.rows() == 0) {
    throw Error(ErrorKind::kEmptyInput, "speaker extractor needs >= 1 frame");
  }
  Tensor h = nn::LeakyRelu(conv_.Forward(x), 0.1);
  for (const auto& block : blocks_) h = block->Forward(h, /*causal=*/false);
  return nn::L2NormalizeRows(proj_.Forward(nn::MeanRows(h)));
}

Tensor ContrastiveSpeakerLoss(const Tensor& embeddings,
                              std::span<const int> speaker_ids,
                              double temperature) {
  const Eigen::Index n = embeddings.rows();
  if (static_cast<Eigen::Index>(speaker_ids.size()) != n) {
    throw Error(ErrorKind::kData, "contrastive loss: label count mismatch");
  }
  if (temperature <= 0.0) {
    throw Error(ErrorKind::kConfig, "contrastive loss: temperature must be > 0");
  }
  Matrix weights = Matrix::Zero(n, n);
  int anchors = 0;
  for (Eigen::Index i = 0; i < n; ++i) {
    int positives = 0;
    for (Eigen::Index j = 0; j < n; ++j) {
      if (j != i && speaker_ids[j] == speaker_ids[i]) ++positives;
    }
    if (positives == 0) continue;
    ++anchors;
    for (Eigen::Index j = 0; j < n; ++j) {
      if (j != i && speaker_ids[j] == speaker_ids[i]) weights(i, j) = 1.0 / positives;
    }
  }
  if (n < 2 || anchors == 0) {
    throw Error(ErrorKind::kLossUndefined,
                "contrastive loss needs at least one same-speaker pair");
  }
  weights /= anchors;
  Matrix self_mask = Matrix::Zero(n, n);
  self_mask.diagonal().setConstant(-1e30);
  Tensor unit = nn::L2NormalizeRows(embeddings);
  Tensor sim = nn::Scale(nn::MatMul(unit, nn::Transpose(unit)), 1.0 / temperature);
  Tensor log_p = nn::LogSoftmaxRows(nn::Add(sim, Tensor(self_mask)));
  return nn::Scale(nn::Sum(nn::Mul(log_p, Tensor(weights))), -1.0);
}

}  // namespace basetts::tokenizer
