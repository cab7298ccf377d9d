#include "basetts/tokenizer/loss.h"

#include <cmath>

#include "basetts/error.h"
#include "basetts/nn/ops.h"

namespace basetts::tokenizer {

using nn::Tensor;

void TokenizerLossWeights::Validate() const {
  if (!(alpha >= 0.0) || !(beta >= 0.0) || !(gamma >= 0.0)) {
    throw Error(ErrorKind::kConfig, "tokenizer loss weights must be >= 0");
  }
}

TokenizerLossWeights TokenizerLossWeights::FromJson(const nlohmann::json& j) {
  TokenizerLossWeights w;
  w.alpha = j.value("alpha", w.alpha);
  w.beta = j.value("beta", w.beta);
  w.gamma = j.value("gamma", w.gamma);
  w.Validate();
  return w;
}

nlohmann::json TokenizerLossWeights::ToJson() const {
  return {{"alpha", alpha}, {"beta", beta}, {"gamma", gamma}};
}

TokenizerLoss CombineTokenizerLoss(const TokenizerLossComponents& c,
                                   const TokenizerLossWeights& w) {
  w.Validate();
  TokenizerLoss out;
  Tensor total = Tensor::Scalar(0.0);
  auto add = [&](const Tensor& t, double weight, const char* name,
                 double* slot) {
    if (!t.defined()) return;
    const double v = t.item();
    if (!std::isfinite(v)) {
      throw Error(ErrorKind::kNumerical,
                  std::string("tokenizer loss component '") + name +
                      "' is not finite");
    }
    *slot = v;
    if (weight != 0.0) total = nn::Add(total, nn::Scale(t, weight));
  };
  add(c.recon, 1.0, "recon", &out.recon);
  add(c.commitment, w.alpha, "commitment", &out.commitment);
  add(c.contrastive, w.beta, "contrastive", &out.contrastive);
  add(c.cosine, w.gamma, "cosine", &out.cosine);
  out.total = total;
  return out;
}

Tensor CosineLeakageLoss(const Tensor& speaker_embedding,
                         const Tensor& content_embedding) {
  if (speaker_embedding.rows() != content_embedding.rows() ||
      speaker_embedding.cols() != content_embedding.cols()) {
    throw Error(ErrorKind::kConfig, "cosine loss: embedding shapes differ");
  }
  Tensor cos = nn::SumCols(nn::Mul(nn::L2NormalizeRows(nn::Detach(speaker_embedding)),
                                   nn::L2NormalizeRows(content_embedding)));
  return nn::AddScalar(nn::Scale(nn::Mean(cos), -1.0), 1.0);
}

}  // namespace basetts::tokenizer
