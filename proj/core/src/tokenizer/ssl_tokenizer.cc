#include "basetts/tokenizer/ssl_tokenizer.h"

#include <algorithm>
#include <map>

#include "basetts/error.h"
#include "basetts/nn/checkpoint.h"
#include "basetts/nn/ops.h"

namespace basetts::tokenizer {

using nn::Matrix;
using nn::Tensor;

TokenizerTrainConfig TokenizerTrainConfig::FromJson(const nlohmann::json& j) {
  TokenizerTrainConfig c;
  c.steps = j.value("steps", c.steps);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.crop_frames = j.value("crop_frames", c.crop_frames);
  c.learning_rate = j.value("learning_rate", c.learning_rate);
  c.grad_clip = j.value("grad_clip", c.grad_clip);
  c.epoch_steps = j.value("epoch_steps", c.epoch_steps);
  if (c.steps < 0 || c.batch_size < 2 || c.crop_frames < 2 ||
      c.learning_rate <= 0.0) {
    throw Error(ErrorKind::kConfig, "tokenizer training: invalid settings");
  }
  return c;
}

nlohmann::json TokenizerTrainConfig::ToJson() const {
  return {{"steps", steps},
          {"batch_size", batch_size},
          {"crop_frames", crop_frames},
          {"learning_rate", learning_rate},
          {"grad_clip", grad_clip},
          {"epoch_steps", epoch_steps}};
}

SslTokenizerConfig SslTokenizerConfig::FromJson(const nlohmann::json& j) {
  SslTokenizerConfig c;
  c.codebook_size = j.value("codebook_size", c.codebook_size);
  c.code_dim = j.value("code_dim", c.code_dim);
  c.regressor_dim = j.value("regressor_dim", c.regressor_dim);
  c.channels = j.value("channels", c.channels);
  c.encoder_blocks = j.value("encoder_blocks", c.encoder_blocks);
  c.decoder_blocks = j.value("decoder_blocks", c.decoder_blocks);
  c.kernel = j.value("kernel", c.kernel);
  c.content_norm = j.value("content_norm", c.content_norm);
  c.grl_lambda = j.value("grl_lambda", c.grl_lambda);
  c.temperature = j.value("temperature", c.temperature);
  c.vq_decay = j.value("vq_decay", c.vq_decay);
  c.dead_code_steps = j.value("dead_code_steps", c.dead_code_steps);
  if (j.contains("weights")) c.weights = TokenizerLossWeights::FromJson(j["weights"]);
  if (j.contains("extractor")) {
    c.extractor = SpeakerExtractorConfig::FromJson(j["extractor"]);
  }
  if (j.contains("provider")) c.provider = j["provider"];
  if (j.contains("mel")) c.mel = audio::MelConfig::FromJson(j["mel"]);
  if (j.contains("train")) c.train = TokenizerTrainConfig::FromJson(j["train"]);
  if (c.codebook_size < 2 || c.code_dim < 1 || c.grl_lambda <= 0.0) {
    throw Error(ErrorKind::kConfig, "ssl tokenizer: invalid configuration");
  }
  return c;
}

nlohmann::json SslTokenizerConfig::ToJson() const {
  return {{"codebook_size", codebook_size},
          {"code_dim", code_dim},
          {"regressor_dim", regressor_dim},
          {"channels", channels},
          {"encoder_blocks", encoder_blocks},
          {"decoder_blocks", decoder_blocks},
          {"kernel", kernel},
          {"content_norm", content_norm},
          {"grl_lambda", grl_lambda},
          {"temperature", temperature},
          {"vq_decay", vq_decay},
          {"dead_code_steps", dead_code_steps},
          {"weights", weights.ToJson()},
          {"extractor", extractor.ToJson()},
          {"provider", provider},
          {"mel", mel.ToJson()},
          {"train", train.ToJson()}};
}

namespace {

VqConfig MakeVqConfig(const SslTokenizerConfig& c) {
  VqConfig v;
  v.codebook_size = c.codebook_size;
  v.dim = c.code_dim;
  v.decay = c.vq_decay;
  v.dead_code_steps = c.dead_code_steps;
  return v;
}

// Normalizes every channel to zero mean and unit variance over time.
Tensor NormalizeOverTime(const Tensor& x) {
  const Eigen::Index t = x.rows();
  Tensor ones(Matrix::Ones(1, t));
  Tensor zeros(Matrix::Zero(1, t));
  return nn::Transpose(nn::LayerNormRows(nn::Transpose(x), ones, zeros));
}

}  // namespace

SslTokenizer::SslTokenizer(const SslTokenizerConfig& config, int feature_dim,
                           nn::Rng& rng)
    : config_(config),
      feature_dim_(feature_dim),
      content_regressor_(feature_dim, config.regressor_dim, rng),
      speaker_regressor_(feature_dim, config.regressor_dim, rng),
      enc_in_(config.regressor_dim, config.channels, config.kernel, rng),
      enc_out_(config.channels, config.code_dim, rng),
      quantizer_(MakeVqConfig(config), rng),
      extractor_(config.regressor_dim, config.extractor, rng),
      dec_in_(config.code_dim + config.extractor.embedding_dim, config.channels,
              config.kernel, rng),
      dec_out_(config.channels, config.mel.num_mels, rng) {
  RegisterModule("content_regressor", &content_regressor_);
  RegisterModule("speaker_regressor", &speaker_regressor_);
  RegisterModule("enc_in", &enc_in_);
  for (int i = 0; i < config.encoder_blocks; ++i) {
    enc_blocks_.push_back(std::make_unique<nn::ResidualConvBlock>(
        config.channels, config.kernel, 1 << i, rng));
    RegisterModule("enc_block" + std::to_string(i), enc_blocks_.back().get());
  }
  RegisterModule("enc_out", &enc_out_);
  RegisterModule("extractor", &extractor_);
  RegisterModule("dec_in", &dec_in_);
  for (int i = 0; i < config.decoder_blocks; ++i) {
    dec_blocks_.push_back(std::make_unique<nn::ResidualConvBlock>(
        config.channels, config.kernel, 1 << i, rng));
    RegisterModule("dec_block" + std::to_string(i), dec_blocks_.back().get());
  }
  RegisterModule("dec_out", &dec_out_);
}

Tensor SslTokenizer::ContentRegress(const Tensor& features) const {
  return content_regressor_.Forward(features);
}

Tensor SslTokenizer::EncodeContent(const Tensor& content) const {
  Tensor h = config_.content_norm ? NormalizeOverTime(content) : content;
  h = enc_in_.Forward(h);
  for (const auto& b : enc_blocks_) h = b->Forward(h);
  return enc_out_.Forward(nn::LeakyRelu(h, 0.1));
}

Tensor SslTokenizer::SpeakerRegress(const Tensor& features) const {
  return speaker_regressor_.Forward(features);
}

Tensor SslTokenizer::SpeakerEmbedding(const Tensor& features) const {
  return extractor_.Forward(SpeakerRegress(features));
}

Tensor SslTokenizer::Decode(const Tensor& quantized, const Tensor& embedding) const {
  Tensor h = nn::ConcatCols(
      {quantized, nn::BroadcastRows(embedding, quantized.rows())});
  h = dec_in_.Forward(h);
  for (const auto& b : dec_blocks_) h = b->Forward(h);
  return dec_out_.Forward(nn::LeakyRelu(h, 0.1));
}

SslTokenizer::Output SslTokenizer::Run(const Tensor& features) const {
  if (features.rows() == 0) {
    throw Error(ErrorKind::kEmptyInput, "ssl tokenizer: no feature frames");
  }
  if (features.cols() != feature_dim_) {
    throw Error(ErrorKind::kConfig, "ssl tokenizer: feature dim mismatch");
  }
  Output out;
  out.content = ContentRegress(features);
  out.encoded = EncodeContent(out.content);
  out.vq = quantizer_.Quantize(out.encoded);
  out.speaker_regressed = SpeakerRegress(features);
  out.speaker_embedding = extractor_.Forward(out.speaker_regressed);
  out.mel = Decode(out.vq.quantized, out.speaker_embedding);
  return out;
}

SslEncoding EncodeSsl(const SslTokenizer& model, const audio::Waveform& w,
                      const SslFeatureProvider& provider) {
  if (w.size() < static_cast<size_t>(kSslHop)) {
    throw Error(ErrorKind::kEmptyInput,
                "ssl encoding needs at least one 20 ms frame of audio");
  }
  nn::NoGradGuard no_grad;
  Tensor features(provider.Features(w));
  Tensor encoded = model.EncodeContent(model.ContentRegress(features));
  SslEncoding out;
  out.codes.codes = NearestCodes(encoded.value(), model.quantizer().entries());
  out.codes.frame_rate = kSslFrameRate;
  out.codes.codebook_size = model.config().codebook_size;
  out.content = encoded.value();
  return out;
}

Matrix ExtractSpeaker(const SslTokenizer& model, const Matrix& features) {
  nn::NoGradGuard no_grad;
  return model.SpeakerEmbedding(Tensor(features)).value();
}

std::vector<TokenizerExample> MakeExamples(
    const std::vector<std::pair<audio::Waveform, int>>& utterances,
    const SslFeatureProvider* provider, const audio::MelConfig& mel) {
  std::vector<TokenizerExample> out;
  for (size_t i = 0; i < utterances.size(); ++i) {
    TokenizerExample ex;
    ex.id = std::to_string(i);
    ex.speaker = utterances[i].second;
    ex.mel = audio::ComputeMel(utterances[i].first, mel).frames;
    if (provider != nullptr) {
      ex.features = provider->Features(utterances[i].first);
      if (ex.features.rows() != ex.mel.rows()) {
        throw Error(ErrorKind::kData, "feature and mel frame counts differ");
      }
    }
    out.push_back(std::move(ex));
  }
  return out;
}

SslTokenizerTrainer::SslTokenizerTrainer(SslTokenizer& model, uint64_t seed)
    : model_(model), rng_(seed) {
  nn::Rng init(seed ^ 0x5eed);
  frozen_ = std::make_unique<SpeakerExtractor>(
      model.config().regressor_dim, model.config().extractor, init);
  frozen_->SetRequiresGrad(false);
  RefreshFrozenExtractor();
  std::vector<nn::NamedTensor> params;
  for (auto& p : model.Parameters()) params.push_back(p);
  optimizer_ = std::make_unique<nn::AdamW>(params, nn::AdamConfig{});
}

void SslTokenizerTrainer::RefreshFrozenExtractor() {
  frozen_->CopyParametersFrom(model_.extractor());
}

std::vector<TokenizerExample> SslTokenizerTrainer::SampleBatch(
    const std::vector<TokenizerExample>& data) {
  if (data.empty()) throw Error(ErrorKind::kEmptyInput, "no training examples");
  std::map<int, std::vector<const TokenizerExample*>> by_speaker;
  for (const auto& ex : data) by_speaker[ex.speaker].push_back(&ex);
  std::vector<int> speakers;
  for (const auto& [s, list] : by_speaker) speakers.push_back(s);
  std::shuffle(speakers.begin(), speakers.end(), rng_);
  const int crop = model_.config().train.crop_frames;
  std::vector<TokenizerExample> batch;
  const int size = model_.config().train.batch_size;
  for (int i = 0; i < size; ++i) {
    const auto& list = by_speaker[speakers[(i / 2) % speakers.size()]];
    const TokenizerExample& ex = *list[rng_() % list.size()];
    const Eigen::Index t = ex.mel.rows();
    const Eigen::Index len = std::min<Eigen::Index>(crop, t);
    const Eigen::Index start = t > len ? static_cast<Eigen::Index>(rng_() % (t - len + 1)) : 0;
    TokenizerExample c;
    c.id = ex.id;
    c.speaker = ex.speaker;
    c.mel = ex.mel.middleRows(start, len);
    if (ex.features.size() > 0) c.features = ex.features.middleRows(start, len);
    batch.push_back(std::move(c));
  }
  return batch;
}

TokenizerLossComponents SslTokenizerTrainer::Components(
    const std::vector<TokenizerExample>& batch) {
  const auto& cfg = model_.config();
  const double inv = 1.0 / static_cast<double>(batch.size());
  Tensor recon = Tensor::Scalar(0.0);
  Tensor commitment = Tensor::Scalar(0.0);
  Tensor cosine = Tensor::Scalar(0.0);
  std::vector<Tensor> embeddings;
  std::vector<int> speakers;
  for (const auto& ex : batch) {
    SslTokenizer::Output out = model_.Run(Tensor(ex.features));
    recon = nn::Add(recon, nn::Scale(nn::Mean(nn::Abs(nn::Sub(out.mel, Tensor(ex.mel)))), inv));
    commitment = nn::Add(commitment, nn::Scale(out.vq.commitment, inv));
    Tensor leaked = frozen_->Forward(nn::GradientReversal(out.content, cfg.grl_lambda));
    cosine = nn::Add(cosine, nn::Scale(CosineLeakageLoss(out.speaker_embedding, leaked), inv));
    embeddings.push_back(out.speaker_embedding);
    speakers.push_back(ex.speaker);
  }
  TokenizerLossComponents c;
  c.recon = recon;
  c.commitment = commitment;
  c.cosine = cosine;
  c.contrastive = ContrastiveSpeakerLoss(nn::ConcatRows(embeddings), speakers,
                                         cfg.temperature);
  return c;
}

void SslTokenizerTrainer::UpdateCodebook(
    const std::vector<TokenizerExample>& batch) {
  nn::NoGradGuard no_grad;
  std::vector<Matrix> parts;
  Eigen::Index rows = 0;
  for (const auto& ex : batch) {
    parts.push_back(
        model_.EncodeContent(model_.ContentRegress(Tensor(ex.features))).value());
    rows += parts.back().rows();
  }
  Matrix all(rows, model_.config().code_dim);
  Eigen::Index r = 0;
  for (const auto& m : parts) {
    all.middleRows(r, m.rows()) = m;
    r += m.rows();
  }
  model_.quantizer().Update(all, NearestCodes(all, model_.quantizer().entries()),
                            rng_);
}

TokenizerLoss SslTokenizerTrainer::Step(const std::vector<TokenizerExample>& batch) {
  const auto& cfg = model_.config();
  if (step_ == 0) UpdateCodebook(batch);
  TokenizerLossComponents components = Components(batch);
  TokenizerLoss loss = CombineTokenizerLoss(components, cfg.weights);
  loss.total.Backward();
  nn::ClipGradNorm(model_.Parameters(), cfg.train.grad_clip);
  optimizer_->Step(cfg.train.learning_rate);
  frozen_->ZeroGrad();

  UpdateCodebook(batch);
  ++step_;
  return loss;
}

double ReconstructionL1(const SslTokenizer& model,
                        const std::vector<TokenizerExample>& data) {
  nn::NoGradGuard no_grad;
  double total = 0.0;
  double frames = 0.0;
  for (const auto& ex : data) {
    SslTokenizer::Output out = model.Run(Tensor(ex.features));
    total += (out.mel.value() - ex.mel).cwiseAbs().sum();
    frames += static_cast<double>(ex.mel.size());
  }
  return total / frames;
}

void TrainSslTokenizer(SslTokenizer& model,
                       const std::vector<TokenizerExample>& data, uint64_t seed,
                       const std::function<void(const TrainLogEntry&)>& log) {
  const auto& train = model.config().train;
  SslTokenizerTrainer trainer(model, seed);
  const int epoch = train.epoch_steps > 0
                        ? train.epoch_steps
                        : std::max<int>(1, (static_cast<int>(data.size()) +
                                            train.batch_size - 1) /
                                               train.batch_size);
  for (int s = 0; s < train.steps; ++s) {
    if (s > 0 && s % epoch == 0) trainer.RefreshFrozenExtractor();
    TokenizerLoss loss = trainer.Step(trainer.SampleBatch(data));
    if (log) log({s, loss});
  }
}

void SaveSslTokenizer(const std::filesystem::path& path, const SslTokenizer& model) {
  nn::Checkpoint ck("ssl_tokenizer", model.config().ToJson());
  ck.mutable_config()["feature_dim"] = model.feature_dim();
  ck.AddModule("model", model);
  model.quantizer().Save(ck, "vq");
  ck.Save(path);
}

std::unique_ptr<SslTokenizer> LoadSslTokenizer(const std::filesystem::path& path) {
  nn::Checkpoint ck = nn::Checkpoint::Load(path);
  if (ck.kind() != "ssl_tokenizer") {
    throw Error(ErrorKind::kDataIntegrity,
                path.string() + " is a '" + ck.kind() + "' checkpoint, not ssl_tokenizer");
  }
  const auto config = SslTokenizerConfig::FromJson(ck.config());
  nn::Rng rng(0);
  auto model = std::make_unique<SslTokenizer>(
      config, ck.config().at("feature_dim").get<int>(), rng);
  ck.RestoreModule("model", *model);
  model->quantizer().Restore(ck, "vq");
  return model;
}

}  // namespace basetts::tokenizer
