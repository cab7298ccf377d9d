#include "basetts/tokenizer/vqvae.h"

#include <algorithm>
#include <map>

#include "basetts/error.h"
#include "basetts/nn/checkpoint.h"
#include "basetts/nn/ops.h"

namespace basetts::tokenizer {

using nn::Matrix;
using nn::Tensor;

VqVaeConfig VqVaeConfig::FromJson(const nlohmann::json& j) {
  VqVaeConfig c;
  c.codebook_size = j.value("codebook_size", c.codebook_size);
  c.code_dim = j.value("code_dim", c.code_dim);
  c.channels = j.value("channels", c.channels);
  c.encoder_blocks = j.value("encoder_blocks", c.encoder_blocks);
  c.decoder_blocks = j.value("decoder_blocks", c.decoder_blocks);
  c.kernel = j.value("kernel", c.kernel);
  c.ref_channels = j.value("ref_channels", c.ref_channels);
  c.ref_dim = j.value("ref_dim", c.ref_dim);
  c.vq_decay = j.value("vq_decay", c.vq_decay);
  c.dead_code_steps = j.value("dead_code_steps", c.dead_code_steps);
  c.alpha = j.value("alpha", c.alpha);
  if (j.contains("mel")) c.mel = audio::MelConfig::FromJson(j["mel"]);
  if (j.contains("train")) c.train = TokenizerTrainConfig::FromJson(j["train"]);
  if (c.codebook_size < 2 || c.code_dim < 1 || c.alpha < 0.0) {
    throw Error(ErrorKind::kConfig, "vqvae: invalid configuration");
  }
  return c;
}

nlohmann::json VqVaeConfig::ToJson() const {
  return {{"codebook_size", codebook_size},
          {"code_dim", code_dim},
          {"channels", channels},
          {"encoder_blocks", encoder_blocks},
          {"decoder_blocks", decoder_blocks},
          {"kernel", kernel},
          {"ref_channels", ref_channels},
          {"ref_dim", ref_dim},
          {"vq_decay", vq_decay},
          {"dead_code_steps", dead_code_steps},
          {"alpha", alpha},
          {"mel", mel.ToJson()},
          {"train", train.ToJson()}};
}

namespace {

VqConfig MakeVqConfig(const VqVaeConfig& c) {
  VqConfig v;
  v.codebook_size = c.codebook_size;
  v.dim = c.code_dim;
  v.decay = c.vq_decay;
  v.dead_code_steps = c.dead_code_steps;
  return v;
}

}  // namespace

VqVae::VqVae(const VqVaeConfig& config, nn::Rng& rng)
    : config_(config),
      enc_in_(config.mel.num_mels, config.channels, config.kernel, rng),
      enc_down_(config.channels, config.channels, 2, rng, 1, 2),
      enc_out_(config.channels, config.code_dim, rng),
      quantizer_(MakeVqConfig(config), rng),
      ref_conv_(config.mel.num_mels, config.ref_channels, config.kernel, rng),
      ref_out_(config.ref_channels, config.ref_dim, rng),
      dec_in_(config.code_dim + config.ref_dim, config.channels, config.kernel, rng),
      dec_out_(config.channels, config.mel.num_mels, rng) {
  RegisterModule("enc_in", &enc_in_);
  for (int i = 0; i < config.encoder_blocks; ++i) {
    enc_blocks_.push_back(std::make_unique<nn::ResidualConvBlock>(
        config.channels, config.kernel, 1 << i, rng));
    RegisterModule("enc_block" + std::to_string(i), enc_blocks_.back().get());
  }
  RegisterModule("enc_down", &enc_down_);
  RegisterModule("enc_out", &enc_out_);
  RegisterModule("ref_conv", &ref_conv_);
  RegisterModule("ref_out", &ref_out_);
  RegisterModule("dec_in", &dec_in_);
  for (int i = 0; i < config.decoder_blocks; ++i) {
    dec_blocks_.push_back(std::make_unique<nn::ResidualConvBlock>(
        config.channels, config.kernel, 1 << i, rng));
    RegisterModule("dec_block" + std::to_string(i), dec_blocks_.back().get());
  }
  RegisterModule("dec_out", &dec_out_);
}

Tensor VqVae::Encode(const Tensor& mel) const {
  if (mel.rows() == 0) throw Error(ErrorKind::kEmptyInput, "vqvae: empty mel");
  if (mel.cols() != config_.mel.num_mels) {
    throw Error(ErrorKind::kConfig, "vqvae: mel band count mismatch");
  }
  Tensor h = enc_in_.Forward(mel);
  for (const auto& b : enc_blocks_) h = b->Forward(h);
  h = nn::LeakyRelu(enc_down_.Forward(nn::LeakyRelu(h, 0.1)), 0.1);
  return enc_out_.Forward(h);
}

Tensor VqVae::Reference(const Tensor& mel) const {
  if (mel.rows() == 0) throw Error(ErrorKind::kEmptyInput, "vqvae: empty reference");
  Tensor h = nn::LeakyRelu(ref_conv_.Forward(mel), 0.1);
  return nn::L2NormalizeRows(ref_out_.Forward(nn::MeanRows(h)));
}

Tensor VqVae::Decode(const Tensor& quantized, const Tensor& ref) const {
  if (quantized.rows() == 0) {
    throw Error(ErrorKind::kEmptyInput, "vqvae: no codes to decode");
  }
  Tensor up = nn::RepeatRows(quantized, 2);
  Tensor h = dec_in_.Forward(nn::ConcatCols({up, nn::BroadcastRows(ref, up.rows())}));
  for (const auto& b : dec_blocks_) h = b->Forward(h);
  return dec_out_.Forward(nn::LeakyRelu(h, 0.1));
}

VqVaeEncoding EncodeVqVae(const VqVae& model, const audio::MelSpectrogram& mel,
                          const audio::MelSpectrogram& ref) {
  nn::NoGradGuard no_grad;
  if (mel.num_frames() == 0 || ref.num_frames() == 0) {
    throw Error(ErrorKind::kEmptyInput, "vqvae: empty mel");
  }
  VqVaeEncoding out;
  Tensor z = model.Encode(Tensor(mel.frames));
  out.codes.codes = NearestCodes(z.value(), model.quantizer().entries());
  out.codes.frame_rate = mel.frame_rate / 2.0;
  out.codes.codebook_size = model.config().codebook_size;
  out.reference = model.Reference(Tensor(ref.frames)).value();
  return out;
}

audio::MelSpectrogram DecodeVqVae(const VqVae& model, const SpeechcodeSequence& codes,
                                  const Matrix& reference) {
  if (codes.codebook_size != model.config().codebook_size) {
    throw Error(ErrorKind::kConfig, "vqvae decode: codebook size " +
                                        std::to_string(codes.codebook_size) +
                                        " does not match model");
  }
  if (codes.size() == 0) throw Error(ErrorKind::kEmptyInput, "vqvae: no codes");
  codes.Validate();
  nn::NoGradGuard no_grad;
  const Matrix& entries = model.quantizer().entries();
  Matrix q(static_cast<Eigen::Index>(codes.size()), entries.cols());
  for (size_t i = 0; i < codes.size(); ++i) {
    q.row(static_cast<Eigen::Index>(i)) = entries.row(codes.codes[i]);
  }
  audio::MelSpectrogram mel;
  mel.frames = model.Decode(Tensor(q), Tensor(reference)).value();
  mel.num_mels = model.config().mel.num_mels;
  mel.hop = model.config().mel.hop;
  mel.frame_rate = model.config().mel.frame_rate();
  return mel;
}

VqVaeTrainer::VqVaeTrainer(VqVae& model, uint64_t seed) : model_(model), rng_(seed) {
  optimizer_ = std::make_unique<nn::AdamW>(model.Parameters(), nn::AdamConfig{});
}

std::vector<TokenizerExample> VqVaeTrainer::SampleBatch(
    const std::vector<TokenizerExample>& data, std::vector<TokenizerExample>* refs) {
  if (data.empty()) throw Error(ErrorKind::kEmptyInput, "no training examples");
  std::map<int, std::vector<const TokenizerExample*>> by_speaker;
  for (const auto& ex : data) by_speaker[ex.speaker].push_back(&ex);
  const auto& train = model_.config().train;
  auto crop = [&](const TokenizerExample& ex) {
    const Eigen::Index t = ex.mel.rows();
    const Eigen::Index len = std::min<Eigen::Index>(train.crop_frames, t);
    Eigen::Index start = t > len ? static_cast<Eigen::Index>(rng_() % (t - len + 1)) : 0;
    start -= start % 2;
    TokenizerExample c;
    c.id = ex.id;
    c.speaker = ex.speaker;
    c.mel = ex.mel.middleRows(start, len);
    return c;
  };
  std::vector<TokenizerExample> batch;
  refs->clear();
  for (int i = 0; i < train.batch_size; ++i) {
    const TokenizerExample& ex = data[rng_() % data.size()];
    const auto& same = by_speaker[ex.speaker];
    batch.push_back(crop(ex));
    refs->push_back(crop(*same[rng_() % same.size()]));
  }
  return batch;
}

void VqVaeTrainer::UpdateCodebook(const std::vector<TokenizerExample>& batch) {
  nn::NoGradGuard no_grad;
  std::vector<Matrix> parts;
  Eigen::Index rows = 0;
  for (const auto& ex : batch) {
    parts.push_back(model_.Encode(Tensor(ex.mel)).value());
    rows += parts.back().rows();
  }
  Matrix all(rows, model_.config().code_dim);
  Eigen::Index r = 0;
  for (const auto& m : parts) {
    all.middleRows(r, m.rows()) = m;
    r += m.rows();
  }
  model_.quantizer().Update(all, NearestCodes(all, model_.quantizer().entries()), rng_);
}

TokenizerLoss VqVaeTrainer::Step(const std::vector<TokenizerExample>& batch,
                                 const std::vector<TokenizerExample>& refs) {
  const auto& cfg = model_.config();
  if (step_ == 0) UpdateCodebook(batch);
  const double inv = 1.0 / static_cast<double>(batch.size());
  Tensor recon = Tensor::Scalar(0.0);
  Tensor commitment = Tensor::Scalar(0.0);
  for (size_t i = 0; i < batch.size(); ++i) {
    Tensor mel(batch[i].mel);
    VqOutput vq = model_.quantizer().Quantize(model_.Encode(mel));
    Tensor out = model_.Decode(vq.quantized, model_.Reference(Tensor(refs[i].mel)));
    out = nn::SliceRows(out, 0, mel.rows());
    recon = nn::Add(recon, nn::Scale(nn::Mean(nn::Abs(nn::Sub(out, mel))), inv));
    commitment = nn::Add(commitment, nn::Scale(vq.commitment, inv));
  }
  TokenizerLossComponents components;
  components.recon = recon;
  components.commitment = commitment;
  TokenizerLossWeights weights{cfg.alpha, 0.0, 0.0};
  TokenizerLoss loss = CombineTokenizerLoss(components, weights);
  loss.total.Backward();
  nn::ClipGradNorm(model_.Parameters(), cfg.train.grad_clip);
  optimizer_->Step(cfg.train.learning_rate);
  UpdateCodebook(batch);
  ++step_;
  return loss;
}

double ReconstructionL1(const VqVae& model, const std::vector<TokenizerExample>& data) {
  nn::NoGradGuard no_grad;
  double total = 0.0;
  double count = 0.0;
  for (const auto& ex : data) {
    Tensor mel(ex.mel);
    VqOutput vq = model.quantizer().Quantize(model.Encode(mel));
    Matrix out = model.Decode(vq.quantized, model.Reference(mel)).value();
    total += (out.topRows(ex.mel.rows()) - ex.mel).cwiseAbs().sum();
    count += static_cast<double>(ex.mel.size());
  }
  return total / count;
}

void TrainVqVae(VqVae& model, const std::vector<TokenizerExample>& data, uint64_t seed,
                const std::function<void(const TrainLogEntry&)>& log) {
  VqVaeTrainer trainer(model, seed);
  std::vector<TokenizerExample> refs;
  for (int s = 0; s < model.config().train.steps; ++s) {
    auto batch = trainer.SampleBatch(data, &refs);
    TokenizerLoss loss = trainer.Step(batch, refs);
    if (log) log({s, loss});
  }
}

void SaveVqVae(const std::filesystem::path& path, const VqVae& model) {
  nn::Checkpoint ck("vqvae_tokenizer", model.config().ToJson());
  ck.AddModule("model", model);
  model.quantizer().Save(ck, "vq");
  ck.Save(path);
}

std::unique_ptr<VqVae> LoadVqVae(const std::filesystem::path& path) {
  nn::Checkpoint ck = nn::Checkpoint::Load(path);
  if (ck.kind() != "vqvae_tokenizer") {
    throw Error(ErrorKind::kDataIntegrity,
                path.string() + " is a '" + ck.kind() + "' checkpoint, not vqvae_tokenizer");
  }
  nn::Rng rng(0);
  auto model = std::make_unique<VqVae>(VqVaeConfig::FromJson(ck.config()), rng);
  ck.RestoreModule("model", *model);
  model->quantizer().Restore(ck, "vq");
  return model;
}

}  // namespace basetts::tokenizer
