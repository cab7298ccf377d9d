#include "basetts/gpt/speech_gpt.h"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "basetts/error.h"
#include "basetts/nn/checkpoint.h"
#include "basetts/nn/ops.h"

namespace basetts::gpt {

using nn::Matrix;
using nn::Tensor;

ModelConfig ModelConfig::Preset(const std::string& name) {
  ModelConfig c;
  c.preset = name;
  auto shape = [&](int layers, int dim, int heads, int ff) {
    c.layers = layers;
    c.model_dim = dim;
    c.heads = heads;
    c.ff_dim = ff;
  };
  if (name == "toy") {
    shape(2, 32, 2, 64);
  } else if (name == "small") {
    shape(16, 768, 12, 3072);
  } else if (name == "medium") {
    shape(30, 1024, 16, 4096);
  } else if (name == "large") {
    shape(32, 1536, 24, 6144);
  } else if (name == "small_eighth") {
    shape(16, 96, 12, 384);
  } else if (name == "medium_eighth") {
    shape(30, 128, 16, 512);
  } else if (name == "large_eighth") {
    shape(32, 192, 24, 768);
  } else {
    throw Error(ErrorKind::kConfig, "unknown model preset '" + name + "'");
  }
  return c;
}

int64_t ModelConfig::ParameterCount() const {
  const int64_t d = model_dim, f = ff_dim;
  const int64_t block = 4 * d            // two layer norms
                        + 3 * d * d + 3 * d + d * d + d  // attention
                        + d * f + f + f * d + d;         // feed-forward
  return ref_dim * d + d                 // reference projection
         + static_cast<int64_t>(text_vocab) * d
         + static_cast<int64_t>(code_vocab + 2) * d
         + 2 * static_cast<int64_t>(context) * d
         + layers * block + 2 * d
         + d * text_vocab + text_vocab
         + d * (code_vocab + 1) + code_vocab + 1;
}

void ModelConfig::Validate() const {
  if (layers < 1 || model_dim < 1 || heads < 1 || ff_dim < 1 ||
      model_dim % heads != 0) {
    throw Error(ErrorKind::kConfig, "gpt: invalid transformer shape");
  }
  if (text_vocab < 1 || code_vocab < 1 || ref_dim < 1 || context < 4) {
    throw Error(ErrorKind::kConfig, "gpt: invalid vocab, reference or context size");
  }
}

ModelConfig ModelConfig::FromJson(const nlohmann::json& j) {
  ModelConfig c = Preset(j.value("preset", std::string("toy")));
  c.layers = j.value("layers", c.layers);
  c.model_dim = j.value("model_dim", c.model_dim);
  c.heads = j.value("heads", c.heads);
  c.ff_dim = j.value("ff_dim", c.ff_dim);
  c.text_vocab = j.value("text_vocab", c.text_vocab);
  c.code_vocab = j.value("code_vocab", c.code_vocab);
  c.ref_dim = j.value("ref_dim", c.ref_dim);
  c.context = j.value("context", c.context);
  c.Validate();
  return c;
}

nlohmann::json ModelConfig::ToJson() const {
  return {{"preset", preset},         {"layers", layers},
          {"model_dim", model_dim},   {"heads", heads},
          {"ff_dim", ff_dim},         {"text_vocab", text_vocab},
          {"code_vocab", code_vocab}, {"ref_dim", ref_dim},
          {"context", context}};
}

void TrainingConfig::Validate() const {
  if (max_lr <= 0.0 || min_lr <= 0.0 || min_lr > max_lr || warmup_steps < 0 ||
      total_steps <= warmup_steps || weight_decay < 0.0 || text_weight < 0.0 ||
      speech_weight <= 0.0 || batch_size < 1) {
    throw Error(ErrorKind::kConfig, "gpt training: invalid settings");
  }
}

TrainingConfig TrainingConfig::FromJson(const nlohmann::json& j) {
  TrainingConfig c;
  c.max_lr = j.value("max_lr", c.max_lr);
  c.warmup_steps = j.value("warmup_steps", c.warmup_steps);
  c.min_lr = j.value("min_lr", c.min_lr);
  c.total_steps = j.value("total_steps", c.total_steps);
  c.weight_decay = j.value("weight_decay", c.weight_decay);
  c.text_weight = j.value("text_weight", c.text_weight);
  c.speech_weight = j.value("speech_weight", c.speech_weight);
  c.grad_clip = j.value("grad_clip", c.grad_clip);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.seed = j.value("seed", c.seed);
  c.Validate();
  return c;
}

nlohmann::json TrainingConfig::ToJson() const {
  return {{"max_lr", max_lr},
          {"warmup_steps", warmup_steps},
          {"min_lr", min_lr},
          {"total_steps", total_steps},
          {"weight_decay", weight_decay},
          {"text_weight", text_weight},
          {"speech_weight", speech_weight},
          {"grad_clip", grad_clip},
          {"batch_size", batch_size},
          {"seed", seed}};
}

double LearningRate(long step, const TrainingConfig& c) {
  if (step < 0) throw Error(ErrorKind::kConfig, "learning rate: negative step");
  if (step <= c.warmup_steps) {
    if (c.warmup_steps == 0) return c.max_lr;
    return c.max_lr * (static_cast<double>(step) / c.warmup_steps);
  }
  if (step >= c.total_steps) return c.min_lr;
  const double progress = static_cast<double>(step - c.warmup_steps) /
                          (c.total_steps - c.warmup_steps);
  return c.min_lr + (c.max_lr - c.min_lr) * 0.5 * (1.0 + std::cos(M_PI * progress));
}

JointSequence BuildSequence(std::span<const double> ref,
                            std::span<const int64_t> text,
                            std::span<const int64_t> codes,
                            const ModelConfig& config, bool terminated) {
  if (static_cast<int>(ref.size()) != config.ref_dim) {
    throw Error(ErrorKind::kData, "gpt: reference embedding has " +
                                      std::to_string(ref.size()) + " dims, expected " +
                                      std::to_string(config.ref_dim));
  }
  for (int64_t t : text) {
    if (t < 0 || t >= config.text_vocab) {
      throw Error(ErrorKind::kData, "gpt: text id " + std::to_string(t) +
                                        " outside vocab");
    }
  }
  for (int64_t c : codes) {
    if (c < 0 || c >= config.code_vocab) {
      throw Error(ErrorKind::kData, "gpt: speech token " + std::to_string(c) +
                                        " outside vocab");
    }
  }
  JointSequence seq{{ref.begin(), ref.end()},
                    {text.begin(), text.end()},
                    {codes.begin(), codes.end()},
                    terminated};
  if (seq.length() > static_cast<size_t>(config.context)) {
    throw Error(ErrorKind::kContextOverflow,
                "gpt: sequence of " + std::to_string(seq.length()) +
                    " positions exceeds context " + std::to_string(config.context));
  }
  return seq;
}

double JointLoss(double speech_ce, double text_ce, const TrainingConfig& c) {
  return c.speech_weight * speech_ce + c.text_weight * text_ce;
}

Tensor JointLoss(const LossParts& parts, const TrainingConfig& c) {
  return nn::Add(nn::Scale(parts.speech_ce, c.speech_weight),
                 nn::Scale(parts.text_ce, c.text_weight));
}

SamplingConfig SamplingConfig::FromJson(const nlohmann::json& j) {
  SamplingConfig s;
  s.temperature = j.value("temperature", s.temperature);
  s.top_k = j.value("top_k", s.top_k);
  s.max_codes = j.value("max_codes", s.max_codes);
  s.min_codes = j.value("min_codes", s.min_codes);
  s.seed = j.value("seed", s.seed);
  if (s.temperature < 0.0 || s.max_codes < 1 || s.min_codes < 0 ||
      s.min_codes > s.max_codes) {
    throw Error(ErrorKind::kConfig, "sampling: invalid settings");
  }
  return s;
}

nlohmann::json SamplingConfig::ToJson() const {
  return {{"temperature", temperature},
          {"top_k", top_k},
          {"max_codes", max_codes},
          {"min_codes", min_codes},
          {"seed", seed}};
}

namespace {

std::vector<int64_t> Range(size_t n) {
  std::vector<int64_t> r(n);
  std::iota(r.begin(), r.end(), 0);
  return r;
}

}  // namespace

SpeechGpt::SpeechGpt(const ModelConfig& config, nn::Rng& rng)
    : config_((config.Validate(), config)),
      ref_proj_(config.ref_dim, config.model_dim, rng),
      text_embed_(config.text_vocab, config.model_dim, rng),
      speech_embed_(config.code_vocab + 2, config.model_dim, rng),
      text_pos_(config.context, config.model_dim, rng),
      code_pos_(config.context, config.model_dim, rng),
      final_norm_(config.model_dim),
      text_head_(config.model_dim, config.text_vocab, rng),
      speech_head_(config.model_dim, config.code_vocab + 1, rng) {
  RegisterModule("ref_proj", &ref_proj_);
  RegisterModule("text_embed", &text_embed_);
  RegisterModule("speech_embed", &speech_embed_);
  RegisterModule("text_pos", &text_pos_);
  RegisterModule("code_pos", &code_pos_);
  for (int i = 0; i < config.layers; ++i) {
    blocks_.push_back(std::make_unique<nn::TransformerBlock>(
        config.model_dim, config.heads, config.ff_dim, rng));
    RegisterModule("block" + std::to_string(i), blocks_.back().get());
  }
  RegisterModule("final_norm", &final_norm_);
  RegisterModule("text_head", &text_head_);
  RegisterModule("speech_head", &speech_head_);
  // Small head weights start the model near the uniform distribution.
  for (auto& [name, p] : Parameters()) {
    if (name.ends_with("head.weight")) {
      p.mutable_value() = nn::RandomNormal(p.rows(), p.cols(), 0.02, rng);
    } else if (name.ends_with("head.bias")) {
      p.mutable_value().setZero();
    }
  }
}

Tensor SpeechGpt::Hidden(const JointSequence& seq) const {
  const Matrix ref = Eigen::Map<const Matrix>(seq.ref.data(), 1, config_.ref_dim);
  std::vector<Tensor> parts;
  parts.push_back(ref_proj_.Forward(Tensor(ref)));
  if (!seq.text.empty()) {
    parts.push_back(nn::Add(text_embed_.Forward(seq.text),
                            text_pos_.Forward(Range(seq.text.size()))));
  }
  const int64_t begin = begin_token();
  parts.push_back(speech_embed_.Forward(std::span<const int64_t>(&begin, 1)));
  if (!seq.codes.empty()) {
    parts.push_back(nn::Add(speech_embed_.Forward(seq.codes),
                            code_pos_.Forward(Range(seq.codes.size()))));
  }
  if (seq.terminated) {
    const int64_t end = end_token();
    parts.push_back(speech_embed_.Forward(std::span<const int64_t>(&end, 1)));
  }
  Tensor h = nn::ConcatRows(parts);
  for (const auto& block : blocks_) h = block->Forward(h, /*causal=*/true);
  h = final_norm_.Forward(h);
  if (!h.value().allFinite()) {
    throw Error(ErrorKind::kNumerical, "gpt: non-finite hidden states");
  }
  return h;
}

GptOutput SpeechGpt::Forward(const JointSequence& seq) const {
  const Tensor h = Hidden(seq);
  GptOutput out;
  const auto t = static_cast<Eigen::Index>(seq.text.size());
  const auto s = static_cast<Eigen::Index>(seq.codes.size());
  if (t > 0) out.text_logits = text_head_.Forward(nn::SliceRows(h, 0, t));
  const auto targets = static_cast<Eigen::Index>(seq.speech_targets());
  if (targets > 0) {
    out.speech_logits = speech_head_.Forward(
        nn::SliceRows(h, static_cast<Eigen::Index>(seq.boundary_index()), targets));
  }
  if (s > 0) {
    out.code_hidden = nn::SliceRows(h, static_cast<Eigen::Index>(seq.code_start()), s);
  }
  return out;
}

LossParts SpeechGpt::Loss(const JointSequence& seq) const {
  const GptOutput out = Forward(seq);
  LossParts parts;
  parts.text_count = seq.text.size();
  parts.speech_count = seq.speech_targets();
  parts.text_ce = parts.text_count > 0 ? nn::CrossEntropy(out.text_logits, seq.text)
                                       : Tensor::Scalar(0.0);
  if (parts.speech_count > 0) {
    std::vector<int64_t> targets = seq.codes;
    if (seq.terminated) targets.push_back(end_token());
    parts.speech_ce = nn::CrossEntropy(out.speech_logits, targets);
  } else {
    parts.speech_ce = Tensor::Scalar(0.0);
  }
  return parts;
}

namespace {

double TargetLogProbSum(const Matrix& logits, std::span<const int64_t> targets) {
  double total = 0.0;
  for (Eigen::Index r = 0; r < logits.rows(); ++r) {
    const double m = logits.row(r).maxCoeff();
    const double lse = m + std::log((logits.row(r).array() - m).exp().sum());
    total += logits(r, targets[r]) - lse;
  }
  return total;
}

}  // namespace

double SpeechGpt::SequenceLogProb(std::span<const double> ref,
                                  std::span<const int64_t> text,
                                  std::span<const int64_t> codes) const {
  nn::NoGradGuard guard;
  const JointSequence seq = BuildSequence(ref, text, codes, config_, false);
  const GptOutput out = Forward(seq);
  double total = 0.0;
  if (!text.empty()) total += TargetLogProbSum(out.text_logits.value(), text);
  if (!codes.empty()) total += TargetLogProbSum(out.speech_logits.value(), codes);
  return total;
}

Eigen::VectorXd SpeechGpt::NextSpeechLogProbs(std::span<const double> ref,
                                              std::span<const int64_t> text,
                                              std::span<const int64_t> codes) const {
  nn::NoGradGuard guard;
  const JointSequence seq = BuildSequence(ref, text, codes, config_, false);
  const Tensor h = Hidden(seq);
  const Matrix logits =
      speech_head_.Forward(nn::SliceRows(h, h.rows() - 1, 1)).value();
  const double m = logits.maxCoeff();
  const double lse = m + std::log((logits.array() - m).exp().sum());
  return (logits.row(0).array() - lse).transpose();
}

Generation SpeechGpt::Generate(std::span<const double> ref,
                               std::span<const int64_t> text,
                               const SamplingConfig& sampling) const {
  nn::NoGradGuard guard;
  nn::Rng rng(sampling.seed);
  Generation gen;
  gen.truncated = true;
  const size_t fixed = 2 + text.size();
  while (static_cast<int>(gen.codes.size()) < sampling.max_codes &&
         fixed + gen.codes.size() + 1 <= static_cast<size_t>(config_.context)) {
    Eigen::VectorXd logp = NextSpeechLogProbs(ref, text, gen.codes);
    if (static_cast<int>(gen.codes.size()) < sampling.min_codes) {
      logp(end_token()) = -std::numeric_limits<double>::infinity();
    }
    Eigen::Index next;
    if (sampling.temperature <= 1e-6) {
      logp.maxCoeff(&next);
    } else {
      Eigen::VectorXd scaled = logp / sampling.temperature;
      if (sampling.top_k > 0 && sampling.top_k < scaled.size()) {
        std::vector<double> sorted(scaled.data(), scaled.data() + scaled.size());
        std::nth_element(sorted.begin(), sorted.begin() + (sampling.top_k - 1),
                         sorted.end(), std::greater<>());
        const double kth = sorted[sampling.top_k - 1];
        for (Eigen::Index i = 0; i < scaled.size(); ++i) {
          if (scaled(i) < kth) scaled(i) = -std::numeric_limits<double>::infinity();
        }
      }
      const Eigen::VectorXd w = (scaled.array() - scaled.maxCoeff()).exp();
      std::discrete_distribution<Eigen::Index> pick(w.data(), w.data() + w.size());
      next = pick(rng);
    }
    if (next == end_token()) {
      gen.truncated = false;
      break;
    }
    gen.codes.push_back(next);
  }
  if (gen.codes.empty()) {
    gen.hidden = Matrix(0, config_.model_dim);
  } else {
    const JointSequence seq = BuildSequence(ref, text, gen.codes, config_, false);
    gen.hidden = Forward(seq).code_hidden.value();
  }
  return gen;
}

GptTrainer::GptTrainer(SpeechGpt& model, const TrainingConfig& config)
    : model_(model),
      config_((config.Validate(), config)),
      optimizer_(model.Parameters(), nn::AdamConfig{.weight_decay = config.weight_decay}) {}

GptLogEntry GptTrainer::Step(std::span<const GptExample> batch) {
  if (batch.empty()) throw Error(ErrorKind::kEmptyInput, "gpt: empty batch");
  optimizer_.ZeroGrad();
  std::vector<Tensor> losses;
  double text_ce = 0.0, speech_ce = 0.0;
  for (const auto& ex : batch) {
    const JointSequence seq =
        BuildSequence(ex.ref, ex.text, ex.codes, model_.config(), ex.terminated);
    const LossParts parts = model_.Loss(seq);
    text_ce += parts.text_ce.item();
    speech_ce += parts.speech_ce.item();
    losses.push_back(JointLoss(parts, config_));
  }
  const double n = static_cast<double>(batch.size());
  Tensor total = losses.front();
  for (size_t i = 1; i < losses.size(); ++i) total = nn::Add(total, losses[i]);
  total = nn::Scale(total, 1.0 / n);
  if (!std::isfinite(total.item())) {
    throw Error(ErrorKind::kNumerical, "gpt: non-finite joint loss");
  }
  total.Backward();
  const auto params = model_.Parameters();
  if (config_.grad_clip > 0.0) nn::ClipGradNorm(params, config_.grad_clip);
  ++step_;
  const double lr = LearningRate(step_, config_);
  optimizer_.Step(lr);
  return {step_, total.item(), text_ce / n, speech_ce / n, lr};
}

void TrainGpt(SpeechGpt& model, const std::vector<GptExample>& data,
              const TrainingConfig& config, int steps,
              const std::function<void(const GptLogEntry&)>& log) {
  if (data.empty()) throw Error(ErrorKind::kEmptyInput, "gpt: no training data");
  GptTrainer trainer(model, config);
  nn::Rng rng(config.seed);
  std::vector<size_t> order(data.size());
  std::iota(order.begin(), order.end(), 0);
  size_t cursor = order.size();
  std::vector<GptExample> batch;
  for (int s = 0; s < steps; ++s) {
    batch.clear();
    while (static_cast<int>(batch.size()) <
           std::min<int>(config.batch_size, static_cast<int>(data.size()))) {
      if (cursor == order.size()) {
        std::shuffle(order.begin(), order.end(), rng);
        cursor = 0;
      }
      batch.push_back(data[order[cursor++]]);
    }
    const GptLogEntry entry = trainer.Step(batch);
    if (log) log(entry);
  }
}

void SaveGpt(const std::filesystem::path& path, const SpeechGpt& model,
             const TrainingConfig& training) {
  nn::Checkpoint ck("speech_gpt", {{"model", model.config().ToJson()},
                                   {"training", training.ToJson()}});
  ck.AddModule("model", model);
  ck.Save(path);
}

std::unique_ptr<SpeechGpt> LoadGpt(const std::filesystem::path& path,
                                   TrainingConfig* training) {
  const nn::Checkpoint ck = nn::Checkpoint::Load(path);
  if (ck.kind() != "speech_gpt") {
    throw Error(ErrorKind::kDataIntegrity,
                path.string() + " is a '" + ck.kind() + "' checkpoint, not speech_gpt");
  }
  nn::Rng rng(0);
  auto model =
      std::make_unique<SpeechGpt>(ModelConfig::FromJson(ck.config().at("model")), rng);
  ck.RestoreModule("model", *model);
  if (training) *training = TrainingConfig::FromJson(ck.config().at("training"));
  return model;
}

}  // namespace basetts::gpt
