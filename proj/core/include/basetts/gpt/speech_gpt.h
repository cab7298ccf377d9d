#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "basetts/nn/module.h"
#include "basetts/nn/optim.h"
#include "basetts/nn/tensor.h"

namespace basetts::gpt {

struct ModelConfig {
  std::string preset = "toy";
  int layers = 2;
  int model_dim = 32;
  int heads = 2;
  int ff_dim = 64;
  int text_vocab = 256;
  int code_vocab = 256;  // speech tokens, excluding the special tokens
  int ref_dim = 16;
  int context = 2048;

  // Full-size shapes: "small", "medium", "large". Desk-scale shapes at 1/8
  // width: "small_eighth", "medium_eighth", "large_eighth". "toy" is a
  // 2-layer model for tests. Vocab sizes are left to the caller.
  static ModelConfig Preset(const std::string& name);
  // Exact count of the parameters SpeechGpt allocates for this config.
  int64_t ParameterCount() const;
  void Validate() const;

  static ModelConfig FromJson(const nlohmann::json& j);
  nlohmann::json ToJson() const;
};

struct TrainingConfig {
  double max_lr = 3.0e-4;
  int warmup_steps = 10000;
  double min_lr = 1.5e-4;
  int total_steps = 200000;
  double weight_decay = 0.03;
  double text_weight = 0.01;
  double speech_weight = 1.0;
  double grad_clip = 1.0;
  int batch_size = 4;
  uint64_t seed = 0;

  void Validate() const;
  static TrainingConfig FromJson(const nlohmann::json& j);
  nlohmann::json ToJson() const;
};

// Linear warmup from 0 to max_lr, then cosine down to min_lr at total_steps;
// clamped to min_lr afterwards.
double LearningRate(long step, const TrainingConfig& config);

// Layout: [ref] [text x T] [begin-speech] [codes x S] [end-of-speech]?
// Text and code positions are each counted from 0.
struct JointSequence {
  std::vector<double> ref;
  std::vector<int64_t> text;
  std::vector<int64_t> codes;
  // With an end-of-speech token, it is also a speech target.
  bool terminated = true;

  size_t text_start() const { return 1; }
  size_t boundary_index() const { return 1 + text.size(); }
  size_t code_start() const { return 2 + text.size(); }
  size_t length() const { return 2 + text.size() + codes.size() + (terminated ? 1 : 0); }
  size_t speech_targets() const { return codes.size() + (terminated ? 1 : 0); }
};

JointSequence BuildSequence(std::span<const double> ref,
                            std::span<const int64_t> text,
                            std::span<const int64_t> codes,
                            const ModelConfig& config, bool terminated = true);

struct GptOutput {
  // Row t predicts text[t] (row 0 comes from the reference slot).
  nn::Tensor text_logits;    // [T x text_vocab]
  // Row s predicts codes[s]; with terminated input, the last row predicts
  // end-of-speech. Columns cover code_vocab + 1 (the last is end-of-speech).
  nn::Tensor speech_logits;  // [speech_targets x (code_vocab + 1)]
  // Final-layer states at each code's own input position.
  nn::Tensor code_hidden;    // [S x model_dim]
};

struct LossParts {
  nn::Tensor text_ce;    // mean over the text span, 0 when empty
  nn::Tensor speech_ce;  // mean over the speech targets, 0 when empty
  size_t text_count = 0;
  size_t speech_count = 0;
};

double JointLoss(double speech_ce, double text_ce, const TrainingConfig& config = {});
nn::Tensor JointLoss(const LossParts& parts, const TrainingConfig& config = {});

struct SamplingConfig {
  double temperature = 0.9;
  int top_k = 50;
  int max_codes = 1000;
  // End-of-speech is masked until this many codes have been produced.
  int min_codes = 1;
  uint64_t seed = 0;

  static SamplingConfig FromJson(const nlohmann::json& j);
  nlohmann::json ToJson() const;
};

struct Generation {
  std::vector<int64_t> codes;
  nn::Matrix hidden;  // [codes x model_dim]
  bool truncated = false;
};

class SpeechGpt : public nn::Module {
 public:
  SpeechGpt(const ModelConfig& config, nn::Rng& rng);

  int end_token() const { return config_.code_vocab; }
  int begin_token() const { return config_.code_vocab + 1; }
  const ModelConfig& config() const { return config_; }

  GptOutput Forward(const JointSequence& seq) const;
  LossParts Loss(const JointSequence& seq) const;
  // log p(text) + log p(codes | text) for an unterminated sequence.
  double SequenceLogProb(std::span<const double> ref, std::span<const int64_t> text,
                         std::span<const int64_t> codes) const;
  // Log-probabilities over code_vocab + 1 for the next speech token.
  Eigen::VectorXd NextSpeechLogProbs(std::span<const double> ref,
                                     std::span<const int64_t> text,
                                     std::span<const int64_t> codes) const;
  Generation Generate(std::span<const double> ref, std::span<const int64_t> text,
                      const SamplingConfig& sampling) const;

 private:
  nn::Tensor Hidden(const JointSequence& seq) const;

  ModelConfig config_;
  nn::Linear ref_proj_;
  nn::Embedding text_embed_;
  nn::Embedding speech_embed_;
  nn::Embedding text_pos_;
  nn::Embedding code_pos_;
  std::vector<std::unique_ptr<nn::TransformerBlock>> blocks_;
  nn::LayerNorm final_norm_;
  nn::Linear text_head_;
  nn::Linear speech_head_;
};

struct GptExample {
  std::vector<double> ref;
  std::vector<int64_t> text;
  std::vector<int64_t> codes;
  // Unterminated examples with no codes train the text head only.
  bool terminated = true;
};

struct GptLogEntry {
  long step;
  double loss;
  double text_ce;
  double speech_ce;
  double lr;
};

class GptTrainer {
 public:
  GptTrainer(SpeechGpt& model, const TrainingConfig& config);
  // One optimizer step on the mean joint loss of `batch`.
  GptLogEntry Step(std::span<const GptExample> batch);
  long step() const { return step_; }

 private:
  SpeechGpt& model_;
  TrainingConfig config_;
  nn::AdamW optimizer_;
  long step_ = 0;
};

// Runs `steps` updates on batches drawn without replacement per epoch.
void TrainGpt(SpeechGpt& model, const std::vector<GptExample>& data,
              const TrainingConfig& config, int steps,
              const std::function<void(const GptLogEntry&)>& log = {});

void SaveGpt(const std::filesystem::path& path, const SpeechGpt& model,
             const TrainingConfig& training);
std::unique_ptr<SpeechGpt> LoadGpt(const std::filesystem::path& path,
                                   TrainingConfig* training = nullptr);

}  // namespace basetts::gpt
