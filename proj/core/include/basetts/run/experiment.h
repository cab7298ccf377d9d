#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "basetts/audio/audio.h"
#include "basetts/bpe/bpe.h"
#include "basetts/data/fixture.h"
#include "basetts/data/pipeline.h"
#include "basetts/decoder/speech_decoder.h"
#include "basetts/gpt/speech_gpt.h"
#include "basetts/gpt/text_tokenizer.h"
#include "basetts/tokenizer/ssl_tokenizer.h"
#include "basetts/tokenizer/vqvae.h"

namespace basetts::run {

// Independent per-stage seed derived from the root seed.
uint64_t StageSeed(uint64_t root, std::string_view stage);

struct ExperimentConfig {
  uint64_t seed = 0;
  std::string corpus;
  data::PrepConfig prep;
  double holdout_fraction = 0.1;

  std::string tokenizer = "ssl";  // "ssl" or "vqvae"
  tokenizer::SslTokenizerConfig ssl;
  tokenizer::VqVaeConfig vqvae;

  // Speech BPE target vocabulary; 0 keeps the raw codebook.
  int speech_bpe_vocab = 0;
  int text_vocab = 320;

  gpt::ModelConfig lm;
  gpt::TrainingConfig lm_training;
  int lm_steps = 2000;
  gpt::SamplingConfig sampling;

  decoder::DecoderConfig decoder;
  decoder::DecoderTrainConfig decoder_training;
  int decoder_steps = 2000;

  // Desk-scale defaults: a 1/8-width small preset and fixture-sized data.
  static ExperimentConfig Default();
  // Minutes-scale settings for smoke runs on the synthetic fixture.
  static ExperimentConfig Toy();

  // Stage seeds are always re-derived from `seed`.
  static ExperimentConfig FromJson(const nlohmann::json& j);
  nlohmann::json ToJson() const;
  void Validate() const;
};

// Layout: config.json, manifest.jsonl, checkpoints/, logs/, reports/.
class RunDirectory {
 public:
  // Creates the layout and writes the resolved config. An existing run with
  // a different config is a config error.
  static RunDirectory Create(const std::filesystem::path& root,
                             const ExperimentConfig& config);
  static RunDirectory Open(const std::filesystem::path& root);

  const std::filesystem::path& root() const { return root_; }
  const ExperimentConfig& config() const { return config_; }
  void UpdateConfig(const ExperimentConfig& config);

  std::filesystem::path config_path() const { return root_ / "config.json"; }
  std::filesystem::path manifest_path() const { return root_ / "manifest.jsonl"; }
  std::filesystem::path checkpoint(std::string_view name) const;
  std::filesystem::path log(std::string_view name) const;
  std::filesystem::path report(std::string_view name) const;

 private:
  RunDirectory(std::filesystem::path root, ExperimentConfig config);

  std::filesystem::path root_;
  ExperimentConfig config_;
};

// Exclusive writer lock on a run directory, released on destruction.
class RunLock {
 public:
  explicit RunLock(const RunDirectory& run);
  ~RunLock();
  RunLock(const RunLock&) = delete;
  RunLock& operator=(const RunLock&) = delete;

  static std::filesystem::path Path(const RunDirectory& run);

 private:
  std::filesystem::path path_;
};

// Stage checkpoints, in training order.
inline constexpr std::string_view kTokenizerCheckpoint = "tokenizer.ckpt";
inline constexpr std::string_view kSpeechBpeFile = "speech_bpe.txt";
inline constexpr std::string_view kTextBpeFile = "text_bpe.txt";
inline constexpr std::string_view kLmCheckpoint = "lm.ckpt";
inline constexpr std::string_view kDecoderCheckpoint = "decoder.ckpt";

data::PrepReport Prep(RunDirectory& run);

struct TokenizerReport {
  int steps = 0;
  double initial_l1 = 0.0;
  double final_l1 = 0.0;
  size_t utterances = 0;
};
TokenizerReport TrainTokenizer(RunDirectory& run);

struct LmReport {
  int steps = 0;
  size_t train_examples = 0;
  size_t holdout_examples = 0;
  size_t dropped_examples = 0;
  double final_train_loss = 0.0;
  std::optional<double> final_validation_loss;
  double bpe_compression = 0.0;
};
LmReport TrainLm(RunDirectory& run);

struct DecoderReport {
  int steps = 0;
  double initial_mel_l1 = 0.0;
  double final_mel_l1 = 0.0;
  size_t examples = 0;
};
DecoderReport TrainDecoder(RunDirectory& run);

// Every trained component of a run, loaded read-only.
class Models {
 public:
  static Models Load(const RunDirectory& run, bool need_decoder = true);

  const ExperimentConfig& config() const { return config_; }
  // Unit speaker embedding of a recording.
  std::vector<double> SpeakerEmbedding(const audio::Waveform& w) const;
  tokenizer::SpeechcodeSequence Tokenize(const audio::Waveform& w) const;
  double code_frame_rate() const;
  // Decoder frames per base speech code.
  int frames_per_code() const;
  const bpe::BpeVocab& speech_bpe() const { return speech_bpe_; }
  const gpt::TextTokenizer& text_tokenizer() const { return text_; }
  bool has_lm() const { return lm_ != nullptr; }
  bool has_decoder() const { return decoder_ != nullptr; }
  const gpt::SpeechGpt& lm() const { return *lm_; }
  const decoder::SpeechDecoder& decoder() const { return *decoder_; }
  // LM states for BPE tokens -> decoder input rows.
  nn::Matrix DecoderInput(const nn::Matrix& token_hidden,
                          std::span<const int64_t> tokens) const;

 private:
  ExperimentConfig config_;
  std::unique_ptr<tokenizer::SslFeatureProvider> provider_;
  std::unique_ptr<tokenizer::SslTokenizer> ssl_;
  std::unique_ptr<tokenizer::VqVae> vqvae_;
  bpe::BpeVocab speech_bpe_;
  gpt::TextTokenizer text_;
  std::unique_ptr<gpt::SpeechGpt> lm_;
  std::unique_ptr<decoder::SpeechDecoder> decoder_;
};

struct SynthesisRequest {
  std::string text;
  std::vector<double> speaker;  // embedding
  bool stream = false;
  int chunk_frames = 25;
  std::optional<uint64_t> seed;
};

struct SynthesisResult {
  audio::Waveform waveform;
  std::vector<int64_t> tokens;
  size_t base_codes = 0;
  size_t frames = 0;
  bool truncated = false;
  int chunks = 0;
  double first_chunk_seconds = 0.0;
  double total_seconds = 0.0;
};

SynthesisResult Synthesize(const Models& models, const SynthesisRequest& request);

// Speaker embedding of a WAV file, or of the first manifest segment of a
// speaker id.
std::vector<double> ResolveSpeaker(const RunDirectory& run, const Models& models,
                                   const std::string& speaker_wav,
                                   const std::string& speaker_id);

struct EvaluationSummary {
  size_t utterances = 0;
  double sim = 0.0;
  std::optional<double> wer;
  std::optional<double> validation_loss;
  nlohmann::json ToJson() const;
};

// Resynthesizes held-out segments and scores them. WER needs a recognizer.
EvaluationSummary Evaluate(RunDirectory& run, const data::AsrBackend* asr,
                           size_t max_utterances = 8);

// Held-out manifest entries in split order.
std::vector<data::DatasetEntry> HoldoutEntries(const RunDirectory& run);

}  // namespace basetts::run
