#include "basetts/run/experiment.h"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <numeric>
#include <random>

#include "basetts/error.h"
#include "basetts/eval/eval.h"
#include "basetts/nn/tensor.h"

namespace basetts::run {
namespace {

namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

nlohmann::json ReadJson(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::kDependency, "missing " + path.string());
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::kDataIntegrity, path.string() + ": " + e.what());
  }
}

void WriteJson(const fs::path& path, const nlohmann::json& j) {
  std::ofstream out(path);
  out << j.dump(2) << "\n";
  if (!out) throw Error(ErrorKind::kIo, "cannot write " + path.string());
}

void Require(const fs::path& path, std::string_view stage) {
  if (!fs::exists(path)) {
    throw Error(ErrorKind::kDependency, "stage '" + std::string(stage) +
                                            "' has not run: missing " + path.string());
  }
}

class JsonlLog {
 public:
  explicit JsonlLog(const fs::path& path) : out_(path) {
    if (!out_) throw Error(ErrorKind::kIo, "cannot write " + path.string());
  }
  void Write(const nlohmann::json& j) { out_ << j.dump() << "\n"; }

 private:
  std::ofstream out_;
};

struct Split {
  std::vector<size_t> train;
  std::vector<size_t> holdout;
};

Split MakeSplit(size_t n, double fraction, uint64_t seed) {
  std::vector<size_t> order(n);
  std::iota(order.begin(), order.end(), size_t{0});
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  size_t holdout = static_cast<size_t>(std::floor(fraction * static_cast<double>(n)));
  if (fraction > 0.0 && n >= 2) holdout = std::max<size_t>(holdout, 1);
  Split s;
  s.holdout.assign(order.begin(), order.begin() + static_cast<long>(holdout));
  s.train.assign(order.begin() + static_cast<long>(holdout), order.end());
  std::sort(s.holdout.begin(), s.holdout.end());
  std::sort(s.train.begin(), s.train.end());
  return s;
}

data::Dataset LoadManifest(const RunDirectory& run) {
  Require(run.manifest_path(), "prep");
  data::Dataset ds = data::ReadManifest(run.manifest_path());
  if (ds.size() == 0) throw Error(ErrorKind::kEmptyInput, "manifest has no segments");
  return ds;
}

std::vector<double> Row(const nn::Matrix& m) {
  return std::vector<double>(m.data(), m.data() + m.size());
}

struct Segment {
  audio::Waveform audio;
  int speaker = 0;
  std::string text;
};

std::vector<Segment> LoadSegments(const RunDirectory& run, const data::Dataset& ds,
                                  const std::vector<size_t>& indices) {
  std::map<std::string, int> speakers;
  for (const auto& e : ds.entries) speakers.emplace(e.segment.speaker_id, 0);
  int next = 0;
  for (auto& [id, index] : speakers) index = next++;
  std::vector<Segment> out;
  for (size_t i : indices) {
    const auto& e = ds.entries[i];
    out.push_back({data::LoadSegmentAudio(run.config().corpus, e),
                   speakers.at(e.segment.speaker_id), e.segment.text()});
  }
  return out;
}

gpt::GptExample MakeGptExample(const Models& models, const Segment& seg) {
  gpt::GptExample ex;
  ex.ref = models.SpeakerEmbedding(seg.audio);
  ex.text = models.text_tokenizer().Encode(seg.text);
  ex.codes = bpe::Encode(models.Tokenize(seg.audio), models.speech_bpe());
  return ex;
}

double MeanValidationLoss(const gpt::SpeechGpt& lm, const std::vector<gpt::GptExample>& data,
                          const gpt::TrainingConfig& cfg, double* text_ce, double* speech_ce) {
  nn::NoGradGuard guard;
  double loss = 0.0;
  double t = 0.0;
  double s = 0.0;
  for (const auto& ex : data) {
    const gpt::JointSequence seq =
        gpt::BuildSequence(ex.ref, ex.text, ex.codes, lm.config(), ex.terminated);
    const gpt::LossParts parts = lm.Loss(seq);
    loss += gpt::JointLoss(parts, cfg).item();
    t += parts.text_ce.item();
    s += parts.speech_ce.item();
  }
  const double n = static_cast<double>(data.size());
  *text_ce = t / n;
  *speech_ce = s / n;
  return loss / n;
}

}  // namespace

uint64_t StageSeed(uint64_t root, std::string_view stage) {
  uint64_t h = 0xcbf29ce484222325ULL;
  for (char c : stage) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ULL;
  }
  uint64_t z = root ^ h;
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

ExperimentConfig ExperimentConfig::Default() {
  ExperimentConfig c;
  c.lm = gpt::ModelConfig::Preset("small_eighth");
  c.lm_training.warmup_steps = 200;
  c.lm_training.total_steps = c.lm_steps;
  c.lm_training.max_lr = 1e-3;
  c.lm_training.min_lr = 5e-4;
  c.speech_bpe_vocab = 512;
  return FromJson(c.ToJson());
}

ExperimentConfig ExperimentConfig::Toy() {
  ExperimentConfig c;
  c.holdout_fraction = 0.2;
  c.ssl.train.steps = 600;
  c.ssl.train.batch_size = 6;
  c.ssl.train.crop_frames = 50;
  c.ssl.channels = 32;
  c.ssl.encoder_blocks = 1;
  c.ssl.decoder_blocks = 1;
  c.ssl.codebook_size = 64;
  c.vqvae.train = c.ssl.train;
  c.vqvae.channels = 32;
  c.vqvae.codebook_size = 64;
  c.speech_bpe_vocab = 96;
  c.text_vocab = 300;
  c.lm = gpt::ModelConfig::Preset("toy");
  c.lm_steps = 1000;
  c.lm_training.warmup_steps = 50;
  c.lm_training.total_steps = c.lm_steps;
  c.lm_training.max_lr = 3e-3;
  c.lm_training.min_lr = 1.5e-3;
  c.lm_training.batch_size = 4;
  c.sampling.max_codes = 100;
  c.sampling.min_codes = 10;
  c.decoder.channels = 24;
  c.decoder.stage_channels = {16, 12, 8};
  c.decoder_steps = 300;
  c.decoder_training.crop_frames = 6;
  c.decoder_training.batch_size = 2;
  c.decoder_training.learning_rate = 1e-3;
  c.decoder_training.adversarial_start = 150;
  return FromJson(c.ToJson());
}

ExperimentConfig ExperimentConfig::FromJson(const nlohmann::json& j) {
  ExperimentConfig c;
  c.seed = j.value("seed", c.seed);
  c.corpus = j.value("corpus", c.corpus);
  c.prep = data::PrepConfig::FromJson(j.value("prep", nlohmann::json::object()));
  c.holdout_fraction = j.value("holdout_fraction", c.holdout_fraction);
  const auto tok = j.value("tokenizer", nlohmann::json::object());
  c.tokenizer = tok.value("variant", c.tokenizer);
  c.ssl = tokenizer::SslTokenizerConfig::FromJson(tok.value("ssl", c.ssl.ToJson()));
  c.vqvae = tokenizer::VqVaeConfig::FromJson(tok.value("vqvae", c.vqvae.ToJson()));
  c.speech_bpe_vocab = j.value("speech_bpe_vocab", c.speech_bpe_vocab);
  c.text_vocab = j.value("text_vocab", c.text_vocab);
  const auto lm = j.value("lm", nlohmann::json::object());
  c.lm = gpt::ModelConfig::FromJson(lm.value("model", c.lm.ToJson()));
  c.lm_training = gpt::TrainingConfig::FromJson(lm.value("training", c.lm_training.ToJson()));
  c.lm_steps = lm.value("steps", c.lm_steps);
  c.sampling = gpt::SamplingConfig::FromJson(lm.value("sampling", c.sampling.ToJson()));
  const auto dec = j.value("decoder", nlohmann::json::object());
  c.decoder = decoder::DecoderConfig::FromJson(dec.value("model", c.decoder.ToJson()));
  c.decoder_training =
      decoder::DecoderTrainConfig::FromJson(dec.value("training", c.decoder_training.ToJson()));
  c.decoder_steps = dec.value("steps", c.decoder_steps);
  c.prep.seed = StageSeed(c.seed, "prep");
  c.lm_training.seed = StageSeed(c.seed, "lm");
  c.sampling.seed = StageSeed(c.seed, "sampling");
  c.Validate();
  return c;
}

nlohmann::json ExperimentConfig::ToJson() const {
  return {{"seed", seed},
          {"corpus", corpus},
          {"prep", prep.ToJson()},
          {"holdout_fraction", holdout_fraction},
          {"tokenizer", {{"variant", tokenizer}, {"ssl", ssl.ToJson()}, {"vqvae", vqvae.ToJson()}}},
          {"speech_bpe_vocab", speech_bpe_vocab},
          {"text_vocab", text_vocab},
          {"lm",
           {{"model", lm.ToJson()},
            {"training", lm_training.ToJson()},
            {"steps", lm_steps},
            {"sampling", sampling.ToJson()}}},
          {"decoder",
           {{"model", decoder.ToJson()},
            {"training", decoder_training.ToJson()},
            {"steps", decoder_steps}}}};
}

void ExperimentConfig::Validate() const {
  if (tokenizer != "ssl" && tokenizer != "vqvae") {
    throw Error(ErrorKind::kConfig, "tokenizer variant must be 'ssl' or 'vqvae'");
  }
  if (!(holdout_fraction >= 0.0 && holdout_fraction < 1.0)) {
    throw Error(ErrorKind::kConfig, "holdout_fraction must be in [0, 1)");
  }
  const int base = tokenizer == "ssl" ? ssl.codebook_size : vqvae.codebook_size;
  if (speech_bpe_vocab != 0 && speech_bpe_vocab < base) {
    throw Error(ErrorKind::kConfig, "speech_bpe_vocab must be 0 or at least the codebook size");
  }
  if (text_vocab < gpt::TextTokenizer::kByteVocab) {
    throw Error(ErrorKind::kConfig, "text_vocab must be at least 256");
  }
  if (lm_steps < 0 || decoder_steps < 0) {
    throw Error(ErrorKind::kConfig, "step counts must be non-negative");
  }
  prep.Validate();
  lm.Validate();
  lm_training.Validate();
  decoder.Validate();
}

RunDirectory::RunDirectory(fs::path root, ExperimentConfig config)
    : root_(std::move(root)), config_(std::move(config)) {}

RunDirectory RunDirectory::Create(const fs::path& root, const ExperimentConfig& config) {
  config.Validate();
  if (fs::exists(root / "config.json")) {
    const ExperimentConfig existing = ExperimentConfig::FromJson(ReadJson(root / "config.json"));
    if (existing.ToJson() != config.ToJson()) {
      throw Error(ErrorKind::kConfig,
                  root.string() + " already holds a run with a different config");
    }
    return Open(root);
  }
  for (const char* sub : {"checkpoints", "logs", "reports"}) fs::create_directories(root / sub);
  RunDirectory run(root, config);
  WriteJson(run.config_path(), config.ToJson());
  return run;
}

RunDirectory RunDirectory::Open(const fs::path& root) {
  if (!fs::exists(root / "config.json")) {
    throw Error(ErrorKind::kDependency, "no run directory at " + root.string());
  }
  for (const char* sub : {"checkpoints", "logs", "reports"}) fs::create_directories(root / sub);
  return RunDirectory(root, ExperimentConfig::FromJson(ReadJson(root / "config.json")));
}

void RunDirectory::UpdateConfig(const ExperimentConfig& config) {
  config.Validate();
  config_ = config;
  WriteJson(config_path(), config.ToJson());
}

fs::path RunDirectory::checkpoint(std::string_view name) const {
  return root_ / "checkpoints" / name;
}
fs::path RunDirectory::log(std::string_view name) const { return root_ / "logs" / name; }
fs::path RunDirectory::report(std::string_view name) const { return root_ / "reports" / name; }

RunLock::RunLock(const RunDirectory& run) : path_(Path(run)) {
  std::FILE* f = std::fopen(path_.c_str(), "wx");
  if (f == nullptr) {
    throw Error(ErrorKind::kConfig, "run directory is locked by another stage (" +
                                        path_.string() + "); remove it if stale");
  }
  std::fclose(f);
}

RunLock::~RunLock() {
  std::error_code ec;
  fs::remove(path_, ec);
}

fs::path RunLock::Path(const RunDirectory& run) { return run.root() / ".lock"; }

data::PrepReport Prep(RunDirectory& run) {
  RunLock lock(run);
  const auto& c = run.config();
  if (c.corpus.empty()) throw Error(ErrorKind::kConfig, "config has no corpus directory");
  data::PrepResult result = data::PrepareCorpus(c.corpus, c.prep);
  data::WriteManifest(run.manifest_path(), result.dataset);
  WriteJson(run.report("prep.json"), result.report.ToJson());
  return result.report;
}

TokenizerReport TrainTokenizer(RunDirectory& run) {
  RunLock lock(run);
  const ExperimentConfig& c = run.config();
  const data::Dataset ds = LoadManifest(run);
  const Split split = MakeSplit(ds.size(), c.holdout_fraction, StageSeed(c.seed, "split"));
  std::vector<std::pair<audio::Waveform, int>> utts;
  for (auto& s : LoadSegments(run, ds, split.train)) utts.emplace_back(std::move(s.audio), s.speaker);
  const uint64_t seed = StageSeed(c.seed, "tokenizer");
  nn::Rng rng(seed);
  TokenizerReport report;
  report.utterances = utts.size();
  JsonlLog log(run.log("tokenizer.jsonl"));
  auto write = [&](const tokenizer::TrainLogEntry& e) {
    log.Write({{"step", e.step},
               {"loss", e.loss.total.item()},
               {"recon", e.loss.recon},
               {"commitment", e.loss.commitment},
               {"contrastive", e.loss.contrastive},
               {"cosine", e.loss.cosine}});
    report.steps = e.step + 1;
  };
  if (c.tokenizer == "ssl") {
    auto provider = tokenizer::MakeFeatureProvider(c.ssl.provider);
    const auto data = tokenizer::MakeExamples(utts, provider.get(), c.ssl.mel);
    tokenizer::SslTokenizer model(c.ssl, provider->dim(), rng);
    report.initial_l1 = tokenizer::ReconstructionL1(model, data);
    tokenizer::TrainSslTokenizer(model, data, seed, write);
    report.final_l1 = tokenizer::ReconstructionL1(model, data);
    tokenizer::SaveSslTokenizer(run.checkpoint(kTokenizerCheckpoint), model);
  } else {
    const auto data = tokenizer::MakeExamples(utts, nullptr, c.vqvae.mel);
    tokenizer::VqVae model(c.vqvae, rng);
    report.initial_l1 = tokenizer::ReconstructionL1(model, data);
    tokenizer::TrainVqVae(model, data, seed, write);
    report.final_l1 = tokenizer::ReconstructionL1(model, data);
    tokenizer::SaveVqVae(run.checkpoint(kTokenizerCheckpoint), model);
  }
  WriteJson(run.report("tokenizer.json"), {{"variant", c.tokenizer},
                                            {"steps", report.steps},
                                            {"utterances", report.utterances},
                                            {"initial_l1", report.initial_l1},
                                            {"final_l1", report.final_l1}});
  return report;
}

LmReport TrainLm(RunDirectory& run) {
  Require(run.checkpoint(kTokenizerCheckpoint), "train-tokenizer");
  RunLock lock(run);
  ExperimentConfig c = run.config();
  const data::Dataset ds = LoadManifest(run);
  const Split split = MakeSplit(ds.size(), c.holdout_fraction, StageSeed(c.seed, "split"));
  const auto train_segs = LoadSegments(run, ds, split.train);
  const auto hold_segs = LoadSegments(run, ds, split.holdout);

  Models partial = Models::Load(run, false);
  std::vector<tokenizer::SpeechcodeSequence> codes;
  std::vector<std::string> texts;
  for (const auto& s : train_segs) {
    codes.push_back(partial.Tokenize(s.audio));
    texts.push_back(s.text);
  }
  const int base = codes.front().codebook_size;
  const bpe::BpeVocab speech_bpe = c.speech_bpe_vocab > base
                                       ? bpe::TrainBpe(codes, c.speech_bpe_vocab)
                                       : bpe::BpeVocab{base, {}};
  bpe::WriteVocab(run.checkpoint(kSpeechBpeFile), speech_bpe);
  const gpt::TextTokenizer text = gpt::TextTokenizer::Train(texts, c.text_vocab);
  text.Save(run.checkpoint(kTextBpeFile));

  c.lm.code_vocab = speech_bpe.vocab_size();
  c.lm.text_vocab = text.vocab_size();
  c.lm.ref_dim = static_cast<int>(partial.SpeakerEmbedding(train_segs.front().audio).size());
  c.lm_training.total_steps = std::max(c.lm_training.total_steps, c.lm_training.warmup_steps + 1);
  run.UpdateConfig(c);
  Models models = Models::Load(run, false);

  LmReport report;
  report.bpe_compression = bpe::Compression(codes, speech_bpe).mean_ratio;
  auto fits = [&](const gpt::GptExample& ex) {
    return 3 + ex.text.size() + ex.codes.size() <= static_cast<size_t>(c.lm.context);
  };
  std::vector<gpt::GptExample> train;
  std::vector<gpt::GptExample> holdout;
  for (const auto& s : train_segs) {
    auto ex = MakeGptExample(models, s);
    if (fits(ex)) {
      train.push_back(std::move(ex));
    } else {
      ++report.dropped_examples;
    }
  }
  for (const auto& s : hold_segs) {
    auto ex = MakeGptExample(models, s);
    if (fits(ex)) {
      holdout.push_back(std::move(ex));
    } else {
      ++report.dropped_examples;
    }
  }
  if (train.empty()) throw Error(ErrorKind::kEmptyInput, "no LM training examples fit");
  report.train_examples = train.size();
  report.holdout_examples = holdout.size();

  nn::Rng init(c.lm_training.seed);
  gpt::SpeechGpt lm(c.lm, init);
  gpt::GptTrainer trainer(lm, c.lm_training);
  JsonlLog log(run.log("lm.jsonl"));
  std::mt19937_64 rng(c.lm_training.seed ^ 0xba7c4);
  std::vector<size_t> order(train.size());
  std::iota(order.begin(), order.end(), size_t{0});
  const int batch = std::min<int>(c.lm_training.batch_size, static_cast<int>(train.size()));
  const int epoch_steps = static_cast<int>((train.size() + batch - 1) / batch);
  size_t cursor = order.size();
  auto validate = [&](int epoch, int step) {
    if (holdout.empty()) return;
    double t = 0.0;
    double s = 0.0;
    const double v = MeanValidationLoss(lm, holdout, c.lm_training, &t, &s);
    log.Write({{"type", "validation"},
               {"epoch", epoch},
               {"step", step},
               {"loss", v},
               {"text_ce", t},
               {"speech_ce", s}});
    report.final_validation_loss = v;
  };
  std::vector<gpt::GptExample> items;
  for (int step = 0; step < c.lm_steps; ++step) {
    items.clear();
    while (static_cast<int>(items.size()) < batch) {
      if (cursor == order.size()) {
        std::shuffle(order.begin(), order.end(), rng);
        cursor = 0;
      }
      items.push_back(train[order[cursor++]]);
    }
    const gpt::GptLogEntry e = trainer.Step(items);
    log.Write({{"type", "train"},
               {"step", e.step},
               {"loss", e.loss},
               {"text_ce", e.text_ce},
               {"speech_ce", e.speech_ce},
               {"lr", e.lr}});
    report.final_train_loss = e.loss;
    report.steps = step + 1;
    if ((step + 1) % epoch_steps == 0) validate((step + 1) / epoch_steps, step + 1);
  }
  if (c.lm_steps % epoch_steps != 0 || c.lm_steps == 0) {
    validate(c.lm_steps / epoch_steps + 1, c.lm_steps);
  }
  gpt::SaveGpt(run.checkpoint(kLmCheckpoint), lm, c.lm_training);
  nlohmann::json j = {{"steps", report.steps},
                      {"train_examples", report.train_examples},
                      {"holdout_examples", report.holdout_examples},
                      {"dropped_examples", report.dropped_examples},
                      {"final_train_loss", report.final_train_loss},
                      {"bpe_compression", report.bpe_compression},
                      {"speech_vocab", c.lm.code_vocab},
                      {"text_vocab", c.lm.text_vocab},
                      {"parameters", c.lm.ParameterCount()}};
  j["final_validation_loss"] = report.final_validation_loss
                                   ? nlohmann::json(*report.final_validation_loss)
                                   : nlohmann::json(nullptr);
  WriteJson(run.report("lm.json"), j);
  return report;
}

DecoderReport TrainDecoder(RunDirectory& run) {
  Require(run.checkpoint(kLmCheckpoint), "train-lm");
  RunLock lock(run);
  ExperimentConfig c = run.config();
  const Models models = Models::Load(run, false);
  c.decoder.input_dim = c.lm.model_dim + 2;
  c.decoder.speaker_dim = c.lm.ref_dim;
  run.UpdateConfig(c);

  const data::Dataset ds = LoadManifest(run);
  const Split split = MakeSplit(ds.size(), c.holdout_fraction, StageSeed(c.seed, "split"));
  std::vector<decoder::DecoderExample> data;
  {
    nn::NoGradGuard guard;
    for (const auto& s : LoadSegments(run, ds, split.train)) {
      const gpt::GptExample ex = MakeGptExample(models, s);
      if (3 + ex.text.size() + ex.codes.size() > static_cast<size_t>(c.lm.context)) continue;
      const gpt::JointSequence seq =
          gpt::BuildSequence(ex.ref, ex.text, ex.codes, models.lm().config(), false);
      const nn::Matrix hidden = models.lm().Forward(seq).code_hidden.value();
      decoder::DecoderExample d;
      d.hidden = models.DecoderInput(hidden, ex.codes);
      d.speaker = nn::Matrix(1, static_cast<Eigen::Index>(ex.ref.size()));
      for (size_t k = 0; k < ex.ref.size(); ++k) d.speaker(0, static_cast<Eigen::Index>(k)) = ex.ref[k];
      d.samples = audio::ToDouble(s.audio);
      d.samples.resize(static_cast<size_t>(d.hidden.rows()) * decoder::kSamplesPerFrame, 0.0);
      data.push_back(std::move(d));
    }
  }
  if (data.empty()) throw Error(ErrorKind::kEmptyInput, "no decoder training examples");
  const uint64_t seed = StageSeed(c.seed, "decoder");
  nn::Rng rng(seed);
  decoder::SpeechDecoder model(c.decoder, rng);
  decoder::Discriminators disc(rng);
  decoder::DecoderTrainer trainer(model, disc, c.decoder_training, seed);
  DecoderReport report;
  report.examples = data.size();
  report.initial_mel_l1 = decoder::MelReconstructionL1(model, data);
  JsonlLog log(run.log("decoder.jsonl"));
  for (int step = 0; step < c.decoder_steps; ++step) {
    const decoder::DecoderStepResult r = trainer.Step(data);
    log.Write({{"step", step},
               {"generator_loss", r.generator_loss},
               {"discriminator_loss", r.discriminator_loss},
               {"mel_l1", r.mel_l1},
               {"feature", r.feature},
               {"adversarial", r.adversarial},
               {"collapse_warning", r.collapse_warning}});
    report.steps = step + 1;
  }
  report.final_mel_l1 = decoder::MelReconstructionL1(model, data);
  decoder::SaveDecoder(run.checkpoint(kDecoderCheckpoint), model);
  WriteJson(run.report("decoder.json"), {{"steps", report.steps},
                                          {"examples", report.examples},
                                          {"initial_mel_l1", report.initial_mel_l1},
                                          {"final_mel_l1", report.final_mel_l1}});
  return report;
}

Models Models::Load(const RunDirectory& run, bool need_decoder) {
  Models m;
  m.config_ = run.config();
  Require(run.checkpoint(kTokenizerCheckpoint), "train-tokenizer");
  if (m.config_.tokenizer == "ssl") {
    m.ssl_ = tokenizer::LoadSslTokenizer(run.checkpoint(kTokenizerCheckpoint));
    m.provider_ = tokenizer::MakeFeatureProvider(m.ssl_->config().provider);
  } else {
    m.vqvae_ = tokenizer::LoadVqVae(run.checkpoint(kTokenizerCheckpoint));
  }
  if (fs::exists(run.checkpoint(kSpeechBpeFile))) {
    m.speech_bpe_ = bpe::ReadVocab(run.checkpoint(kSpeechBpeFile));
    m.text_ = gpt::TextTokenizer::Load(run.checkpoint(kTextBpeFile));
  }
  if (fs::exists(run.checkpoint(kLmCheckpoint))) {
    m.lm_ = gpt::LoadGpt(run.checkpoint(kLmCheckpoint));
  }
  if (need_decoder) {
    Require(run.checkpoint(kLmCheckpoint), "train-lm");
    Require(run.checkpoint(kDecoderCheckpoint), "train-decoder");
    m.decoder_ = decoder::LoadDecoder(run.checkpoint(kDecoderCheckpoint));
  }
  return m;
}

std::vector<double> Models::SpeakerEmbedding(const audio::Waveform& w) const {
  nn::NoGradGuard guard;
  if (ssl_) return Row(tokenizer::ExtractSpeaker(*ssl_, provider_->Features(w)));
  const auto mel = audio::ComputeMel(w, vqvae_->config().mel);
  return Row(vqvae_->Reference(nn::Tensor(mel.frames)).value());
}

tokenizer::SpeechcodeSequence Models::Tokenize(const audio::Waveform& w) const {
  if (ssl_) return tokenizer::EncodeSsl(*ssl_, w, *provider_).codes;
  const auto mel = audio::ComputeMel(w, vqvae_->config().mel);
  return tokenizer::EncodeVqVae(*vqvae_, mel, mel).codes;
}

double Models::code_frame_rate() const {
  return ssl_ ? tokenizer::kSslFrameRate : tokenizer::kVqVaeFrameRate;
}

int Models::frames_per_code() const {
  return static_cast<int>(std::lround(audio::kSampleRate / decoder::kSamplesPerFrame /
                                      code_frame_rate()));
}

nn::Matrix Models::DecoderInput(const nn::Matrix& token_hidden,
                                std::span<const int64_t> tokens) const {
  const nn::Matrix base = decoder::ExpandHidden(token_hidden, tokens, speech_bpe_);
  const int r = frames_per_code();
  if (r == 1) return base;
  nn::Matrix out(base.rows() * r, base.cols());
  for (Eigen::Index i = 0; i < base.rows(); ++i) {
    for (int k = 0; k < r; ++k) out.row(i * r + k) = base.row(i);
  }
  return out;
}

SynthesisResult Synthesize(const Models& models, const SynthesisRequest& request) {
  if (!models.has_lm() || !models.has_decoder()) {
    throw Error(ErrorKind::kDependency, "synthesis needs a trained LM and decoder");
  }
  const auto start = Clock::now();
  gpt::SamplingConfig sampling = models.config().sampling;
  if (request.seed) sampling.seed = *request.seed;
  const std::vector<int64_t> text = models.text_tokenizer().Encode(request.text);
  const gpt::Generation gen = models.lm().Generate(request.speaker, text, sampling);
  if (gen.codes.empty()) {
    throw Error(ErrorKind::kEmptyInput, "generation produced no speech tokens");
  }
  decoder::DecoderInput input;
  input.hidden = models.DecoderInput(gen.hidden, gen.codes);
  input.speaker = nn::Matrix(1, static_cast<Eigen::Index>(request.speaker.size()));
  for (size_t k = 0; k < request.speaker.size(); ++k) {
    input.speaker(0, static_cast<Eigen::Index>(k)) = request.speaker[k];
  }
  SynthesisResult r;
  r.tokens = gen.codes;
  r.truncated = gen.truncated;
  r.frames = static_cast<size_t>(input.hidden.rows());
  r.base_codes = bpe::DecodeTokens(gen.codes, models.speech_bpe()).size();
  if (request.stream) {
    std::vector<double> samples;
    decoder::DecodeStream(models.decoder(), input, request.chunk_frames,
                          [&](const decoder::StreamChunk& chunk) {
                            if (chunk.chunk_index == 0) {
                              r.first_chunk_seconds =
                                  std::chrono::duration<double>(Clock::now() - start).count();
                            }
                            ++r.chunks;
                            samples.insert(samples.end(), chunk.samples.begin(),
                                           chunk.samples.end());
                          });
    r.waveform = audio::FromDouble(samples);
  } else {
    r.waveform = decoder::DecodeFull(models.decoder(), input);
    r.chunks = 1;
    r.first_chunk_seconds = std::chrono::duration<double>(Clock::now() - start).count();
  }
  r.total_seconds = std::chrono::duration<double>(Clock::now() - start).count();
  return r;
}

std::vector<double> ResolveSpeaker(const RunDirectory& run, const Models& models,
                                   const std::string& speaker_wav,
                                   const std::string& speaker_id) {
  if (!speaker_wav.empty()) return models.SpeakerEmbedding(audio::LoadAudio(speaker_wav));
  const data::Dataset ds = LoadManifest(run);
  for (const auto& e : ds.entries) {
    if (speaker_id.empty() || e.segment.speaker_id == speaker_id) {
      return models.SpeakerEmbedding(data::LoadSegmentAudio(run.config().corpus, e));
    }
  }
  throw Error(ErrorKind::kData, "no manifest segment for speaker '" + speaker_id + "'");
}

nlohmann::json EvaluationSummary::ToJson() const {
  nlohmann::json j = {{"utterances", utterances}, {"sim", sim}};
  j["wer"] = wer ? nlohmann::json(*wer) : nlohmann::json(nullptr);
  j["validation_loss"] = validation_loss ? nlohmann::json(*validation_loss) : nlohmann::json(nullptr);
  return j;
}

std::vector<data::DatasetEntry> HoldoutEntries(const RunDirectory& run) {
  const data::Dataset ds = LoadManifest(run);
  const Split split =
      MakeSplit(ds.size(), run.config().holdout_fraction, StageSeed(run.config().seed, "split"));
  std::vector<data::DatasetEntry> out;
  for (size_t i : split.holdout) out.push_back(ds.entries[i]);
  return out;
}

EvaluationSummary Evaluate(RunDirectory& run, const data::AsrBackend* asr,
                           size_t max_utterances) {
  const Models models = Models::Load(run, true);
  RunLock lock(run);
  auto entries = HoldoutEntries(run);
  if (entries.empty()) throw Error(ErrorKind::kEmptyInput, "no held-out segments to evaluate");
  if (entries.size() > max_utterances) entries.resize(max_utterances);
  EvaluationSummary summary;
  eval::WerCounts counts;
  double sim = 0.0;
  const uint64_t seed = StageSeed(run.config().seed, "evaluate");
  JsonlLog log(run.log("evaluate.jsonl"));
  for (size_t i = 0; i < entries.size(); ++i) {
    const auto& e = entries[i];
    const audio::Waveform ref = data::LoadSegmentAudio(run.config().corpus, e);
    SynthesisRequest req;
    req.text = e.segment.text();
    req.speaker = models.SpeakerEmbedding(ref);
    req.seed = seed + i;
    const SynthesisResult r = Synthesize(models, req);
    const double s = eval::SpeakerSim(req.speaker, models.SpeakerEmbedding(r.waveform));
    sim += s;
    nlohmann::json line = {{"audio_path", e.audio_path},
                           {"start_s", e.segment.start_s},
                           {"sim", s},
                           {"frames", r.frames}};
    if (asr != nullptr) {
      std::string hyp;
      for (const auto& f : asr->Transcribe(e.audio_path, r.waveform, 30.0)) {
        hyp += (hyp.empty() ? "" : " ") + f.text();
      }
      const eval::WerCounts c =
          eval::AlignWords(eval::NormalizeWords(e.segment.text()), eval::NormalizeWords(hyp));
      counts.substitutions += c.substitutions;
      counts.deletions += c.deletions;
      counts.insertions += c.insertions;
      counts.reference_words += c.reference_words;
      line["errors"] = c.errors();
      line["reference_words"] = c.reference_words;
    }
    log.Write(line);
  }
  summary.utterances = entries.size();
  summary.sim = sim / static_cast<double>(entries.size());
  if (asr != nullptr) summary.wer = counts.wer();
  if (fs::exists(run.report("lm.json"))) {
    const auto lm = ReadJson(run.report("lm.json"));
    if (lm.contains("final_validation_loss") && !lm["final_validation_loss"].is_null()) {
      summary.validation_loss = lm["final_validation_loss"].get<double>();
    }
  }
  WriteJson(run.report("eval.json"), summary.ToJson());
  return summary;
}

}  // namespace basetts::run
