#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <memory>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "CLI11.hpp"
#include "basetts/audio/audio.h"
#include "basetts/bpe/bpe.h"
#include "basetts/data/fixture.h"
#include "basetts/data/pipeline.h"
#include "basetts/error.h"
#include "basetts/eval/eval.h"
#include "basetts/run/experiment.h"
#include "basetts/tokenizer/speechcode.h"

namespace {

namespace fs = std::filesystem;
using basetts::Error;
using basetts::ErrorKind;
namespace run = basetts::run;

nlohmann::json ReadJsonFile(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::kIo, "cannot read " + path.string());
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::kConfig, path.string() + ": " + e.what());
  }
}

std::string ModelPreset(const std::string& size) {
  if (size == "toy") return "toy";
  if (size == "small" || size == "medium" || size == "large") return size + "_eighth";
  throw Error(ErrorKind::kConfig, "unknown model size '" + size + "'");
}

void PrintJson(const nlohmann::json& j) { std::cout << j.dump(2) << "\n"; }

std::vector<basetts::tokenizer::SpeechcodeSequence> ReadCodes(
    const std::vector<std::string>& files) {
  std::vector<basetts::tokenizer::SpeechcodeSequence> out;
  for (const auto& f : files) out.push_back(basetts::tokenizer::ReadSpeechcodes(f));
  return out;
}

std::vector<int64_t> ReadTokens(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::kIo, "cannot read " + path.string());
  std::vector<int64_t> tokens;
  for (int64_t t; in >> t;) tokens.push_back(t);
  return tokens;
}

void PrintStage(const std::string& stage, double seconds, const nlohmann::json& report) {
  std::cerr << stage << " done in " << std::fixed << std::setprecision(1) << seconds << " s\n";
  PrintJson(report);
}

template <typename F>
void Timed(const std::string& stage, F&& f) {
  const auto start = std::chrono::steady_clock::now();
  const nlohmann::json report = f();
  PrintStage(stage, std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count(),
             report);
}

nlohmann::json PrepJson(const basetts::data::PrepReport& r) { return r.ToJson(); }

nlohmann::json TokenizerJson(const run::TokenizerReport& r) {
  return {{"steps", r.steps},
          {"utterances", r.utterances},
          {"initial_l1", r.initial_l1},
          {"final_l1", r.final_l1}};
}

nlohmann::json LmJson(const run::LmReport& r) {
  nlohmann::json j = {{"steps", r.steps},
                      {"train_examples", r.train_examples},
                      {"holdout_examples", r.holdout_examples},
                      {"dropped_examples", r.dropped_examples},
                      {"final_train_loss", r.final_train_loss},
                      {"bpe_compression", r.bpe_compression}};
  j["final_validation_loss"] =
      r.final_validation_loss ? nlohmann::json(*r.final_validation_loss) : nlohmann::json();
  return j;
}

nlohmann::json DecoderJson(const run::DecoderReport& r) {
  return {{"steps", r.steps},
          {"examples", r.examples},
          {"initial_mel_l1", r.initial_mel_l1},
          {"final_mel_l1", r.final_mel_l1}};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"basetts: desk-scale text-to-speech with discrete speech tokens"};
  app.require_subcommand(1);

  // make-fixture
  basetts::data::FixtureConfig fixture;
  std::string fixture_out;
  auto* make_fixture = app.add_subcommand("make-fixture", "Write the synthetic speaker corpus");
  make_fixture->add_option("--out", fixture_out, "Output directory")->required();
  make_fixture->add_option("--seed", fixture.seed, "Generator seed");
  make_fixture->add_option("--speakers", fixture.num_speakers, "Number of speakers");
  make_fixture->add_option("--utterances", fixture.utterances_per_speaker,
                           "Utterances per speaker");
  make_fixture->add_option("--min-seconds", fixture.min_seconds, "Shortest utterance");
  make_fixture->add_option("--max-seconds", fixture.max_seconds, "Longest utterance");

  // prep-data
  std::string prep_in;
  std::string prep_out;
  basetts::data::PrepConfig prep_cfg;
  auto* prep_data = app.add_subcommand("prep-data", "Segment, restore and cap a corpus");
  prep_data->add_option("--in", prep_in, "Corpus with metadata.jsonl and asr.json")->required();
  prep_data->add_option("--out", prep_out, "Output directory")->required();
  prep_data->add_option("--cap-hours", prep_cfg.cap_hours, "Per-speaker cap in hours");
  prep_data->add_option("--edit-threshold", prep_cfg.restore.max_norm_edit,
                        "Normalized edit distance gate for text restoration");
  prep_data->add_option("--seed", prep_cfg.seed, "Speaker cap seed");

  // init
  std::string run_dir;
  std::string config_file;
  std::string corpus;
  std::string preset = "toy";
  std::string model_size;
  std::string tokenizer_variant;
  int64_t root_seed = -1;
  auto* init = app.add_subcommand("init", "Create a run directory with a resolved config");
  init->add_option("--run", run_dir, "Run directory")->required();
  init->add_option("--config", config_file, "JSON config overriding the preset");
  init->add_option("--corpus", corpus, "Corpus directory");
  init->add_option("--preset", preset, "toy or default")->check(CLI::IsMember({"toy", "default"}));
  init->add_option("--model", model_size, "LM size: toy, small, medium or large");
  init->add_option("--tokenizer", tokenizer_variant, "ssl or vqvae")
      ->check(CLI::IsMember({"ssl", "vqvae"}));
  init->add_option("--seed", root_seed, "Root seed");

  auto add_run = [&](const std::string& name, const std::string& help) {
    auto* sub = app.add_subcommand(name, help);
    sub->add_option("--run", run_dir, "Run directory")->required();
    return sub;
  };
  auto* prep = add_run("prep", "Prepare the corpus manifest");
  auto* train_tokenizer = add_run("train-tokenizer", "Train the speech tokenizer");
  auto* train_lm = add_run("train-lm", "Train speech BPE, text tokenizer and the LM");
  auto* train_decoder = add_run("train-decoder", "Train the waveform decoder on the frozen LM");
  auto* pipeline = add_run("pipeline", "Run every training stage in order");

  // synthesize
  std::string text;
  std::string speaker_wav;
  std::string speaker_id;
  std::string out_wav;
  bool stream = false;
  int chunk = 25;
  int64_t synth_seed = -1;
  auto* synthesize = add_run("synthesize", "Generate speech for a text");
  synthesize->add_option("--text", text, "Text to speak")->required();
  auto* wav_opt = synthesize->add_option("--speaker-wav", speaker_wav, "Reference recording");
  synthesize->add_option("--speaker", speaker_id, "Speaker id from the manifest")
      ->excludes(wav_opt);
  synthesize->add_option("--out", out_wav, "Output WAV")->required();
  synthesize->add_flag("--stream", stream, "Decode in chunks");
  synthesize->add_option("--chunk", chunk, "Frames per streamed chunk");
  synthesize->add_option("--seed", synth_seed, "Sampling seed");

  // evaluate
  std::string asr_table;
  size_t max_utterances = 8;
  auto* evaluate = add_run("evaluate", "Score held-out resynthesis");
  evaluate->add_option("--asr-table", asr_table, "Recognizer lookup table (asr.json)");
  evaluate->add_option("--max", max_utterances, "Held-out utterances to score");

  // report
  std::string mushra_file;
  std::string ratings_file;
  std::vector<std::string> systems;
  std::string svg_out;
  bool paired = false;
  auto* report = app.add_subcommand("report", "Render evaluation tables");
  report->add_option("--run", run_dir, "Run directory with reports/eval.json");
  report->add_option("--mushra", mushra_file, "JSON object of system -> scores");
  report->add_flag("--paired", paired, "Paired significance test");
  report->add_option("--ratings", ratings_file, "Expert ratings JSONL");
  report->add_option("--systems", systems, "Systems expected in the ratings")->delimiter(',');
  report->add_option("--svg", svg_out, "Write the expert score chart");

  // tokenize
  std::string in_path;
  std::string out_path;
  auto* tokenize = add_run("tokenize", "Encode a WAV into speech codes");
  tokenize->add_option("--in", in_path, "Input WAV")->required();
  tokenize->add_option("--out", out_path, "Output .btsc")->required();

  // bpe
  auto* bpe = app.add_subcommand("bpe", "Speech code BPE utilities");
  bpe->require_subcommand(1);
  std::vector<std::string> code_files;
  std::string vocab_path;
  int target_vocab = 0;
  auto* bpe_train = bpe->add_subcommand("train", "Learn merges from .btsc files");
  bpe_train->add_option("--in", code_files, "Speech code files")->required();
  bpe_train->add_option("--vocab-size", target_vocab, "Target vocabulary")->required();
  bpe_train->add_option("--out", vocab_path, "Vocabulary file")->required();
  auto* bpe_encode = bpe->add_subcommand("encode", "Print BPE tokens of a .btsc file");
  bpe_encode->add_option("--vocab", vocab_path, "Vocabulary file")->required();
  bpe_encode->add_option("--in", in_path, "Speech code file")->required();
  auto* bpe_decode = bpe->add_subcommand("decode", "Expand whitespace-separated tokens");
  bpe_decode->add_option("--vocab", vocab_path, "Vocabulary file")->required();
  bpe_decode->add_option("--in", in_path, "Token file")->required();
  bpe_decode->add_option("--out", out_path, "Output .btsc")->required();
  double frame_rate = basetts::tokenizer::kSslFrameRate;
  bpe_decode->add_option("--frame-rate", frame_rate, "Code frame rate in Hz");
  auto* bpe_report = bpe->add_subcommand("report", "Compression of a vocabulary");
  bpe_report->add_option("--vocab", vocab_path, "Vocabulary file")->required();
  bpe_report->add_option("--in", code_files, "Speech code files")->required();

  // bitrate
  double rate = 0.0;
  int codebook = 0;
  auto* bitrate = app.add_subcommand("bitrate", "Bits per second of a code stream");
  bitrate->add_option("--rate", rate, "Frames per second")->required();
  bitrate->add_option("--codebook", codebook, "Codebook size")->required();

  // testset
  std::string category;
  auto* testset = app.add_subcommand("testset", "Print the expert-evaluation sentences");
  testset->add_option("--category", category, "Only this category");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*make_fixture) {
      basetts::data::WriteFixture(basetts::data::GenerateFixture(fixture), fixture_out);
      std::cout << "wrote " << fixture.num_speakers * fixture.utterances_per_speaker
                << " utterances to " << fixture_out << "\n";
    } else if (*prep_data) {
      prep_cfg.Validate();
      const auto result = basetts::data::PrepareCorpus(prep_in, prep_cfg);
      fs::create_directories(prep_out);
      basetts::data::WriteManifest(fs::path(prep_out) / "manifest.jsonl", result.dataset);
      PrintJson(result.report.ToJson());
    } else if (*init) {
      run::ExperimentConfig cfg =
          preset == "toy" ? run::ExperimentConfig::Toy() : run::ExperimentConfig::Default();
      nlohmann::json j = cfg.ToJson();
      if (!config_file.empty()) j.merge_patch(ReadJsonFile(config_file));
      if (!corpus.empty()) j["corpus"] = fs::absolute(corpus).string();
      if (!tokenizer_variant.empty()) j["tokenizer"]["variant"] = tokenizer_variant;
      if (root_seed >= 0) j["seed"] = root_seed;
      if (!model_size.empty()) {
        j["lm"]["model"] = basetts::gpt::ModelConfig::Preset(ModelPreset(model_size)).ToJson();
      }
      const auto created = run::RunDirectory::Create(run_dir, run::ExperimentConfig::FromJson(j));
      std::cout << "initialized " << created.root().string() << "\n";
    } else if (*prep) {
      auto r = run::RunDirectory::Open(run_dir);
      Timed("prep", [&] { return PrepJson(run::Prep(r)); });
    } else if (*train_tokenizer) {
      auto r = run::RunDirectory::Open(run_dir);
      Timed("train-tokenizer", [&] { return TokenizerJson(run::TrainTokenizer(r)); });
    } else if (*train_lm) {
      auto r = run::RunDirectory::Open(run_dir);
      Timed("train-lm", [&] { return LmJson(run::TrainLm(r)); });
    } else if (*train_decoder) {
      auto r = run::RunDirectory::Open(run_dir);
      Timed("train-decoder", [&] { return DecoderJson(run::TrainDecoder(r)); });
    } else if (*pipeline) {
      auto r = run::RunDirectory::Open(run_dir);
      Timed("prep", [&] { return PrepJson(run::Prep(r)); });
      Timed("train-tokenizer", [&] { return TokenizerJson(run::TrainTokenizer(r)); });
      Timed("train-lm", [&] { return LmJson(run::TrainLm(r)); });
      Timed("train-decoder", [&] { return DecoderJson(run::TrainDecoder(r)); });
    } else if (*synthesize) {
      const auto r = run::RunDirectory::Open(run_dir);
      const auto models = run::Models::Load(r);
      run::SynthesisRequest req;
      req.text = text;
      req.speaker = run::ResolveSpeaker(r, models, speaker_wav, speaker_id);
      req.stream = stream;
      req.chunk_frames = chunk;
      if (synth_seed >= 0) req.seed = static_cast<uint64_t>(synth_seed);
      const auto result = run::Synthesize(models, req);
      basetts::audio::WriteWav(out_wav, result.waveform);
      PrintJson({{"out", out_wav},
                 {"tokens", result.tokens.size()},
                 {"base_codes", result.base_codes},
                 {"frames", result.frames},
                 {"samples", result.waveform.samples.size()},
                 {"truncated", result.truncated},
                 {"chunks", result.chunks},
                 {"first_chunk_seconds", result.first_chunk_seconds},
                 {"total_seconds", result.total_seconds}});
    } else if (*evaluate) {
      auto r = run::RunDirectory::Open(run_dir);
      std::unique_ptr<basetts::data::LookupAsr> asr;
      if (!asr_table.empty()) {
        asr = std::make_unique<basetts::data::LookupAsr>(
            basetts::data::LookupAsr::FromFile(asr_table));
      }
      PrintJson(run::Evaluate(r, asr.get(), max_utterances).ToJson());
    } else if (*report) {
      bool rendered = false;
      if (!run_dir.empty()) {
        const auto r = run::RunDirectory::Open(run_dir);
        const nlohmann::json j = ReadJsonFile(r.report("eval.json"));
        basetts::eval::ObjectiveRow row;
        row.system = r.root().filename().string();
        row.sim = j["sim"].get<double>();
        row.wer = j["wer"].is_null() ? std::nan("") : j["wer"].get<double>();
        std::cout << basetts::eval::RenderObjectiveTable({row}) << "\n";
        rendered = true;
      }
      if (!mushra_file.empty()) {
        std::vector<basetts::eval::MushraResult> results;
        const nlohmann::json scores = ReadJsonFile(mushra_file);
        for (auto it = scores.begin(); it != scores.end(); ++it) {
          results.push_back(
              basetts::eval::MushraAggregate(it.key(), it.value().get<std::vector<double>>()));
        }
        std::cout << basetts::eval::RenderMushraTable(results) << "\n";
        for (size_t i = 0; i + 1 < results.size(); ++i) {
          for (size_t k = i + 1; k < results.size(); ++k) {
            const auto s = basetts::eval::Significance(results[i].scores, results[k].scores,
                                                       paired);
            std::cout << basetts::eval::FormatComparison(results[i], results[k])
                      << "  p=" << s.p_value << (s.significant ? " (significant)" : "") << "\n";
          }
        }
        rendered = true;
      }
      if (!ratings_file.empty()) {
        const auto ratings = basetts::eval::ReadRatings(ratings_file);
        if (systems.empty()) {
          std::set<std::string> seen;
          for (const auto& rt : ratings) {
            if (seen.insert(rt.system).second) systems.push_back(rt.system);
          }
        }
        const auto rep = basetts::eval::BuildEmergentReport(ratings, systems);
        std::cout << basetts::eval::RenderEmergentTable(rep) << "\n";
        if (!svg_out.empty()) {
          std::ofstream(svg_out) << basetts::eval::RenderEmergentSvg(rep);
        }
        rendered = true;
      }
      if (!rendered) {
        throw Error(ErrorKind::kConfig, "report needs --run, --mushra or --ratings");
      }
    } else if (*tokenize) {
      const auto r = run::RunDirectory::Open(run_dir);
      const auto models = run::Models::Load(r, false);
      const auto codes = models.Tokenize(basetts::audio::LoadAudio(in_path));
      basetts::tokenizer::WriteSpeechcodes(out_path, codes);
      PrintJson({{"codes", codes.size()},
                 {"frame_rate", codes.frame_rate},
                 {"codebook_size", codes.codebook_size},
                 {"bits_per_second", codes.bits_per_second()}});
    } else if (*bpe_train) {
      const auto corpus_codes = ReadCodes(code_files);
      const auto vocab = basetts::bpe::TrainBpe(corpus_codes, target_vocab);
      basetts::bpe::WriteVocab(vocab_path, vocab);
      PrintJson({{"base_size", vocab.base_size},
                 {"merges", vocab.merges.size()},
                 {"compression", basetts::bpe::Compression(corpus_codes, vocab).mean_ratio}});
    } else if (*bpe_encode) {
      const auto vocab = basetts::bpe::ReadVocab(vocab_path);
      const auto tokens =
          basetts::bpe::Encode(basetts::tokenizer::ReadSpeechcodes(in_path), vocab);
      for (size_t i = 0; i < tokens.size(); ++i) std::cout << (i ? " " : "") << tokens[i];
      std::cout << "\n";
    } else if (*bpe_decode) {
      const auto vocab = basetts::bpe::ReadVocab(vocab_path);
      const auto seq = basetts::bpe::Decode(ReadTokens(in_path), vocab, frame_rate);
      basetts::tokenizer::WriteSpeechcodes(out_path, seq);
      std::cout << "wrote " << seq.size() << " codes to " << out_path << "\n";
    } else if (*bpe_report) {
      const auto vocab = basetts::bpe::ReadVocab(vocab_path);
      const auto rep = basetts::bpe::Compression(ReadCodes(code_files), vocab);
      PrintJson({{"vocab_size", vocab.vocab_size()},
                 {"mean_compression", rep.mean_ratio},
                 {"per_sequence", rep.per_sequence}});
    } else if (*bitrate) {
      std::cout << basetts::tokenizer::Bitrate(rate, codebook) << "\n";
    } else if (*testset) {
      const auto set = basetts::eval::LoadEmergentTestset();
      for (const auto& s : set.sentences) {
        if (!category.empty() && s.category != category) continue;
        std::cout << s.category << "\t" << s.index << "\t" << s.text << "\n";
      }
    }
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return e.kind() == ErrorKind::kDependency ? 3 : 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
