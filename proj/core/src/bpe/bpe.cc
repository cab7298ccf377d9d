#include "basetts/bpe/bpe.h"

#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <unordered_map>

#include "basetts/error.h"

namespace basetts::bpe {
namespace {

uint64_t PairKey(Token a, Token b) {
  return (static_cast<uint64_t>(a) << 32) | static_cast<uint64_t>(b);
}

void ApplyMerge(std::vector<Token>& seq, const Merge& m) {
  size_t out = 0;
  for (size_t i = 0; i < seq.size(); ++i) {
    if (i + 1 < seq.size() && seq[i] == m.a && seq[i + 1] == m.b) {
      seq[out++] = m.result;
      ++i;
    } else {
      seq[out++] = seq[i];
    }
  }
  seq.resize(out);
}

void CheckBase(std::span<const Token> codes, int base_size) {
  for (Token c : codes) {
    if (c < 0 || c >= base_size) {
      throw Error(ErrorKind::kData, "bpe: code " + std::to_string(c) +
                                        " outside base alphabet of " +
                                        std::to_string(base_size));
    }
  }
}

std::vector<std::vector<Token>> Codes(
    const std::vector<tokenizer::SpeechcodeSequence>& corpus) {
  std::vector<std::vector<Token>> out;
  out.reserve(corpus.size());
  for (const auto& s : corpus) out.push_back(s.codes);
  return out;
}

}  // namespace

void BpeVocab::Validate() const {
  if (base_size < 1) throw Error(ErrorKind::kData, "bpe: base size must be positive");
  for (size_t i = 0; i < merges.size(); ++i) {
    const Token next = base_size + static_cast<Token>(i);
    const Merge& m = merges[i];
    if (m.result != next) {
      throw Error(ErrorKind::kData, "bpe: merge " + std::to_string(i) +
                                        " targets " + std::to_string(m.result) +
                                        ", expected " + std::to_string(next));
    }
    if (m.a < 0 || m.b < 0 || m.a >= next || m.b >= next) {
      throw Error(ErrorKind::kData, "bpe: merge " + std::to_string(i) +
                                        " references an undefined token");
    }
  }
}

BpeVocab TrainBpe(const std::vector<std::vector<Token>>& corpus, int base_size,
                  int target_vocab) {
  if (base_size < 1 || target_vocab < base_size) {
    throw Error(ErrorKind::kConfig, "bpe: target vocab " +
                                        std::to_string(target_vocab) +
                                        " below base size " +
                                        std::to_string(base_size));
  }
  for (const auto& s : corpus) CheckBase(s, base_size);
  BpeVocab vocab;
  vocab.base_size = base_size;
  std::vector<std::vector<Token>> work = corpus;
  std::unordered_map<uint64_t, int64_t> counts;
  while (vocab.vocab_size() < target_vocab) {
    counts.clear();
    for (const auto& s : work) {
      for (size_t i = 0; i + 1 < s.size(); ++i) ++counts[PairKey(s[i], s[i + 1])];
    }
    uint64_t best = 0;
    int64_t best_count = 1;
    for (const auto& [key, n] : counts) {
      if (n > best_count || (n == best_count && n >= 2 && key < best)) {
        best = key;
        best_count = n;
      }
    }
    if (best_count < 2) break;
    const Merge m{static_cast<Token>(best >> 32),
                  static_cast<Token>(best & 0xffffffffu), vocab.vocab_size()};
    vocab.merges.push_back(m);
    for (auto& s : work) ApplyMerge(s, m);
  }
  return vocab;
}

BpeVocab TrainBpe(const std::vector<tokenizer::SpeechcodeSequence>& corpus,
                  int target_vocab) {
  if (corpus.empty()) throw Error(ErrorKind::kEmptyInput, "bpe: empty corpus");
  const int base = corpus.front().codebook_size;
  for (const auto& s : corpus) {
    if (s.codebook_size != base) {
      throw Error(ErrorKind::kData, "bpe: mixed codebook sizes in corpus");
    }
  }
  return TrainBpe(Codes(corpus), base, target_vocab);
}

std::vector<Token> Encode(std::span<const Token> codes, const BpeVocab& vocab) {
  CheckBase(codes, vocab.base_size);
  std::vector<Token> seq(codes.begin(), codes.end());
  for (const Merge& m : vocab.merges) {
    if (seq.size() < 2) break;
    ApplyMerge(seq, m);
  }
  return seq;
}

std::vector<Token> Encode(const tokenizer::SpeechcodeSequence& seq,
                          const BpeVocab& vocab) {
  if (seq.codebook_size != vocab.base_size) {
    throw Error(ErrorKind::kData, "bpe: codebook size differs from vocab base");
  }
  return Encode(std::span<const Token>(seq.codes), vocab);
}

std::vector<Token> DecodeTokens(std::span<const Token> tokens,
                                const BpeVocab& vocab) {
  std::vector<Token> out;
  std::vector<Token> stack;
  for (Token t : tokens) {
    if (t < 0 || t >= vocab.vocab_size()) {
      throw Error(ErrorKind::kData, "bpe: token " + std::to_string(t) +
                                        " outside vocab of " +
                                        std::to_string(vocab.vocab_size()));
    }
    stack.push_back(t);
    while (!stack.empty()) {
      const Token top = stack.back();
      stack.pop_back();
      if (top < vocab.base_size) {
        out.push_back(top);
      } else {
        const Merge& m = vocab.merges[top - vocab.base_size];
        stack.push_back(m.b);
        stack.push_back(m.a);
      }
    }
  }
  return out;
}

tokenizer::SpeechcodeSequence Decode(std::span<const Token> tokens,
                                     const BpeVocab& vocab, double frame_rate) {
  tokenizer::SpeechcodeSequence seq;
  seq.codes = DecodeTokens(tokens, vocab);
  seq.codebook_size = vocab.base_size;
  seq.frame_rate = frame_rate;
  return seq;
}

CompressionReport Compression(const std::vector<std::vector<Token>>& corpus,
                              const BpeVocab& vocab) {
  CompressionReport r;
  double sum = 0.0;
  for (const auto& s : corpus) {
    if (s.empty()) continue;
    const double ratio =
        1.0 - static_cast<double>(Encode(s, vocab).size()) / s.size();
    r.per_sequence.push_back(ratio);
    sum += ratio;
  }
  if (r.per_sequence.empty()) {
    throw Error(ErrorKind::kEmptyInput, "bpe: no non-empty sequences to report");
  }
  r.mean_ratio = sum / r.per_sequence.size();
  return r;
}

CompressionReport Compression(
    const std::vector<tokenizer::SpeechcodeSequence>& corpus,
    const BpeVocab& vocab) {
  return Compression(Codes(corpus), vocab);
}

void WriteVocab(const std::filesystem::path& path, const BpeVocab& vocab) {
  vocab.Validate();
  std::ofstream out(path);
  out << "base " << vocab.base_size << "\n";
  for (const Merge& m : vocab.merges) {
    out << m.a << " " << m.b << " -> " << m.result << "\n";
  }
  if (!out) throw Error(ErrorKind::kIo, "cannot write " + path.string());
}

BpeVocab ReadVocab(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::kIo, "cannot read " + path.string());
  BpeVocab vocab;
  std::string line;
  if (!std::getline(in, line) || line.rfind("base ", 0) != 0) {
    throw Error(ErrorKind::kDataIntegrity, "bpe vocab: missing base header");
  }
  try {
    vocab.base_size = std::stoi(line.substr(5));
  } catch (const std::exception&) {
    throw Error(ErrorKind::kDataIntegrity, "bpe vocab: bad base header");
  }
  int lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::istringstream ss(line);
    Merge m{};
    std::string arrow, rest;
    if (!(ss >> m.a >> m.b >> arrow >> m.result) || arrow != "->" || (ss >> rest)) {
      throw Error(ErrorKind::kDataIntegrity,
                  "bpe vocab: malformed line " + std::to_string(lineno));
    }
    vocab.merges.push_back(m);
  }
  try {
    vocab.Validate();
  } catch (const Error& e) {
    throw Error(ErrorKind::kDataIntegrity, e.what());
  }
  return vocab;
}

}  // namespace basetts::bpe
