#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "basetts/tokenizer/speechcode.h"

namespace basetts::bpe {

using Token = int64_t;

struct Merge {
  Token a;
  Token b;
  Token result;

  bool operator==(const Merge&) const = default;
};

struct BpeVocab {
  int base_size = 0;
  std::vector<Merge> merges;

  int vocab_size() const { return base_size + static_cast<int>(merges.size()); }
  // Throws a data error unless merge targets are consecutive from base_size
  // and every merge only references tokens defined before it.
  void Validate() const;
};

// Greedy most-frequent adjacent pair merging (overlapping occurrences are
// counted). Ties go to the smallest (a, b). Stops at target_vocab or when no
// pair occurs at least twice. Sequences are never merged across each other.
BpeVocab TrainBpe(const std::vector<tokenizer::SpeechcodeSequence>& corpus,
                  int target_vocab);
BpeVocab TrainBpe(const std::vector<std::vector<Token>>& corpus, int base_size,
                  int target_vocab);

// Applies merges in rank order, each as one left-to-right sweep.
std::vector<Token> Encode(std::span<const Token> codes, const BpeVocab& vocab);
std::vector<Token> Encode(const tokenizer::SpeechcodeSequence& seq,
                          const BpeVocab& vocab);

std::vector<Token> DecodeTokens(std::span<const Token> tokens,
                                const BpeVocab& vocab);
tokenizer::SpeechcodeSequence Decode(std::span<const Token> tokens,
                                     const BpeVocab& vocab,
                                     double frame_rate = tokenizer::kSslFrameRate);

struct CompressionReport {
  double mean_ratio = 0.0;
  std::vector<double> per_sequence;
};

// ratio = 1 - encoded_len / original_len, averaged over non-empty sequences.
CompressionReport Compression(const std::vector<std::vector<Token>>& corpus,
                              const BpeVocab& vocab);
CompressionReport Compression(
    const std::vector<tokenizer::SpeechcodeSequence>& corpus,
    const BpeVocab& vocab);

// Text format: a "base <K>" line followed by one "a b -> t" line per merge.
void WriteVocab(const std::filesystem::path& path, const BpeVocab& vocab);
BpeVocab ReadVocab(const std::filesystem::path& path);

}  // namespace basetts::bpe
