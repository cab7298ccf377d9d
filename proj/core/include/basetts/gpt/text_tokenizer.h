#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "basetts/bpe/bpe.h"

namespace basetts::gpt {

// Byte-level BPE: every string is encodable because the base alphabet is
// the 256 byte values.
class TextTokenizer {
 public:
  static constexpr int kByteVocab = 256;

  TextTokenizer();
  explicit TextTokenizer(bpe::BpeVocab vocab);

  static TextTokenizer Train(const std::vector<std::string>& texts, int vocab_size);

  std::vector<int64_t> Encode(std::string_view text) const;
  std::string Decode(std::span<const int64_t> ids) const;
  int vocab_size() const { return vocab_.vocab_size(); }
  const bpe::BpeVocab& vocab() const { return vocab_; }

  void Save(const std::filesystem::path& path) const;
  static TextTokenizer Load(const std::filesystem::path& path);

 private:
  bpe::BpeVocab vocab_;
};

}  // namespace basetts::gpt
