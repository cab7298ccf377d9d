#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

namespace basetts::tokenizer {

inline constexpr int kVqVaeCodebookSize = 8196;
inline constexpr int kSslCodebookSize = 256;
inline constexpr double kVqVaeFrameRate = 25.0;
inline constexpr double kSslFrameRate = 50.0;

struct SpeechcodeSequence {
  std::vector<int64_t> codes;
  double frame_rate = kSslFrameRate;
  int codebook_size = kSslCodebookSize;

  size_t size() const { return codes.size(); }
  double bits_per_second() const;
  double duration_s() const { return codes.size() / frame_rate; }
  // Throws a data error when a code falls outside [0, codebook_size).
  void Validate() const;
};

// frame_rate * log2(K).
double Bitrate(double frame_rate, int codebook_size);

// Header: "BTSC" | u32 version | f64 frame_rate | u32 codebook_size |
// u64 count, then `count` little-endian u16 codes.
void WriteSpeechcodes(const std::filesystem::path& path,
                      const SpeechcodeSequence& seq);
SpeechcodeSequence ReadSpeechcodes(const std::filesystem::path& path);

}  // namespace basetts::tokenizer
