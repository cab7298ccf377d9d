#include "basetts/tokenizer/speechcode.h"

#include <cmath>
#include <cstring>
#include <fstream>

#include "basetts/error.h"

namespace basetts::tokenizer {
namespace {

constexpr char kMagic[4] = {'B', 'T', 'S', 'C'};
constexpr uint32_t kVersion = 1;

template <typename T>
void Put(std::ostream& out, T v) {
  unsigned char bytes[sizeof(T)];
  std::memcpy(bytes, &v, sizeof(T));
  out.write(reinterpret_cast<const char*>(bytes), sizeof(T));
}

template <typename T>
T Get(std::istream& in, const std::filesystem::path& path) {
  T v;
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!in) {
    throw Error(ErrorKind::kDataIntegrity,
                "truncated speechcode file " + path.string());
  }
  return v;
}

}  // namespace

double SpeechcodeSequence::bits_per_second() const {
  return Bitrate(frame_rate, codebook_size);
}

void SpeechcodeSequence::Validate() const {
  for (int64_t c : codes) {
    if (c < 0 || c >= codebook_size) {
      throw Error(ErrorKind::kData, "speechcode " + std::to_string(c) +
                                        " outside codebook of size " +
                                        std::to_string(codebook_size));
    }
  }
}

double Bitrate(double frame_rate, int codebook_size) {
  if (codebook_size < 2) {
    throw Error(ErrorKind::kConfig, "bitrate needs a codebook of at least 2");
  }
  if (!(frame_rate > 0.0)) {
    throw Error(ErrorKind::kConfig, "bitrate needs a positive frame rate");
  }
  return frame_rate * std::log2(static_cast<double>(codebook_size));
}

void WriteSpeechcodes(const std::filesystem::path& path,
                      const SpeechcodeSequence& seq) {
  seq.Validate();
  if (seq.codebook_size > 65536) {
    throw Error(ErrorKind::kConfig, "codebook too large for 16-bit codes");
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorKind::kIo, "cannot write " + path.string());
  out.write(kMagic, 4);
  Put<uint32_t>(out, kVersion);
  Put<double>(out, seq.frame_rate);
  Put<uint32_t>(out, static_cast<uint32_t>(seq.codebook_size));
  Put<uint64_t>(out, seq.codes.size());
  for (int64_t c : seq.codes) {
    const auto v = static_cast<uint16_t>(c);
    const unsigned char le[2] = {static_cast<unsigned char>(v & 0xff),
                                 static_cast<unsigned char>(v >> 8)};
    out.write(reinterpret_cast<const char*>(le), 2);
  }
}

SpeechcodeSequence ReadSpeechcodes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::kIo, "cannot read " + path.string());
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, kMagic, 4) != 0) {
    throw Error(ErrorKind::kDataIntegrity, "not a speechcode file: " + path.string());
  }
  if (Get<uint32_t>(in, path) != kVersion) {
    throw Error(ErrorKind::kDataIntegrity, "unsupported speechcode version");
  }
  SpeechcodeSequence seq;
  seq.frame_rate = Get<double>(in, path);
  seq.codebook_size = static_cast<int>(Get<uint32_t>(in, path));
  const uint64_t count = Get<uint64_t>(in, path);
  seq.codes.resize(count);
  for (auto& c : seq.codes) {
    unsigned char le[2];
    in.read(reinterpret_cast<char*>(le), 2);
    if (!in) {
      throw Error(ErrorKind::kDataIntegrity,
                  "truncated speechcode file " + path.string());
    }
    c = le[0] | (le[1] << 8);
  }
  seq.Validate();
  return seq;
}

}  // namespace basetts::tokenizer
