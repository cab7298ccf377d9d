#include "basetts/gpt/text_tokenizer.h"

#include "basetts/error.h"

namespace basetts::gpt {
namespace {

std::vector<int64_t> Bytes(std::string_view text) {
  std::vector<int64_t> out(text.size());
  for (size_t i = 0; i < text.size(); ++i) {
    out[i] = static_cast<unsigned char>(text[i]);
  }
  return out;
}

}  // namespace

TextTokenizer::TextTokenizer() { vocab_.base_size = kByteVocab; }

TextTokenizer::TextTokenizer(bpe::BpeVocab vocab) : vocab_(std::move(vocab)) {
  if (vocab_.base_size != kByteVocab) {
    throw Error(ErrorKind::kConfig, "text tokenizer: base must be 256 bytes");
  }
  vocab_.Validate();
}

TextTokenizer TextTokenizer::Train(const std::vector<std::string>& texts,
                                   int vocab_size) {
  std::vector<std::vector<int64_t>> corpus;
  corpus.reserve(texts.size());
  for (const auto& t : texts) corpus.push_back(Bytes(t));
  return TextTokenizer(bpe::TrainBpe(corpus, kByteVocab, vocab_size));
}

std::vector<int64_t> TextTokenizer::Encode(std::string_view text) const {
  return bpe::Encode(Bytes(text), vocab_);
}

std::string TextTokenizer::Decode(std::span<const int64_t> ids) const {
  const auto bytes = bpe::DecodeTokens(ids, vocab_);
  std::string out(bytes.size(), '\0');
  for (size_t i = 0; i < bytes.size(); ++i) out[i] = static_cast<char>(bytes[i]);
  return out;
}

void TextTokenizer::Save(const std::filesystem::path& path) const {
  bpe::WriteVocab(path, vocab_);
}

TextTokenizer TextTokenizer::Load(const std::filesystem::path& path) {
  return TextTokenizer(bpe::ReadVocab(path));
}

}  // namespace basetts::gpt
