#include "basetts/nn/checkpoint.h"

#include <cstring>
#include <fstream>

#include "basetts/error.h"

namespace basetts::nn {
namespace {

constexpr char kMagic[8] = {'B', 'T', 'T', 'S', 'C', 'K', 'P', 'T'};

}  // namespace

Checkpoint::Checkpoint(std::string kind, nlohmann::json config)
    : kind_(std::move(kind)), config_(std::move(config)) {}

void Checkpoint::AddModule(const std::string& prefix, const Module& module) {
  for (const auto& [name, t] : module.Parameters()) {
    tensors_[prefix + "." + name] = t.value();
  }
}

void Checkpoint::AddMatrix(const std::string& name, const Matrix& m) {
  tensors_[name] = m;
}

bool Checkpoint::HasMatrix(const std::string& name) const {
  return tensors_.count(name) != 0;
}

const Matrix& Checkpoint::GetMatrix(const std::string& name) const {
  auto it = tensors_.find(name);
  if (it == tensors_.end()) {
    throw Error(ErrorKind::kConfig,
                "checkpoint (" + kind_ + ") has no tensor '" + name + "'");
  }
  return it->second;
}

void Checkpoint::RestoreModule(const std::string& prefix,
                               Module& module) const {
  for (auto& [name, t] : module.Parameters()) {
    const Matrix& m = GetMatrix(prefix + "." + name);
    if (m.rows() != t.rows() || m.cols() != t.cols()) {
      throw Error(ErrorKind::kConfig,
                  "checkpoint tensor '" + prefix + "." + name + "' is " +
                      std::to_string(m.rows()) + "x" +
                      std::to_string(m.cols()) + ", model expects " +
                      std::to_string(t.rows()) + "x" +
                      std::to_string(t.cols()));
    }
    t.mutable_value() = m;
  }
}

void Checkpoint::Save(const std::filesystem::path& path) const {
  nlohmann::json header;
  header["kind"] = kind_;
  header["config"] = config_;
  nlohmann::json index = nlohmann::json::array();
  uint64_t offset = 0;
  for (const auto& [name, m] : tensors_) {
    index.push_back({{"name", name},
                     {"rows", m.rows()},
                     {"cols", m.cols()},
                     {"offset", offset}});
    offset += static_cast<uint64_t>(m.size());
  }
  header["tensors"] = index;
  const std::string text = header.dump();

  std::ofstream out(path, std::ios::binary);
  if (!out) {
    throw Error(ErrorKind::kIo, "cannot write checkpoint " + path.string());
  }
  const uint32_t version = kVersion;
  const uint64_t header_len = text.size();
  out.write(kMagic, sizeof(kMagic));
  out.write(reinterpret_cast<const char*>(&version), sizeof(version));
  out.write(reinterpret_cast<const char*>(&header_len), sizeof(header_len));
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (const auto& [name, m] : tensors_) {
    out.write(reinterpret_cast<const char*>(m.data()),
              static_cast<std::streamsize>(m.size() * sizeof(double)));
  }
  if (!out) {
    throw Error(ErrorKind::kIo, "short write to " + path.string());
  }
}

Checkpoint Checkpoint::Load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw Error(ErrorKind::kDependency,
                "missing checkpoint " + path.string());
  }
  char magic[8];
  uint32_t version = 0;
  uint64_t header_len = 0;
  in.read(magic, sizeof(magic));
  in.read(reinterpret_cast<char*>(&version), sizeof(version));
  in.read(reinterpret_cast<char*>(&header_len), sizeof(header_len));
  if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
    throw Error(ErrorKind::kDataIntegrity,
                path.string() + " is not a checkpoint archive");
  }
  if (version != kVersion) {
    throw Error(ErrorKind::kDataIntegrity,
                "unsupported checkpoint version " + std::to_string(version));
  }
  std::string text(header_len, '\0');
  in.read(text.data(), static_cast<std::streamsize>(header_len));
  nlohmann::json header = nlohmann::json::parse(text);
  Checkpoint ck(header.at("kind").get<std::string>(), header.at("config"));
  const std::streampos payload = in.tellg();
  for (const auto& entry : header.at("tensors")) {
    const auto rows = entry.at("rows").get<Eigen::Index>();
    const auto cols = entry.at("cols").get<Eigen::Index>();
    const auto offset = entry.at("offset").get<uint64_t>();
    Matrix m(rows, cols);
    in.seekg(payload + static_cast<std::streamoff>(offset * sizeof(double)));
    in.read(reinterpret_cast<char*>(m.data()),
            static_cast<std::streamsize>(m.size() * sizeof(double)));
    if (!in) {
      throw Error(ErrorKind::kDataIntegrity,
                  "truncated checkpoint " + path.string());
    }
    ck.tensors_[entry.at("name").get<std::string>()] = std::move(m);
  }
  return ck;
}

}  // namespace basetts::nn
