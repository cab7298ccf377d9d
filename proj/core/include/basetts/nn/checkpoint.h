#pragma once

#include <filesystem>
#include <map>
#include <string>

#include <nlohmann/json.hpp>

#include "basetts/nn/module.h"

namespace basetts::nn {

// Self-describing parameter archive:
//   "BTTSCKPT" | u32 version | u64 header bytes | JSON header | f64 payload
// The JSON header carries the archive kind, the full config used to build
// the model, and an index of named tensors into the payload.
class Checkpoint {
 public:
  static constexpr uint32_t kVersion = 1;

  Checkpoint() = default;
  Checkpoint(std::string kind, nlohmann::json config);

  const std::string& kind() const { return kind_; }
  const nlohmann::json& config() const { return config_; }
  nlohmann::json& mutable_config() { return config_; }

  void AddModule(const std::string& prefix, const Module& module);
  void AddMatrix(const std::string& name, const Matrix& m);
  bool HasMatrix(const std::string& name) const;
  const Matrix& GetMatrix(const std::string& name) const;
  // Copies every parameter of `module` from tensors stored under `prefix`.
  void RestoreModule(const std::string& prefix, Module& module) const;

  void Save(const std::filesystem::path& path) const;
  static Checkpoint Load(const std::filesystem::path& path);

 private:
  std::string kind_;
  nlohmann::json config_;
  std::map<std::string, Matrix> tensors_;
};

}  // namespace basetts::nn
