#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "basetts/nn/checkpoint.h"
#include "basetts/nn/module.h"
#include "basetts/nn/tensor.h"

namespace basetts::tokenizer {

struct VqOutput {
  std::vector<int64_t> codes;
  // Codebook rows in the forward pass; identity in the backward pass.
  nn::Tensor quantized;
  // Mean over rows of the squared distance to the assigned entry.
  nn::Tensor commitment;
};

// Exhaustive nearest-entry search.
std::vector<int64_t> NearestCodes(const nn::Matrix& vectors,
                                  const nn::Matrix& entries);

VqOutput VqQuantize(const nn::Tensor& vectors, const nn::Matrix& entries);

struct VqConfig {
  int codebook_size = 256;
  int dim = 16;
  double decay = 0.99;
  double epsilon = 1e-5;
  int dead_code_steps = 100;
};

// Codebook maintained by exponential moving averages of assigned encoder
// outputs. Entries unused for `dead_code_steps` updates are re-seeded with
// random encoder outputs from the current batch.
class VectorQuantizer {
 public:
  VectorQuantizer(const VqConfig& config, nn::Rng& rng);

  VqOutput Quantize(const nn::Tensor& vectors) const;
  void Update(const nn::Matrix& vectors, std::span<const int64_t> codes,
              nn::Rng& rng);

  const nn::Matrix& entries() const { return entries_; }
  nn::Matrix& mutable_entries() { return entries_; }
  const VqConfig& config() const { return config_; }
  int codebook_size() const { return config_.codebook_size; }
  int reseeded_total() const { return reseeded_total_; }

  void Save(nn::Checkpoint& ck, const std::string& prefix) const;
  void Restore(const nn::Checkpoint& ck, const std::string& prefix);

 private:
  VqConfig config_;
  bool initialized_ = false;
  nn::Matrix entries_;
  nn::Matrix ema_count_;  // [K x 1]
  nn::Matrix ema_sum_;    // [K x d]
  std::vector<int> unused_steps_;
  int reseeded_total_ = 0;
};

}  // namespace basetts::tokenizer
