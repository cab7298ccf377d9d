#pragma once

#include <cstdint>
#include <span>

#include "basetts/nn/tensor.h"

namespace basetts::tokenizer {

struct ProbeResult {
  double train_accuracy = 0.0;
  double test_accuracy = 0.0;
};

struct ProbeConfig {
  int iterations = 400;
  double learning_rate = 0.05;
  double l2 = 1e-4;
};

// Multinomial logistic regression on standardized features, fit on the train
// split by full-batch Adam and scored on the held-out split.
ProbeResult LinearProbe(const nn::Matrix& train_x, std::span<const int> train_y,
                        const nn::Matrix& test_x, std::span<const int> test_y,
                        int num_classes, const ProbeConfig& config = {});

nn::Matrix OneHot(std::span<const int64_t> codes, int num_codes);

}  // namespace basetts::tokenizer
