#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <vector>

#include "uapguard/datasets.hpp"
#include "uapguard/nn.hpp"

namespace uapguard {

struct SmallCnnOptions {
  std::size_t conv1_channels = 8;
  std::size_t conv2_channels = 16;
  std::size_t hidden = 128;
};

/// conv3x3-relu-maxpool, conv3x3-relu-maxpool, dense-relu, dense(K).
/// He-normal weights, zero biases, drawn from `seed`.
Model make_small_cnn(InputSpec input, std::size_t classes, std::uint64_t seed, SmallCnnOptions options = {});

/// Single dense layer on the flattened image. All-zero weights when `seed` is empty.
Model make_linear(InputSpec input, std::size_t classes, std::optional<std::uint64_t> seed = std::nullopt);

struct TrainConfig {
  std::size_t epochs = 10;
  std::size_t batch_size = 32;
  float learning_rate = 0.01f;
  float momentum = 0.9f;
  float weight_decay = 0.0f;
  std::uint64_t seed = 1;

  /// Throws std::invalid_argument on zero epochs/batch or negative rates.
  void validate() const;
};

struct EpochStats {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  std::optional<double> heldout_accuracy;
};

struct TrainResult {
  Model model;
  std::vector<EpochStats> history;
};

/// Mini-batch SGD with momentum on softmax cross-entropy. The sample order is
/// reshuffled every epoch from `cfg.seed`; the last partial batch is kept.
/// Throws TrainingError when the loss turns non-finite.
TrainResult train(Model model, const LabeledDataset& ds, const TrainConfig& cfg,
                  const LabeledDataset* heldout = nullptr);

/// Fraction of images whose argmax prediction equals the label.
double evaluate(const Model& model, const LabeledDataset& ds);

/// Versioned little-endian model file with a trailing FNV-1a checksum.
void save_model(const Model& model, const std::filesystem::path& path);
Model load_model(const std::filesystem::path& path);

inline constexpr char kModelMagic[8] = {'U', 'A', 'P', 'G', 'M', 'O', 'D', 'L'};
inline constexpr std::uint32_t kModelFormatVersion = 1;

}  // namespace uapguard
