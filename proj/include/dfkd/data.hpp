#pragma once

#include <cstdint>
#include <vector>

#include "dfkd/io.hpp"
#include "dfkd/model.hpp"
#include "dfkd/quant.hpp"
#include "dfkd/tensor.hpp"

namespace dfkd {

struct Dataset {
  DatasetSplit train;
  DatasetSplit test;
  std::size_t num_classes = 0;
};

/// Synthetic image classification task: each class is a localized blob with
/// a class-specific color axis and ripple orientation. The blob sign flips
/// uniformly per sample and its position is random (so raw pixels carry no
/// linearly separable signal), with Gaussian noise per channel. Images are
/// (N, H, W, 3) in [-1, 1]; labels are one-hot rows. Classes are balanced to
/// within one sample and the whole dataset is a pure function of the seed.
Dataset make_synthetic_dataset(std::size_t height, std::size_t width,
                               std::size_t num_classes, std::size_t n_train,
                               std::size_t n_test, std::uint64_t seed);

/// Argmax of each one-hot row.
std::vector<int> label_indices(const Tensor& onehot);

double evaluate_accuracy(const ModelSpec& spec, const Params& params,
                         const Tensor& images, const Tensor& labels,
                         std::size_t batch_size = 256);

double evaluate_quantized_accuracy(const QuantizedModel& qm,
                                   const Tensor& images, const Tensor& labels,
                                   std::size_t batch_size = 256);

struct SupervisedConfig {
  std::size_t epochs = 30;
  std::size_t batch_size = 64;
  double lr = 0.05;
  double momentum = 0.9;
  double bn_momentum = 0.9;
  std::uint64_t seed = 0;
};

struct SupervisedMetrics {
  std::vector<double> train_loss;     // mean cross-entropy per epoch
  std::vector<double> test_accuracy;  // after each epoch
};

/// Cross-entropy training with Nesterov momentum and cosine-decayed learning
/// rate; batch-norm running statistics are updated every step.
SupervisedMetrics train_classifier(const ModelSpec& spec, Params& params,
                                   const DatasetSplit& train,
                                   const DatasetSplit& test,
                                   const SupervisedConfig& cfg);

}  // namespace dfkd
