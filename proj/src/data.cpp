#include "dfkd/data.hpp"

#include <cmath>
#include <numeric>
#include <stdexcept>

#include "dfkd/losses.hpp"
#include "dfkd/optim.hpp"
#include "dfkd/rng.hpp"
#include "dfkd/tape.hpp"

namespace dfkd {

namespace {

constexpr double kSignalAmplitude = 0.9;
constexpr double kPixelNoise = 0.2;
constexpr double kEnvelopeSigmaFrac = 0.16;  // blob envelope radius / image size

// Class pattern: a localized color blob. Each class owns a color axis in RGB
// space (Fibonacci-spread over the hemisphere, so axes stay well separated)
// plus a mild oriented ripple. The blob sign flips uniformly per sample and
// its center is drawn afresh each sample, so every class-conditional pixel
// mean is zero and no linear readout of raw pixels can separate the classes;
// a rectifying convolutional net recovers the color axis easily.
struct ClassPattern {
  double color[3];    // unit color axis
  double theta;       // ripple orientation
  double cycles;      // ripple cycles across the image
};

ClassPattern class_pattern(int k, std::size_t num_classes) {
  const double golden = (std::sqrt(5.0) - 1.0) / 2.0;
  const double z = (double(k) + 0.5) / double(num_classes);
  const double r = std::sqrt(1.0 - z * z);
  const double phi = 2.0 * M_PI * golden * double(k);
  ClassPattern p;
  p.color[0] = r * std::cos(phi);
  p.color[1] = r * std::sin(phi);
  p.color[2] = z;
  p.theta = M_PI * double(k) / double(num_classes);
  p.cycles = 2.0 + double(k % 3);
  return p;
}

DatasetSplit make_split(std::size_t height, std::size_t width,
                        std::size_t num_classes, std::size_t n, Rng rng) {
  DatasetSplit split;
  split.images = Tensor({n, height, width, 3});
  split.labels = Tensor({n, num_classes});

  // Balanced class list (round-robin), then shuffled.
  std::vector<int> classes(n);
  for (std::size_t i = 0; i < n; ++i) classes[i] = int(i % num_classes);
  rng.shuffle(classes);

  const double norm = double(std::max(height, width));
  const double sigma = kEnvelopeSigmaFrac * norm;
  for (std::size_t i = 0; i < n; ++i) {
    const int k = classes[i];
    split.labels.at2(i, std::size_t(k)) = 1.0f;
    const ClassPattern p = class_pattern(k, num_classes);
    const double sign = rng.uniform() < 0.5 ? -1.0 : 1.0;
    const double cy = rng.uniform(0.3, 0.7) * double(height);
    const double cx = rng.uniform(0.3, 0.7) * double(width);
    const double cs = std::cos(p.theta), sn = std::sin(p.theta);
    for (std::size_t h = 0; h < height; ++h)
      for (std::size_t w = 0; w < width; ++w) {
        const double dy = double(h) - cy;
        const double dx = double(w) - cx;
        const double envelope = std::exp(-(dx * dx + dy * dy) / (2 * sigma * sigma));
        const double u = (dx * cs + dy * sn) / norm;
        const double ripple = std::cos(2.0 * M_PI * p.cycles * u);
        const double blob = sign * kSignalAmplitude * envelope * ripple;
        for (std::size_t c = 0; c < 3; ++c) {
          const double v = blob * p.color[c] + kPixelNoise * rng.normal();
          split.images.at4(i, h, w, c) = float(std::min(std::max(v, -1.0), 1.0));
        }
      }
  }
  return split;
}

Tensor gather_rows(const Tensor& images, const std::vector<std::size_t>& idx) {
  std::vector<std::size_t> shape = images.shape;
  shape[0] = idx.size();
  Tensor out(shape);
  const std::size_t row = images.size() / images.dim(0);
  for (std::size_t i = 0; i < idx.size(); ++i)
    std::copy_n(images.data.begin() + std::ptrdiff_t(idx[i] * row), row,
                out.data.begin() + std::ptrdiff_t(i * row));
  return out;
}

}  // namespace

Dataset make_synthetic_dataset(std::size_t height, std::size_t width,
                               std::size_t num_classes, std::size_t n_train,
                               std::size_t n_test, std::uint64_t seed) {
  if (height == 0 || width == 0 || num_classes < 2 || n_train == 0 ||
      n_test == 0)
    throw std::invalid_argument(
        "make_synthetic_dataset: need positive sizes and >= 2 classes");
  const Rng master(seed);
  Dataset ds;
  ds.num_classes = num_classes;
  ds.train = make_split(height, width, num_classes, n_train, master.split(1));
  ds.test = make_split(height, width, num_classes, n_test, master.split(2));
  return ds;
}

std::vector<int> label_indices(const Tensor& onehot) {
  if (onehot.rank() != 2)
    throw std::invalid_argument("label_indices: labels must be (N, K), got " +
                                onehot.shape_str());
  const std::size_t n = onehot.dim(0), k = onehot.dim(1);
  std::vector<int> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t best = 0;
    for (std::size_t j = 1; j < k; ++j)
      if (onehot.at2(i, j) > onehot.at2(i, best)) best = j;
    out[i] = int(best);
  }
  return out;
}

namespace {

template <class LogitsFn>
double chunked_accuracy(const Tensor& images, const Tensor& labels,
                        std::size_t batch_size, LogitsFn&& logits_of) {
  if (images.dim(0) != labels.dim(0))
    throw std::invalid_argument("evaluate: images and labels disagree on N");
  if (batch_size == 0)
    throw std::invalid_argument("evaluate: batch_size must be >= 1");
  const std::vector<int> y = label_indices(labels);
  const std::size_t n = images.dim(0);
  std::size_t correct = 0;
  for (std::size_t start = 0; start < n; start += batch_size) {
    const std::size_t stop = std::min(n, start + batch_size);
    std::vector<std::size_t> idx(stop - start);
    std::iota(idx.begin(), idx.end(), start);
    const Tensor logits = logits_of(gather_rows(images, idx));
    const std::vector<int> part(y.begin() + std::ptrdiff_t(start),
                                y.begin() + std::ptrdiff_t(stop));
    correct += std::size_t(std::lround(accuracy(logits, part) * double(part.size())));
  }
  return double(correct) / double(n);
}

}  // namespace

double evaluate_accuracy(const ModelSpec& spec, const Params& params,
                         const Tensor& images, const Tensor& labels,
                         std::size_t batch_size) {
  return chunked_accuracy(images, labels, batch_size, [&](const Tensor& x) {
    return forward(spec, params, x, BnMode::infer).out;
  });
}

double evaluate_quantized_accuracy(const QuantizedModel& qm,
                                   const Tensor& images, const Tensor& labels,
                                   std::size_t batch_size) {
  return chunked_accuracy(images, labels, batch_size, [&](const Tensor& x) {
    return quantized_logits(qm, x);
  });
}

SupervisedMetrics train_classifier(const ModelSpec& spec, Params& params,
                                   const DatasetSplit& train,
                                   const DatasetSplit& test,
                                   const SupervisedConfig& cfg) {
  const std::size_t n = train.images.dim(0);
  if (cfg.batch_size == 0 || cfg.batch_size > n)
    throw std::invalid_argument(
        "train_classifier: batch_size must be in [1, n_train]");
  if (cfg.epochs == 0)
    throw std::invalid_argument("train_classifier: epochs must be >= 1");

  const std::vector<int> y = label_indices(train.labels);
  const std::size_t batches = n / cfg.batch_size;  // drop the ragged tail
  const std::size_t total_iters = cfg.epochs * batches;

  Rng shuffle_rng(splitmix64(cfg.seed ^ 0x7ea9));
  NesterovState opt;
  SupervisedMetrics metrics;
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);

  std::size_t iter = 0;
  for (std::size_t e = 0; e < cfg.epochs; ++e) {
    shuffle_rng.shuffle(order);
    double loss_sum = 0;
    for (std::size_t b = 0; b < batches; ++b, ++iter) {
      const std::vector<std::size_t> idx(
          order.begin() + std::ptrdiff_t(b * cfg.batch_size),
          order.begin() + std::ptrdiff_t((b + 1) * cfg.batch_size));
      std::vector<int> yb(idx.size());
      for (std::size_t i = 0; i < idx.size(); ++i) yb[i] = y[idx[i]];

      Tape tape;
      const int x = tape.input(gather_rows(train.images, idx));
      const TapeForward tf =
          forward_on_tape(tape, spec, params, x, BnMode::train, true);
      const int loss = cross_entropy_node(tape, tf.out, yb);
      tape.backward(loss);
      const double lv = tape.value(loss).data.at(0);
      if (!std::isfinite(lv))
        throw std::runtime_error("train_classifier: loss diverged at iteration " +
                                 std::to_string(iter));
      loss_sum += lv;
      nesterov_step(params.tensors, tape.param_gradients(), opt, cfg.momentum,
                    cosine_lr(iter, total_iters, cfg.lr));
      std::vector<std::pair<Tensor, Tensor>> moments;
      for (std::size_t k = 0; k < tf.bn_mean_nodes.size(); ++k)
        moments.emplace_back(tape.value(tf.bn_mean_nodes[k]),
                             tape.value(tf.bn_var_nodes[k]));
      update_running_stats(spec, params, moments, cfg.bn_momentum);
    }
    metrics.train_loss.push_back(loss_sum / double(batches));
    metrics.test_accuracy.push_back(
        evaluate_accuracy(spec, params, test.images, test.labels));
  }
  return metrics;
}

}  // namespace dfkd
