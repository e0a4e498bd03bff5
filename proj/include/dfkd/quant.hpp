#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "dfkd/model.hpp"
#include "dfkd/tape.hpp"
#include "dfkd/tensor.hpp"
#include "dfkd/train.hpp"

namespace dfkd {

/// Asymmetric affine quantizer: code = clamp(round(x / scale) + zero_point).
/// min/max are the real values reachable by codes 0 and 2^bits - 1 after the
/// range was widened to include zero.
struct QuantParams {
  double scale = 1.0;
  int zero_point = 0;
  int bits = 8;
  double min = 0.0;
  double max = 0.0;
};

/// Derives quantizer parameters from an observed real range. The range is
/// widened to include zero so that zero is always exactly representable;
/// a degenerate range maps to scale 1, zero_point 0.
QuantParams compute_qparams(double range_min, double range_max, int bits);

/// Rounds to codes with round-half-to-even and saturating clamp.
TensorT<std::uint8_t> quantize(const Tensor& x, const QuantParams& q);

Tensor dequantize(const TensorT<std::uint8_t>& codes, const QuantParams& q);

/// quantize-then-dequantize in one pass over float storage.
Tensor fake_quant(const Tensor& x, const QuantParams& q);

/// Fake quantization with a straight-through estimator: the gradient passes
/// unchanged where the input lies inside the representable range and is
/// zeroed where the quantizer saturates.
int fake_quant_node(Tape& t, int a, const QuantParams& q);

/// Model with every batchnorm layer absorbed into the preceding convolution
/// (using the running statistics), so inference is a pure conv/relu pipeline.
struct FoldedModel {
  ModelSpec spec;
  Params params;
};

FoldedModel fold_batchnorm(const ModelSpec& spec, const Params& params);

struct QuantConfig {
  int weight_bits = 8;
  int activation_bits = 8;
};

/// Per-tensor quantizers for every weight matrix/kernel (biases excluded),
/// ranges taken from the tensors themselves.
std::map<std::string, QuantParams> weight_qparams(const Params& params,
                                                  int bits);

/// Observed (min, max) per activation tap: network input, every post-relu
/// activation, and the output logits, pooled over the given batches. When
/// weight_q is given the pass runs with fake-quantized weights so the ranges
/// match what the quantized network will see.
std::vector<std::pair<double, double>> activation_ranges(
    const ModelSpec& spec, const Params& params,
    const std::vector<Tensor>& batches,
    const std::map<std::string, QuantParams>* weight_q = nullptr);

std::vector<QuantParams> activation_qparams(
    const std::vector<std::pair<double, double>>& ranges, int bits);

/// A quantized classifier: folded float master weights plus the quantizers
/// applied to weights and activation taps during inference.
struct QuantizedModel {
  ModelSpec spec;
  Params params;
  QuantConfig config;
  std::map<std::string, QuantParams> weight_q;
  std::vector<QuantParams> activation_q;
};

/// Inference with weights and tap activations passed through their fake
/// quantizers.
Tensor quantized_logits(const QuantizedModel& qm, const Tensor& input);

/// The same computation as a differentiable graph; straight-through weight
/// quantizers read their range from the current weight values so training
/// updates the float masters.
TapeForward quantized_forward_on_tape(Tape& tape, const QuantizedModel& qm,
                                      const Params& params, int input,
                                      bool bind_params);

/// Images drawn from the generator (batch-statistic normalization, like
/// during training), for calibration and inspection.
std::vector<Tensor> sample_generator_batches(const ModelSpec& gen_spec,
                                             const Params& gen_params,
                                             std::size_t n_batches,
                                             std::size_t batch_size,
                                             std::uint64_t seed);

/// Post-training quantization without data: weight ranges from the weights,
/// activation ranges calibrated on generator samples.
QuantizedModel df_quantize(const ModelSpec& teacher_spec,
                           const Params& teacher_params,
                           const ModelSpec& gen_spec, const Params& gen_params,
                           const QuantConfig& qcfg, std::size_t n_batches = 8,
                           std::size_t batch_size = 64, std::uint64_t seed = 0);

/// Refreshes the activation quantizers from new calibration batches.
void recalibrate(QuantizedModel& qm, const std::vector<Tensor>& batches);

struct QatResult {
  QuantizedModel model;
  std::vector<Params> generators;
  RunMetrics metrics;
};

/// Quantization-aware distillation without data: the student starts as a
/// folded fake-quantized copy of the teacher and is trained by the full
/// adversarial loop; activation ranges are recalibrated from the current
/// generators after every epoch. warm_generators may be empty to start from
/// scratch. The evaluator receives the up-to-date quantized student.
QatResult df_qat_kd(const ModelSpec& teacher_spec, const Params& teacher_params,
                    const ModelSpec& gen_spec,
                    std::vector<Params> warm_generators,
                    const QuantConfig& qcfg, const TrainConfig& cfg,
                    std::size_t calib_batches, std::size_t calib_batch_size,
                    const std::function<double(const QuantizedModel&)>& evaluate);

}  // namespace dfkd
