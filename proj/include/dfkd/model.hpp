#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "dfkd/tape.hpp"
#include "dfkd/tensor.hpp"

namespace dfkd {

enum class LayerKind {
  dense,
  conv,
  batchnorm,
  relu,
  tanh_act,
  upsample2x,
  global_avg_pool,
  reshape,
};

const char* layer_kind_name(LayerKind k);
LayerKind layer_kind_from_name(const std::string& name);

struct LayerDesc {
  LayerKind kind;
  std::size_t in = 0;      // dense in_dim / conv in_channels / bn channels
  std::size_t out = 0;     // dense out_dim / conv out_channels
  std::size_t ksize = 0;   // conv kernel size (square)
  std::size_t stride = 1;  // conv stride
  bool bias = false;       // dense/conv bias term
  std::vector<std::size_t> target;  // reshape target (h, w, c)
};

/// A sequential network. Generators map (N, latent_dim) latent vectors to
/// images; classifiers map (N, H, W, C) images to (N, num_classes) logits.
struct ModelSpec {
  std::string name;
  std::size_t in_h = 0, in_w = 0, in_c = 0;  // classifier input geometry
  std::size_t latent_dim = 0;                // generator input width (0 for classifiers)
  std::size_t num_classes = 0;               // classifier output width (0 for generators)
  std::vector<LayerDesc> layers;

  bool is_generator() const { return latent_dim > 0; }
};

/// Trainable tensors plus batch-norm running statistics, keyed by
/// "l<index>.<kind>.<field>" names derived from the layer list.
struct Params {
  std::map<std::string, Tensor> tensors;
  std::map<std::string, Tensor> running;
};

std::string param_name(std::size_t layer_index, const char* kind, const char* field);

/// Image generator: dense to 8*H*W units, reshape to (H/8, W/8, 512), three
/// blocks of [upsample2x, conv3x3, batchnorm, relu] with channels 256/128/64,
/// then conv3x3 to 3 channels, tanh, batchnorm. H and W must be multiples
/// of 8.
ModelSpec make_generator(std::size_t out_h, std::size_t out_w,
                         std::size_t latent_dim = 512);

/// Image classifier: depth blocks of [conv3x3, batchnorm, relu] with channels
/// width*2^i and stride 2 from the second block on, then global average
/// pooling and a dense layer to num_classes logits.
ModelSpec make_classifier(std::size_t in_h, std::size_t in_w, std::size_t in_c,
                          std::size_t width, std::size_t depth,
                          std::size_t num_classes);

/// Output shape of each layer given the spec's declared input; throws if any
/// layer is inconsistent with its predecessor. The batch dimension is
/// reported as 0.
std::vector<std::vector<std::size_t>> layer_output_shapes(const ModelSpec& spec);

std::vector<std::size_t> batchnorm_layer_indices(const ModelSpec& spec);

/// Running (mean, variance) of every batchnorm layer, in layer order.
std::vector<std::pair<Tensor, Tensor>> bn_running_moments(const ModelSpec& spec,
                                                          const Params& params);

/// He-normal initialization for dense/conv weights, zeros for biases and bn
/// shifts, ones for bn scales, (0, 1) for bn running statistics. Deterministic
/// in the seed.
Params init_params(const ModelSpec& spec, std::uint64_t seed);

std::size_t trainable_count(const Params& params);

enum class BnMode {
  train,  // normalize with batch statistics
  infer,  // normalize with running statistics
};

constexpr double kBnEpsilon = 1e-5;

/// Optional rewrites applied during a forward pass. on_param maps each weight
/// tensor before use; on_activation maps the flowing activation at the tap
/// points (network input, every post-relu output, final output).
struct ValueHooks {
  std::function<Tensor(const std::string& name, const Tensor&)> on_param;
  std::function<Tensor(std::size_t tap_index, const Tensor&)> on_activation;
};

struct ForwardResult {
  Tensor out;
  // Per batchnorm layer (in layer order): batch mean and biased batch
  // variance of the layer's input.
  std::vector<std::pair<Tensor, Tensor>> bn_moments;
  // Raw activations at tap points, recorded before any on_activation hook.
  std::vector<Tensor> taps;
};

/// Pure forward pass. Batch-norm layers use batch statistics in train mode
/// and running statistics in infer mode; running statistics are never
/// modified. bn_moments is filled only when want_moments is set, taps only
/// when want_taps is set.
ForwardResult forward(const ModelSpec& spec, const Params& params,
                      const Tensor& input, BnMode mode, bool want_moments = false,
                      bool want_taps = false, const ValueHooks* hooks = nullptr);

Tensor forward_logits(const ModelSpec& spec, const Params& params,
                      const Tensor& input, BnMode mode);

/// Exponential moving average update of running statistics from batch
/// moments: new = momentum * old + (1 - momentum) * batch.
void update_running_stats(const ModelSpec& spec, Params& params,
                          const std::vector<std::pair<Tensor, Tensor>>& bn_moments,
                          double momentum);

/// Node-level rewrites for tape forward passes, mirroring ValueHooks.
struct TapeHooks {
  std::function<int(Tape&, const std::string& name, int node)> on_param;
  std::function<int(Tape&, std::size_t tap_index, int node)> on_activation;
};

struct TapeForward {
  int out = -1;
  std::vector<int> bn_mean_nodes;  // batch moments of each bn layer's input
  std::vector<int> bn_var_nodes;
  std::map<std::string, int> param_nodes;
};

/// Forward pass on an autodiff tape. With bind_params the weights become
/// named parameter leaves (prefix + name); otherwise they are constants.
/// Batch moment nodes of every bn input are always recorded so statistics
/// losses can differentiate through them, whichever mode normalizes the
/// activations.
TapeForward forward_on_tape(Tape& tape, const ModelSpec& spec,
                            const Params& params, int input_node, BnMode mode,
                            bool bind_params, const std::string& prefix = "",
                            const TapeHooks* hooks = nullptr);

}  // namespace dfkd
