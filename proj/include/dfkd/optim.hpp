#pragma once

#include <cstddef>
#include <map>
#include <string>

#include "dfkd/tensor.hpp"

namespace dfkd {

/// Half-cosine decay from base_lr at step 0 to 0 at step total_steps.
double cosine_lr(std::size_t step, std::size_t total_steps, double base_lr);

struct AdamConfig {
  double beta1 = 0.5;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// First and second moment estimates per parameter, lazily initialized to
/// zeros; step counts the updates applied for bias correction.
struct AdamState {
  std::map<std::string, Tensor> m;
  std::map<std::string, Tensor> v;
  std::size_t step = 0;
};

/// One bias-corrected Adam update of every parameter present in grads.
/// Throws if a gradient is non-finite or names an unknown parameter.
void adam_step(std::map<std::string, Tensor>& params,
               const std::map<std::string, Tensor>& grads, AdamState& state,
               const AdamConfig& cfg, double lr);

struct NesterovState {
  std::map<std::string, Tensor> velocity;
};

/// One Nesterov momentum update: v <- mu v - lr g, p <- p + mu v - lr g.
void nesterov_step(std::map<std::string, Tensor>& params,
                   const std::map<std::string, Tensor>& grads,
                   NesterovState& state, double momentum, double lr);

}  // namespace dfkd
