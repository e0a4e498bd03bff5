#include "dfkd/optim.hpp"

#include <cmath>
#include <stdexcept>

namespace dfkd {

namespace {

Tensor& slot(std::map<std::string, Tensor>& store, const std::string& name,
             const Tensor& like) {
  auto it = store.find(name);
  if (it == store.end()) it = store.emplace(name, Tensor(like.shape)).first;
  return it->second;
}

Tensor& target_param(std::map<std::string, Tensor>& params,
                     const std::string& name, const Tensor& grad,
                     const char* where) {
  auto it = params.find(name);
  if (it == params.end())
    throw std::runtime_error(std::string(where) + ": unknown parameter " + name);
  if (!grad.all_finite())
    throw std::runtime_error(std::string(where) + ": non-finite gradient for " +
                             name);
  require_same_shape(it->second, grad, where);
  return it->second;
}

}  // namespace

double cosine_lr(std::size_t step, std::size_t total_steps, double base_lr) {
  if (total_steps == 0)
    throw std::invalid_argument("cosine_lr: total_steps must be > 0");
  if (step > total_steps)
    throw std::invalid_argument("cosine_lr: step " + std::to_string(step) +
                                " past total " + std::to_string(total_steps));
  constexpr double pi = 3.14159265358979323846;
  return base_lr * 0.5 * (1.0 + std::cos(pi * double(step) / double(total_steps)));
}

void adam_step(std::map<std::string, Tensor>& params,
               const std::map<std::string, Tensor>& grads, AdamState& state,
               const AdamConfig& cfg, double lr) {
  state.step += 1;
  const double c1 = 1.0 - std::pow(cfg.beta1, double(state.step));
  const double c2 = 1.0 - std::pow(cfg.beta2, double(state.step));
  for (const auto& [name, g] : grads) {
    Tensor& p = target_param(params, name, g, "adam");
    Tensor& m = slot(state.m, name, p);
    Tensor& v = slot(state.v, name, p);
    for (std::size_t i = 0; i < p.size(); ++i) {
      m[i] = float(cfg.beta1) * m[i] + float(1.0 - cfg.beta1) * g[i];
      v[i] = float(cfg.beta2) * v[i] + float(1.0 - cfg.beta2) * g[i] * g[i];
      const double mhat = double(m[i]) / c1;
      const double vhat = double(v[i]) / c2;
      p[i] -= float(lr * mhat / (std::sqrt(vhat) + cfg.eps));
    }
  }
}

void nesterov_step(std::map<std::string, Tensor>& params,
                   const std::map<std::string, Tensor>& grads,
                   NesterovState& state, double momentum, double lr) {
  for (const auto& [name, g] : grads) {
    Tensor& p = target_param(params, name, g, "nesterov");
    Tensor& v = slot(state.velocity, name, p);
    for (std::size_t i = 0; i < p.size(); ++i) {
      v[i] = float(momentum) * v[i] - float(lr) * g[i];
      p[i] += float(momentum) * v[i] - float(lr) * g[i];
    }
  }
}

}  // namespace dfkd
