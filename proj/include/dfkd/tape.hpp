#pragma once

#include <cmath>
#include <functional>
#include <map>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "dfkd/kernels.hpp"
#include "dfkd/tensor.hpp"

namespace dfkd {

using kernels::Padding;

/// Reverse-mode autodiff tape. Nodes are appended in execution order (so the
/// graph is topologically sorted by construction); each node stores its output
/// tensor and a closure that scatters the node's output gradient onto its
/// inputs. backward() makes one reverse sweep, visiting each node once.
///
/// T is float for training and double for finite-difference checks.
template <class T>
class TapeT {
 public:
  using Tensor = TensorT<T>;
  using BackwardFn = std::function<void(TapeT&, int)>;

  struct Node {
    const char* op;
    std::vector<int> inputs;
    Tensor value;
    BackwardFn backward;  // null for leaves
  };

  int size() const { return int(nodes_.size()); }

  const Tensor& value(int id) const { return nodes_.at(id).value; }
  const Node& node(int id) const { return nodes_.at(id); }

  /// Leaf holding a constant (gradients accumulate but are not reported).
  int input(Tensor v) { return push("input", {}, std::move(v), nullptr); }

  /// Leaf bound to a parameter name; its gradient is reported by
  /// param_gradients(). Names must be unique per tape.
  int param(const std::string& name, Tensor v) {
    if (params_.count(name))
      throw std::invalid_argument("tape: duplicate parameter name " + name);
    int id = push("param", {}, std::move(v), nullptr);
    params_.emplace(name, id);
    return id;
  }

  const std::map<std::string, int>& params() const { return params_; }

  // ---- elementwise binary (identical shapes) ----

  int add(int a, int b) {
    const Tensor &x = value(a), &y = value(b);
    require_same_shape(x, y, "add");
    Tensor out = x;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += y[i];
    return push("add", {a, b}, std::move(out), [a, b](TapeT& t, int self) {
      const Tensor& g = t.grad_of(self);
      t.accumulate(a, g);
      t.accumulate(b, g);
    });
  }

  int sub(int a, int b) {
    const Tensor &x = value(a), &y = value(b);
    require_same_shape(x, y, "sub");
    Tensor out = x;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] -= y[i];
    return push("sub", {a, b}, std::move(out), [a, b](TapeT& t, int self) {
      const Tensor& g = t.grad_of(self);
      t.accumulate(a, g);
      Tensor& gb = t.grad_buf(b);
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
    });
  }

  int mul(int a, int b) {
    const Tensor &x = value(a), &y = value(b);
    require_same_shape(x, y, "mul");
    Tensor out = x;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] *= y[i];
    return push("mul", {a, b}, std::move(out), [a, b](TapeT& t, int self) {
      const Tensor& g = t.grad_of(self);
      const Tensor &x = t.value(a), &y = t.value(b);
      Tensor &ga = t.grad_buf(a), &gb = t.grad_buf(b);
      for (std::size_t i = 0; i < g.size(); ++i) {
        ga[i] += g[i] * y[i];
        gb[i] += g[i] * x[i];
      }
    });
  }

  // ---- scalar-argument elementwise ----

  int add_scalar(int a, double c) {
    Tensor out = value(a);
    for (auto& v : out.data) v += T(c);
    return push("add_scalar", {a}, std::move(out), [a](TapeT& t, int self) {
      t.accumulate(a, t.grad_of(self));
    });
  }

  int mul_scalar(int a, double c) {
    Tensor out = value(a);
    for (auto& v : out.data) v *= T(c);
    return push("mul_scalar", {a}, std::move(out), [a, c](TapeT& t, int self) {
      const Tensor& g = t.grad_of(self);
      Tensor& ga = t.grad_buf(a);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += T(c) * g[i];
    });
  }

  // ---- elementwise unary ----

  int relu(int a) {
    Tensor out = value(a);
    for (auto& v : out.data) v = v > T(0) ? v : T(0);
    // Subgradient at exactly 0 is 0.
    return push("relu", {a}, std::move(out), [a](TapeT& t, int self) {
      const Tensor& g = t.grad_of(self);
      const Tensor& x = t.value(a);
      Tensor& ga = t.grad_buf(a);
      for (std::size_t i = 0; i < g.size(); ++i)
        if (x[i] > T(0)) ga[i] += g[i];
    });
  }

  int tanh_(int a) {
    Tensor out = value(a);
    for (auto& v : out.data) v = std::tanh(v);
    return push("tanh", {a}, std::move(out), [a](TapeT& t, int self) {
      const Tensor& g = t.grad_of(self);
      const Tensor& y = t.value(self);
      Tensor& ga = t.grad_buf(a);
      for (std::size_t i = 0; i < g.size(); ++i)
        ga[i] += g[i] * (T(1) - y[i] * y[i]);
    });
  }

  int square(int a) {
    Tensor out = value(a);
    for (auto& v : out.data) v = v * v;
    return push("square", {a}, std::move(out), [a](TapeT& t, int self) {
      const Tensor& g = t.grad_of(self);
      const Tensor& x = t.value(a);
      Tensor& ga = t.grad_buf(a);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += T(2) * x[i] * g[i];
    });
  }

  int log_(int a) {
    Tensor out = value(a);
    for (auto& v : out.data) v = std::log(v);
    return push("log", {a}, std::move(out), [a](TapeT& t, int self) {
      const Tensor& g = t.grad_of(self);
      const Tensor& x = t.value(a);
      Tensor& ga = t.grad_buf(a);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] / x[i];
    });
  }

  int exp_(int a) {
    Tensor out = value(a);
    for (auto& v : out.data) v = std::exp(v);
    return push("exp", {a}, std::move(out), [a](TapeT& t, int self) {
      const Tensor& g = t.grad_of(self);
      const Tensor& y = t.value(self);
      Tensor& ga = t.grad_buf(a);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * y[i];
    });
  }

  /// x*log(x) with the 0*log(0) = 0 convention; subgradient 0 at x <= 0.
  int xlogx(int a) {
    Tensor out = value(a);
    for (auto& v : out.data) v = v > T(0) ? v * std::log(v) : T(0);
    return push("xlogx", {a}, std::move(out), [a](TapeT& t, int self) {
      const Tensor& g = t.grad_of(self);
      const Tensor& x = t.value(a);
      Tensor& ga = t.grad_buf(a);
      for (std::size_t i = 0; i < g.size(); ++i)
        if (x[i] > T(0)) ga[i] += g[i] * (std::log(x[i]) + T(1));
    });
  }

  /// max(x, floor); gradient passes only where x > floor.
  int clamp_min(int a, double floor) {
    Tensor out = value(a);
    for (auto& v : out.data) v = v > T(floor) ? v : T(floor);
    return push("clamp_min", {a}, std::move(out), [a, floor](TapeT& t, int self) {
      const Tensor& g = t.grad_of(self);
      const Tensor& x = t.value(a);
      Tensor& ga = t.grad_buf(a);
      for (std::size_t i = 0; i < g.size(); ++i)
        if (x[i] > T(floor)) ga[i] += g[i];
    });
  }

  /// Custom elementwise op; vjp(x, y, g, gx) adds the input gradient into gx.
  int unary(const char* op, int a, Tensor out,
            std::function<void(const Tensor& x, const Tensor& y, const Tensor& g,
                               Tensor& gx)>
                vjp) {
    return push(op, {a}, std::move(out),
                [a, vjp = std::move(vjp)](TapeT& t, int self) {
                  vjp(t.value(a), t.value(self), t.grad_of(self), t.grad_buf(a));
                });
  }

  // ---- shape ops ----

  int reshape(int a, std::vector<std::size_t> shape) {
    const Tensor& x = value(a);
    if (Tensor::count(shape) != x.size())
      throw std::invalid_argument("reshape: cannot view " + x.shape_str() +
                                  " as " + Tensor(shape).shape_str());
    Tensor out(std::move(shape), x.data);
    return push("reshape", {a}, std::move(out), [a](TapeT& t, int self) {
      const Tensor& g = t.grad_of(self);
      Tensor& ga = t.grad_buf(a);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    });
  }

  // ---- linear algebra ----

  int matmul(int a, int b) {
    const Tensor &x = value(a), &y = value(b);
    if (x.rank() != 2 || y.rank() != 2 || x.dim(1) != y.dim(0))
      throw std::invalid_argument("matmul: incompatible shapes " + x.shape_str() +
                                  " and " + y.shape_str());
    Tensor out({x.dim(0), y.dim(1)});
    kernels::gemm(x.data.data(), y.data.data(), out.data.data(), x.dim(0),
                  x.dim(1), y.dim(1));
    return push("matmul", {a, b}, std::move(out), [a, b](TapeT& t, int self) {
      const Tensor& g = t.grad_of(self);
      const Tensor &x = t.value(a), &y = t.value(b);
      kernels::gemm_nt(g.data.data(), y.data.data(), t.grad_buf(a).data.data(),
                       x.dim(0), y.dim(1), x.dim(1), true);
      kernels::gemm_tn(x.data.data(), g.data.data(), t.grad_buf(b).data.data(),
                       x.dim(1), x.dim(0), y.dim(1), true);
    });
  }

  /// x (N,K) + row vector v (K), broadcast over rows.
  int add_rowvec(int a, int b) {
    const Tensor &x = value(a), &v = value(b);
    if (x.rank() != 2 || v.rank() != 1 || v.dim(0) != x.dim(1))
      throw std::invalid_argument("add_rowvec: incompatible shapes " +
                                  x.shape_str() + " and " + v.shape_str());
    Tensor out = x;
    const std::size_t n = x.dim(0), k = x.dim(1);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < k; ++j) out.at2(i, j) += v[j];
    return push("add_rowvec", {a, b}, std::move(out), [a, b](TapeT& t, int self) {
      const Tensor& g = t.grad_of(self);
      t.accumulate(a, g);
      Tensor& gv = t.grad_buf(b);
      const std::size_t n = g.dim(0), k = g.dim(1);
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < k; ++j) gv[j] += g.at2(i, j);
    });
  }

  /// x (N,H,W,C) + channel vector v (C).
  int add_chanvec(int a, int b) {
    const Tensor &x = value(a), &v = value(b);
    if (x.rank() != 4 || v.rank() != 1 || v.dim(0) != x.dim(3))
      throw std::invalid_argument("add_chanvec: incompatible shapes " +
                                  x.shape_str() + " and " + v.shape_str());
    Tensor out = x;
    const std::size_t m = x.size() / x.dim(3), c = x.dim(3);
    for (std::size_t p = 0; p < m; ++p)
      for (std::size_t ch = 0; ch < c; ++ch) out[p * c + ch] += v[ch];
    return push("add_chanvec", {a, b}, std::move(out), [a, b](TapeT& t, int self) {
      const Tensor& g = t.grad_of(self);
      t.accumulate(a, g);
      Tensor& gv = t.grad_buf(b);
      const std::size_t c = g.dim(3), m = g.size() / c;
      for (std::size_t p = 0; p < m; ++p)
        for (std::size_t ch = 0; ch < c; ++ch) gv[ch] += g[p * c + ch];
    });
  }

  // ---- reductions ----

  int sum_all(int a) {
    const Tensor& x = value(a);
    double s = 0;
    for (T v : x.data) s += double(v);
    return push("sum_all", {a}, Tensor::scalar(T(s)), [a](TapeT& t, int self) {
      const T g = t.grad_of(self)[0];
      Tensor& ga = t.grad_buf(a);
      for (auto& v : ga.data) v += g;
    });
  }

  int mean_all(int a) {
    const Tensor& x = value(a);
    double s = 0;
    for (T v : x.data) s += double(v);
    const std::size_t n = x.size();
    return push("mean_all", {a}, Tensor::scalar(T(s / double(n))),
                [a, n](TapeT& t, int self) {
                  const T g = t.grad_of(self)[0] / T(n);
                  Tensor& ga = t.grad_buf(a);
                  for (auto& v : ga.data) v += g;
                });
  }

  /// (N,K) -> (N): sum over each row.
  int row_sum(int a) {
    const Tensor& x = value(a);
    if (x.rank() != 2)
      throw std::invalid_argument("row_sum: need rank-2 input, got " +
                                  x.shape_str());
    const std::size_t n = x.dim(0), k = x.dim(1);
    Tensor out({n});
    for (std::size_t i = 0; i < n; ++i) {
      double s = 0;
      for (std::size_t j = 0; j < k; ++j) s += double(x.at2(i, j));
      out[i] = T(s);
    }
    return push("row_sum", {a}, std::move(out), [a](TapeT& t, int self) {
      const Tensor& g = t.grad_of(self);
      Tensor& ga = t.grad_buf(a);
      const std::size_t n = ga.dim(0), k = ga.dim(1);
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < k; ++j) ga.at2(i, j) += g[i];
    });
  }

  /// (N,K) -> (K): mean over the batch axis.
  int col_mean(int a) {
    const Tensor& x = value(a);
    if (x.rank() != 2)
      throw std::invalid_argument("col_mean: need rank-2 input, got " +
                                  x.shape_str());
    const std::size_t n = x.dim(0), k = x.dim(1);
    Tensor out({k});
    for (std::size_t j = 0; j < k; ++j) {
      double s = 0;
      for (std::size_t i = 0; i < n; ++i) s += double(x.at2(i, j));
      out[j] = T(s / double(n));
    }
    return push("col_mean", {a}, std::move(out), [a](TapeT& t, int self) {
      const Tensor& g = t.grad_of(self);
      Tensor& ga = t.grad_buf(a);
      const std::size_t n = ga.dim(0), k = ga.dim(1);
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < k; ++j) ga.at2(i, j) += g[j] / T(n);
    });
  }

  /// NHWC -> (C): per-channel mean over N,H,W.
  int channel_mean(int a) {
    Tensor out = kernels::channel_mean(value(a));
    return push("channel_mean", {a}, std::move(out), [a](TapeT& t, int self) {
      const Tensor& g = t.grad_of(self);
      Tensor& ga = t.grad_buf(a);
      const std::size_t c = ga.dim(3), m = ga.size() / c;
      for (std::size_t p = 0; p < m; ++p)
        for (std::size_t ch = 0; ch < c; ++ch) ga[p * c + ch] += g[ch] / T(m);
    });
  }

  /// NHWC -> (C): per-channel biased variance over N,H,W.
  /// d var_c / d x_p = 2 (x_p - mean_c) / M.
  int channel_var(int a) {
    const Tensor& x = value(a);
    Tensor mean = kernels::channel_mean(x);
    Tensor out = kernels::channel_var(x, mean);
    return push("channel_var", {a}, std::move(out),
                [a, mean = std::move(mean)](TapeT& t, int self) {
                  const Tensor& g = t.grad_of(self);
                  const Tensor& x = t.value(a);
                  Tensor& ga = t.grad_buf(a);
                  const std::size_t c = ga.dim(3), m = ga.size() / c;
                  for (std::size_t p = 0; p < m; ++p)
                    for (std::size_t ch = 0; ch < c; ++ch)
                      ga[p * c + ch] += g[ch] * T(2) * (x[p * c + ch] - mean[ch]) / T(m);
                });
  }

  // ---- structured ops ----

  int conv2d(int x, int k, std::size_t stride, Padding pad) {
    const Tensor &xin = value(x), &ker = value(k);
    kernels::Conv2dDims d = kernels::conv2d_dims(xin, ker, stride, pad);
    Tensor out = kernels::conv2d_forward(xin, ker, d);
    return push("conv2d", {x, k}, std::move(out), [x, k, d](TapeT& t, int self) {
      kernels::conv2d_backward(t.value(x), t.value(k), t.grad_of(self), d,
                               &t.grad_buf(x), &t.grad_buf(k));
    });
  }

  int upsample2x(int a) {
    Tensor out = kernels::upsample2x_forward(value(a));
    return push("upsample2x", {a}, std::move(out), [a](TapeT& t, int self) {
      kernels::upsample2x_backward(t.grad_of(self), t.grad_buf(a));
    });
  }

  int avgpool2x2(int a) {
    Tensor out = kernels::avgpool2x2_forward(value(a));
    return push("avgpool2x2", {a}, std::move(out), [a](TapeT& t, int self) {
      kernels::avgpool2x2_backward(t.grad_of(self), t.grad_buf(a));
    });
  }

  int global_avg_pool(int a) {
    Tensor out = kernels::global_avg_pool_forward(value(a));
    return push("global_avg_pool", {a}, std::move(out), [a](TapeT& t, int self) {
      kernels::global_avg_pool_backward(t.grad_of(self), t.grad_buf(a));
    });
  }

  /// Batch-norm normalization y = gamma * (x - mean) / sqrt(var + eps) + beta
  /// with the normalization statistics supplied as nodes. With the batch
  /// moment nodes of x this is train-mode batch norm (moment backward paths
  /// complete the standard fused gradient); with constant leaves holding
  /// running statistics it is inference-mode batch norm.
  int bn_apply(int x, int gamma, int beta, int mean, int var, double eps) {
    const Tensor& xin = value(x);
    if (xin.rank() != 4)
      throw std::invalid_argument("bn_apply: input must be NHWC, got " +
                                  xin.shape_str());
    if (eps <= 0) throw std::invalid_argument("bn_apply: epsilon must be > 0");
    const std::size_t c = xin.dim(3), m = xin.size() / c;
    if (m == 0) throw std::invalid_argument("bn_apply: zero batch size");
    const Tensor &gm = value(gamma), &bt = value(beta), &mu = value(mean),
                 &vr = value(var);
    for (const Tensor* v : {&gm, &bt, &mu, &vr})
      if (v->rank() != 1 || v->dim(0) != c)
        throw std::invalid_argument("bn_apply: per-channel input has shape " +
                                    v->shape_str() + ", expected [" +
                                    std::to_string(c) + "]");
    std::vector<T> inv(c);
    for (std::size_t ch = 0; ch < c; ++ch)
      inv[ch] = T(1) / std::sqrt(vr[ch] + T(eps));
    Tensor out = xin;
    for (std::size_t p = 0; p < m; ++p)
      for (std::size_t ch = 0; ch < c; ++ch)
        out[p * c + ch] = gm[ch] * (out[p * c + ch] - mu[ch]) * inv[ch] + bt[ch];
    return push(
        "bn_apply", {x, gamma, beta, mean, var}, std::move(out),
        [x, gamma, beta, mean, var, inv = std::move(inv)](TapeT& t, int self) {
          const Tensor& g = t.grad_of(self);
          const Tensor& xin = t.value(x);
          const Tensor &gm = t.value(gamma), &mu = t.value(mean);
          const std::size_t c = xin.dim(3), m = xin.size() / c;
          Tensor &gx = t.grad_buf(x), &ggm = t.grad_buf(gamma),
                 &gbt = t.grad_buf(beta), &gmu = t.grad_buf(mean),
                 &gvr = t.grad_buf(var);
          std::vector<double> sum_g(c, 0.0), sum_gxc(c, 0.0);
          for (std::size_t p = 0; p < m; ++p)
            for (std::size_t ch = 0; ch < c; ++ch) {
              const std::size_t i = p * c + ch;
              sum_g[ch] += double(g[i]);
              sum_gxc[ch] += double(g[i]) * double(xin[i] - mu[ch]);
              gx[i] += g[i] * gm[ch] * inv[ch];
            }
          for (std::size_t ch = 0; ch < c; ++ch) {
            ggm[ch] += T(sum_gxc[ch] * double(inv[ch]));
            gbt[ch] += T(sum_g[ch]);
            gmu[ch] += T(-double(gm[ch]) * double(inv[ch]) * sum_g[ch]);
            gvr[ch] += T(-0.5 * double(gm[ch]) * double(inv[ch]) *
                         double(inv[ch]) * double(inv[ch]) * sum_gxc[ch]);
          }
        });
  }

  /// Temperature softmax over rows of (N,K) with max-subtraction; returns
  /// {probs, logprobs}.
  std::pair<int, int> softmax_logs(int a, double temperature) {
    if (temperature <= 0)
      throw std::invalid_argument("softmax: temperature must be > 0");
    const Tensor& x = value(a);
    if (x.rank() != 2)
      throw std::invalid_argument("softmax: need rank-2 logits, got " +
                                  x.shape_str());
    if (!x.all_finite())
      throw std::invalid_argument("softmax: non-finite input logits");
    const std::size_t n = x.dim(0), k = x.dim(1);
    Tensor lp({n, k}), p({n, k});
    for (std::size_t i = 0; i < n; ++i) {
      T mx = x.at2(i, 0) / T(temperature);
      for (std::size_t j = 1; j < k; ++j)
        mx = std::max(mx, x.at2(i, j) / T(temperature));
      double z = 0;
      for (std::size_t j = 0; j < k; ++j)
        z += std::exp(double(x.at2(i, j) / T(temperature) - mx));
      const T lz = T(std::log(z));
      for (std::size_t j = 0; j < k; ++j) {
        lp.at2(i, j) = x.at2(i, j) / T(temperature) - mx - lz;
        p.at2(i, j) = std::exp(lp.at2(i, j));
      }
    }
    const double tau = temperature;
    int pid = push("softmax_probs", {a}, std::move(p),
                   [a, tau](TapeT& t, int self) {
                     const Tensor& g = t.grad_of(self);
                     const Tensor& pv = t.value(self);
                     Tensor& ga = t.grad_buf(a);
                     const std::size_t n = g.dim(0), k = g.dim(1);
                     for (std::size_t i = 0; i < n; ++i) {
                       double dot = 0;
                       for (std::size_t j = 0; j < k; ++j)
                         dot += double(g.at2(i, j)) * double(pv.at2(i, j));
                       for (std::size_t j = 0; j < k; ++j)
                         ga.at2(i, j) += T((double(g.at2(i, j)) - dot) *
                                           double(pv.at2(i, j)) / tau);
                     }
                   });
    int lpid = push("softmax_logprobs", {a}, std::move(lp),
                    [a, pid, tau](TapeT& t, int self) {
                      const Tensor& g = t.grad_of(self);
                      const Tensor& pv = t.value(pid);
                      Tensor& ga = t.grad_buf(a);
                      const std::size_t n = g.dim(0), k = g.dim(1);
                      for (std::size_t i = 0; i < n; ++i) {
                        double gsum = 0;
                        for (std::size_t j = 0; j < k; ++j)
                          gsum += double(g.at2(i, j));
                        for (std::size_t j = 0; j < k; ++j)
                          ga.at2(i, j) += T((double(g.at2(i, j)) -
                                             double(pv.at2(i, j)) * gsum) /
                                            tau);
                      }
                    });
    return {pid, lpid};
  }

  // ---- reverse sweep ----

  /// Gradient of a scalar node w.r.t. every node; call once per tape.
  void backward(int loss) {
    if (loss < 0 || loss >= size())
      throw std::invalid_argument("backward: bad loss node id");
    if (!value(loss).is_scalar())
      throw std::invalid_argument("backward: loss node has shape " +
                                  value(loss).shape_str() + ", expected scalar");
    grads_.clear();
    grads_.resize(nodes_.size());
    touched_.assign(nodes_.size(), 0);
    grads_[loss] = Tensor(value(loss).shape);
    grads_[loss][0] = T(1);
    touched_[loss] = 1;
    for (int i = loss; i >= 0; --i) {
      if (!touched_[i] || !nodes_[i].backward) continue;
      nodes_[i].backward(*this, i);
    }
    ran_backward_ = true;
  }

  /// Gradient buffer of a node (zeros if the node did not influence the loss).
  const Tensor& grad_of(int id) {
    return grad_buf(id);
  }

  /// Gradients for every bound parameter; untouched parameters get zeros.
  std::map<std::string, Tensor> param_gradients() {
    if (!ran_backward_)
      throw std::logic_error("param_gradients: backward() has not run");
    std::map<std::string, Tensor> out;
    for (const auto& [name, id] : params_) out.emplace(name, grad_buf(id));
    return out;
  }

 private:
  Tensor& grad_buf(int id) {
    if (grads_.empty()) grads_.resize(nodes_.size());
    if (grads_[id].size() == 0) grads_[id] = Tensor(nodes_[id].value.shape);
    if (!touched_.empty()) touched_[id] = 1;
    return grads_[id];
  }

  void accumulate(int id, const Tensor& g) {
    Tensor& dst = grad_buf(id);
    for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g[i];
  }

  int push(const char* op, std::vector<int> inputs, Tensor value, BackwardFn fn) {
    for (int i : inputs)
      if (i < 0 || i >= size())
        throw std::invalid_argument(std::string("tape: bad input node id for ") + op);
    nodes_.push_back(Node{op, std::move(inputs), std::move(value), std::move(fn)});
    return size() - 1;
  }

  std::vector<Node> nodes_;
  std::vector<Tensor> grads_;
  std::vector<char> touched_;
  std::map<std::string, int> params_;
  bool ran_backward_ = false;
};

using Tape = TapeT<float>;
using Tape64 = TapeT<double>;

}  // namespace dfkd
