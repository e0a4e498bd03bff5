#include "dfkd/model.hpp"

#include <cmath>
#include <cstdio>
#include <stdexcept>

#include "dfkd/kernels.hpp"
#include "dfkd/rng.hpp"

namespace dfkd {

namespace {

const char* const kKindNames[] = {"dense", "conv",       "bn",  "relu",
                                  "tanh",  "upsample2x", "gap", "reshape"};

std::runtime_error missing_param(const std::string& name) {
  return std::runtime_error("forward: missing parameter " + name);
}

void require_rank(const std::vector<std::size_t>& shape, std::size_t rank,
                  const char* where) {
  if (shape.size() != rank)
    throw std::invalid_argument(std::string(where) + ": expected rank-" +
                                std::to_string(rank) + " activation, got rank-" +
                                std::to_string(shape.size()));
}

void require_channels(const std::vector<std::size_t>& shape, std::size_t want,
                      const char* where) {
  if (shape.back() != want)
    throw std::invalid_argument(std::string(where) + ": expected " +
                                std::to_string(want) + " channels, got " +
                                std::to_string(shape.back()));
}

std::size_t ceil_div(std::size_t a, std::size_t b) { return (a + b - 1) / b; }

void bn_normalize(Tensor& x, const Tensor& gamma, const Tensor& beta,
                  const Tensor& mean, const Tensor& var) {
  const std::size_t c = x.shape.back(), m = x.size() / c;
  for (std::size_t ch = 0; ch < c; ++ch) {
    const float inv = 1.0f / std::sqrt(var[ch] + float(kBnEpsilon));
    const float g = gamma[ch] * inv;
    const float b = beta[ch] - mean[ch] * g;
    for (std::size_t p = 0; p < m; ++p) x[p * c + ch] = x[p * c + ch] * g + b;
  }
}

void check_input_shape(const ModelSpec& spec, const std::vector<std::size_t>& s) {
  if (spec.is_generator()) {
    if (s.size() != 2 || s[1] != spec.latent_dim)
      throw std::invalid_argument(
          "forward: generator " + spec.name + " expects (N, " +
          std::to_string(spec.latent_dim) + ") latents");
  } else {
    if (s.size() != 4 || s[1] != spec.in_h || s[2] != spec.in_w ||
        s[3] != spec.in_c)
      throw std::invalid_argument(
          "forward: classifier " + spec.name + " expects (N, " +
          std::to_string(spec.in_h) + ", " + std::to_string(spec.in_w) + ", " +
          std::to_string(spec.in_c) + ") images");
  }
}

}  // namespace

const char* layer_kind_name(LayerKind k) { return kKindNames[int(k)]; }

LayerKind layer_kind_from_name(const std::string& name) {
  for (int i = 0; i < int(std::size(kKindNames)); ++i)
    if (name == kKindNames[i]) return LayerKind(i);
  throw std::invalid_argument("unknown layer kind: " + name);
}

std::string param_name(std::size_t layer_index, const char* kind,
                       const char* field) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "l%02zu.%s.%s", layer_index, kind, field);
  return buf;
}

ModelSpec make_generator(std::size_t out_h, std::size_t out_w,
                         std::size_t latent_dim) {
  if (out_h == 0 || out_w == 0 || out_h % 8 != 0 || out_w % 8 != 0)
    throw std::invalid_argument("make_generator: output size " +
                                std::to_string(out_h) + "x" +
                                std::to_string(out_w) +
                                " must be a positive multiple of 8");
  if (latent_dim == 0)
    throw std::invalid_argument("make_generator: latent_dim must be > 0");
  const std::size_t h0 = out_h / 8, w0 = out_w / 8;
  ModelSpec s;
  s.name = "generator";
  s.latent_dim = latent_dim;
  auto conv = [](std::size_t cin, std::size_t cout, bool bias) {
    return LayerDesc{LayerKind::conv, cin, cout, 3, 1, bias, {}};
  };
  auto bn = [](std::size_t c) {
    return LayerDesc{LayerKind::batchnorm, c, c, 0, 1, false, {}};
  };
  s.layers = {
      LayerDesc{LayerKind::dense, latent_dim, h0 * w0 * 512, 0, 1, true, {}},
      LayerDesc{LayerKind::reshape, 0, 0, 0, 1, false, {h0, w0, 512}},
      LayerDesc{LayerKind::upsample2x},
      conv(512, 256, false),
      bn(256),
      LayerDesc{LayerKind::relu},
      LayerDesc{LayerKind::upsample2x},
      conv(256, 128, false),
      bn(128),
      LayerDesc{LayerKind::relu},
      LayerDesc{LayerKind::upsample2x},
      conv(128, 64, false),
      bn(64),
      LayerDesc{LayerKind::relu},
      conv(64, 3, true),
      LayerDesc{LayerKind::tanh_act},
      bn(3),
  };
  return s;
}

ModelSpec make_classifier(std::size_t in_h, std::size_t in_w, std::size_t in_c,
                          std::size_t width, std::size_t depth,
                          std::size_t num_classes) {
  if (width == 0 || depth == 0)
    throw std::invalid_argument("make_classifier: width and depth must be > 0");
  if (num_classes < 2)
    throw std::invalid_argument("make_classifier: need at least 2 classes");
  const std::size_t shrink = std::size_t(1) << (depth - 1);
  if (in_h < shrink || in_w < shrink || in_h % shrink != 0 || in_w % shrink != 0)
    throw std::invalid_argument(
        "make_classifier: depth " + std::to_string(depth) + " downsamples by " +
        std::to_string(shrink) + ", incompatible with input " +
        std::to_string(in_h) + "x" + std::to_string(in_w));
  ModelSpec s;
  char buf[64];
  std::snprintf(buf, sizeof buf, "classifier-w%zu-d%zu", width, depth);
  s.name = buf;
  s.in_h = in_h;
  s.in_w = in_w;
  s.in_c = in_c;
  s.num_classes = num_classes;
  std::size_t cin = in_c;
  for (std::size_t i = 0; i < depth; ++i) {
    const std::size_t cout = width << i;
    const std::size_t stride = i == 0 ? 1 : 2;
    s.layers.push_back(LayerDesc{LayerKind::conv, cin, cout, 3, stride, false, {}});
    s.layers.push_back(LayerDesc{LayerKind::batchnorm, cout, cout, 0, 1, false, {}});
    s.layers.push_back(LayerDesc{LayerKind::relu});
    cin = cout;
  }
  s.layers.push_back(LayerDesc{LayerKind::global_avg_pool});
  s.layers.push_back(LayerDesc{LayerKind::dense, cin, num_classes, 0, 1, true, {}});
  return s;
}

std::vector<std::vector<std::size_t>> layer_output_shapes(const ModelSpec& spec) {
  std::vector<std::size_t> cur;
  if (spec.is_generator())
    cur = {0, spec.latent_dim};
  else
    cur = {0, spec.in_h, spec.in_w, spec.in_c};
  std::vector<std::vector<std::size_t>> out;
  for (const LayerDesc& l : spec.layers) {
    switch (l.kind) {
      case LayerKind::dense:
        require_rank(cur, 2, "dense");
        require_channels(cur, l.in, "dense");
        cur = {0, l.out};
        break;
      case LayerKind::conv:
        require_rank(cur, 4, "conv");
        require_channels(cur, l.in, "conv");
        cur = {0, ceil_div(cur[1], l.stride), ceil_div(cur[2], l.stride), l.out};
        break;
      case LayerKind::batchnorm:
        require_rank(cur, 4, "bn");
        require_channels(cur, l.in, "bn");
        break;
      case LayerKind::relu:
      case LayerKind::tanh_act:
        break;
      case LayerKind::upsample2x:
        require_rank(cur, 4, "upsample2x");
        cur = {0, 2 * cur[1], 2 * cur[2], cur[3]};
        break;
      case LayerKind::global_avg_pool:
        require_rank(cur, 4, "gap");
        cur = {0, cur[3]};
        break;
      case LayerKind::reshape: {
        require_rank(cur, 2, "reshape");
        if (l.target.size() != 3)
          throw std::invalid_argument("reshape: target must be (h, w, c)");
        const std::size_t want = l.target[0] * l.target[1] * l.target[2];
        if (cur[1] != want)
          throw std::invalid_argument(
              "reshape: cannot view " + std::to_string(cur[1]) +
              " features as " + std::to_string(l.target[0]) + "x" +
              std::to_string(l.target[1]) + "x" + std::to_string(l.target[2]));
        cur = {0, l.target[0], l.target[1], l.target[2]};
        break;
      }
    }
    out.push_back(cur);
  }
  if (spec.is_generator()) {
    if (cur.size() != 4)
      throw std::invalid_argument("generator must end with an image output");
  } else {
    if (cur.size() != 2 || cur[1] != spec.num_classes)
      throw std::invalid_argument(
          spec.name + " must end with " + std::to_string(spec.num_classes) +
          " logits");
  }
  return out;
}

std::vector<std::size_t> batchnorm_layer_indices(const ModelSpec& spec) {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < spec.layers.size(); ++i)
    if (spec.layers[i].kind == LayerKind::batchnorm) out.push_back(i);
  return out;
}

std::vector<std::pair<Tensor, Tensor>> bn_running_moments(const ModelSpec& spec,
                                                          const Params& params) {
  std::vector<std::pair<Tensor, Tensor>> out;
  for (std::size_t i : batchnorm_layer_indices(spec))
    out.emplace_back(params.running.at(param_name(i, "bn", "mean")),
                     params.running.at(param_name(i, "bn", "var")));
  return out;
}

Params init_params(const ModelSpec& spec, std::uint64_t seed) {
  layer_output_shapes(spec);  // validate
  Params p;
  Rng rng(seed);
  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    const LayerDesc& l = spec.layers[i];
    switch (l.kind) {
      case LayerKind::dense: {
        Tensor w({l.in, l.out});
        rng.fill_normal(w, 0.0, std::sqrt(2.0 / double(l.in)));
        p.tensors.emplace(param_name(i, "dense", "weight"), std::move(w));
        if (l.bias)
          p.tensors.emplace(param_name(i, "dense", "bias"), Tensor({l.out}));
        break;
      }
      case LayerKind::conv: {
        Tensor k({l.ksize, l.ksize, l.in, l.out});
        rng.fill_normal(k, 0.0, std::sqrt(2.0 / double(l.ksize * l.ksize * l.in)));
        p.tensors.emplace(param_name(i, "conv", "kernel"), std::move(k));
        if (l.bias)
          p.tensors.emplace(param_name(i, "conv", "bias"), Tensor({l.out}));
        break;
      }
      case LayerKind::batchnorm:
        p.tensors.emplace(param_name(i, "bn", "gamma"), Tensor::full({l.in}, 1.0f));
        p.tensors.emplace(param_name(i, "bn", "beta"), Tensor({l.in}));
        p.running.emplace(param_name(i, "bn", "mean"), Tensor({l.in}));
        p.running.emplace(param_name(i, "bn", "var"), Tensor::full({l.in}, 1.0f));
        break;
      default:
        break;
    }
  }
  return p;
}

std::size_t trainable_count(const Params& params) {
  std::size_t n = 0;
  for (const auto& [name, t] : params.tensors) n += t.size();
  return n;
}

ForwardResult forward(const ModelSpec& spec, const Params& params,
                      const Tensor& input, BnMode mode, bool want_moments,
                      bool want_taps, const ValueHooks* hooks) {
  check_input_shape(spec, input.shape);
  ForwardResult res;
  Tensor cur = input;
  std::size_t tap = 0;
  auto tap_point = [&](Tensor& t) {
    if (want_taps) res.taps.push_back(t);
    if (hooks && hooks->on_activation) t = hooks->on_activation(tap, t);
    ++tap;
  };
  auto get = [&](const std::string& name) {
    auto it = params.tensors.find(name);
    if (it == params.tensors.end()) throw missing_param(name);
    if (hooks && hooks->on_param) return hooks->on_param(name, it->second);
    return it->second;
  };
  tap_point(cur);
  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    const LayerDesc& l = spec.layers[i];
    switch (l.kind) {
      case LayerKind::dense: {
        require_rank(cur.shape, 2, "dense");
        require_channels(cur.shape, l.in, "dense");
        const Tensor w = get(param_name(i, "dense", "weight"));
        Tensor out({cur.dim(0), l.out});
        kernels::gemm(cur.data.data(), w.data.data(), out.data.data(),
                      cur.dim(0), l.in, l.out);
        if (l.bias) {
          const Tensor b = get(param_name(i, "dense", "bias"));
          for (std::size_t r = 0; r < out.dim(0); ++r)
            for (std::size_t c = 0; c < l.out; ++c) out.at2(r, c) += b[c];
        }
        cur = std::move(out);
        break;
      }
      case LayerKind::conv: {
        const Tensor k = get(param_name(i, "conv", "kernel"));
        const auto d = kernels::conv2d_dims(cur, k, l.stride, Padding::same);
        Tensor out = kernels::conv2d_forward(cur, k, d);
        if (l.bias) {
          const Tensor b = get(param_name(i, "conv", "bias"));
          const std::size_t c = out.shape.back(), m = out.size() / c;
          for (std::size_t p2 = 0; p2 < m; ++p2)
            for (std::size_t ch = 0; ch < c; ++ch) out[p2 * c + ch] += b[ch];
        }
        cur = std::move(out);
        break;
      }
      case LayerKind::batchnorm: {
        require_rank(cur.shape, 4, "bn");
        require_channels(cur.shape, l.in, "bn");
        const Tensor gamma = get(param_name(i, "bn", "gamma"));
        const Tensor beta = get(param_name(i, "bn", "beta"));
        Tensor bm, bv;
        if (mode == BnMode::train || want_moments) {
          bm = kernels::channel_mean(cur);
          bv = kernels::channel_var(cur, bm);
        }
        if (want_moments) res.bn_moments.emplace_back(bm, bv);
        if (mode == BnMode::train) {
          bn_normalize(cur, gamma, beta, bm, bv);
        } else {
          auto mit = params.running.find(param_name(i, "bn", "mean"));
          auto vit = params.running.find(param_name(i, "bn", "var"));
          if (mit == params.running.end() || vit == params.running.end())
            throw missing_param(param_name(i, "bn", "mean"));
          bn_normalize(cur, gamma, beta, mit->second, vit->second);
        }
        break;
      }
      case LayerKind::relu:
        for (auto& v : cur.data) v = v > 0.0f ? v : 0.0f;
        tap_point(cur);
        break;
      case LayerKind::tanh_act:
        for (auto& v : cur.data) v = std::tanh(v);
        break;
      case LayerKind::upsample2x:
        cur = kernels::upsample2x_forward(cur);
        break;
      case LayerKind::global_avg_pool:
        cur = kernels::global_avg_pool_forward(cur);
        break;
      case LayerKind::reshape:
        cur = Tensor({cur.dim(0), l.target[0], l.target[1], l.target[2]},
                     std::move(cur.data));
        break;
    }
  }
  tap_point(cur);
  res.out = std::move(cur);
  return res;
}

Tensor forward_logits(const ModelSpec& spec, const Params& params,
                      const Tensor& input, BnMode mode) {
  return forward(spec, params, input, mode).out;
}

void update_running_stats(const ModelSpec& spec, Params& params,
                          const std::vector<std::pair<Tensor, Tensor>>& bn_moments,
                          double momentum) {
  const auto idx = batchnorm_layer_indices(spec);
  if (bn_moments.size() != idx.size())
    throw std::invalid_argument(
        "update_running_stats: got " + std::to_string(bn_moments.size()) +
        " moment pairs for " + std::to_string(idx.size()) + " bn layers");
  if (momentum < 0.0 || momentum >= 1.0)
    throw std::invalid_argument("update_running_stats: momentum out of [0, 1)");
  for (std::size_t j = 0; j < idx.size(); ++j) {
    Tensor& rm = params.running.at(param_name(idx[j], "bn", "mean"));
    Tensor& rv = params.running.at(param_name(idx[j], "bn", "var"));
    const Tensor& bm = bn_moments[j].first;
    const Tensor& bv = bn_moments[j].second;
    require_same_shape(rm, bm, "update_running_stats");
    for (std::size_t c = 0; c < rm.size(); ++c) {
      rm[c] = float(momentum) * rm[c] + float(1.0 - momentum) * bm[c];
      rv[c] = float(momentum) * rv[c] + float(1.0 - momentum) * bv[c];
    }
  }
}

TapeForward forward_on_tape(Tape& tape, const ModelSpec& spec,
                            const Params& params, int input_node, BnMode mode,
                            bool bind_params, const std::string& prefix,
                            const TapeHooks* hooks) {
  check_input_shape(spec, tape.value(input_node).shape);
  TapeForward res;
  int cur = input_node;
  std::size_t tap = 0;
  auto tap_point = [&](int node) {
    if (hooks && hooks->on_activation) node = hooks->on_activation(tape, tap, node);
    ++tap;
    return node;
  };
  auto get = [&](const std::string& name) {
    auto it = params.tensors.find(name);
    if (it == params.tensors.end()) throw missing_param(name);
    const std::string full = prefix + name;
    int node = bind_params ? tape.param(full, it->second) : tape.input(it->second);
    if (hooks && hooks->on_param) node = hooks->on_param(tape, full, node);
    res.param_nodes.emplace(full, node);
    return node;
  };
  cur = tap_point(cur);
  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    const LayerDesc& l = spec.layers[i];
    switch (l.kind) {
      case LayerKind::dense: {
        cur = tape.matmul(cur, get(param_name(i, "dense", "weight")));
        if (l.bias) cur = tape.add_rowvec(cur, get(param_name(i, "dense", "bias")));
        break;
      }
      case LayerKind::conv: {
        cur = tape.conv2d(cur, get(param_name(i, "conv", "kernel")), l.stride,
                          Padding::same);
        if (l.bias) cur = tape.add_chanvec(cur, get(param_name(i, "conv", "bias")));
        break;
      }
      case LayerKind::batchnorm: {
        const int gamma = get(param_name(i, "bn", "gamma"));
        const int beta = get(param_name(i, "bn", "beta"));
        const int bm = tape.channel_mean(cur);
        const int bv = tape.channel_var(cur);
        res.bn_mean_nodes.push_back(bm);
        res.bn_var_nodes.push_back(bv);
        if (mode == BnMode::train) {
          cur = tape.bn_apply(cur, gamma, beta, bm, bv, kBnEpsilon);
        } else {
          auto mit = params.running.find(param_name(i, "bn", "mean"));
          auto vit = params.running.find(param_name(i, "bn", "var"));
          if (mit == params.running.end() || vit == params.running.end())
            throw missing_param(param_name(i, "bn", "mean"));
          cur = tape.bn_apply(cur, gamma, beta, tape.input(mit->second),
                              tape.input(vit->second), kBnEpsilon);
        }
        break;
      }
      case LayerKind::relu:
        cur = tap_point(tape.relu(cur));
        break;
      case LayerKind::tanh_act:
        cur = tape.tanh_(cur);
        break;
      case LayerKind::upsample2x:
        cur = tape.upsample2x(cur);
        break;
      case LayerKind::global_avg_pool:
        cur = tape.global_avg_pool(cur);
        break;
      case LayerKind::reshape:
        cur = tape.reshape(
            cur, {tape.value(cur).dim(0), l.target[0], l.target[1], l.target[2]});
        break;
    }
  }
  res.out = tap_point(cur);
  return res;
}

}  // namespace dfkd
