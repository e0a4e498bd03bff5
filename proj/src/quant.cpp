#include "dfkd/quant.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <stdexcept>

#include "dfkd/rng.hpp"

namespace dfkd {

namespace {

bool is_weight_name(const std::string& name) {
  auto ends_with = [&](const char* suffix) {
    const std::string s = suffix;
    return name.size() >= s.size() &&
           name.compare(name.size() - s.size(), s.size(), s) == 0;
  };
  return ends_with(".kernel") || ends_with(".weight");
}

std::pair<double, double> tensor_range(const Tensor& t) {
  if (t.data.empty()) throw std::invalid_argument("tensor_range: empty tensor");
  const auto [lo, hi] = std::minmax_element(t.data.begin(), t.data.end());
  return {double(*lo), double(*hi)};
}

double code_of(double x, const QuantParams& q) {
  const double qmax = double((1 << q.bits) - 1);
  const double c = std::nearbyint(x / q.scale) + double(q.zero_point);
  return std::min(std::max(c, 0.0), qmax);
}

}  // namespace

QuantParams compute_qparams(double range_min, double range_max, int bits) {
  if (!std::isfinite(range_min) || !std::isfinite(range_max))
    throw std::invalid_argument("compute_qparams: non-finite range");
  if (range_min > range_max)
    throw std::invalid_argument("compute_qparams: range min " +
                                std::to_string(range_min) + " exceeds max " +
                                std::to_string(range_max));
  if (bits < 2 || bits > 8)
    throw std::invalid_argument("compute_qparams: bits must be in [2, 8], got " +
                                std::to_string(bits));
  // Widen so zero is always a representable code.
  const double lo = std::min(range_min, 0.0);
  const double hi = std::max(range_max, 0.0);
  const int qmax = (1 << bits) - 1;

  QuantParams q;
  q.bits = bits;
  if (hi == lo) {
    q.scale = 1.0;
    q.zero_point = 0;
  } else {
    q.scale = (hi - lo) / double(qmax);
    const double zp = std::nearbyint(-lo / q.scale);
    q.zero_point = int(std::min(std::max(zp, 0.0), double(qmax)));
  }
  q.min = (0.0 - q.zero_point) * q.scale;
  q.max = (double(qmax) - q.zero_point) * q.scale;
  return q;
}

TensorT<std::uint8_t> quantize(const Tensor& x, const QuantParams& q) {
  TensorT<std::uint8_t> out(x.shape);
  for (std::size_t i = 0; i < x.data.size(); ++i)
    out.data[i] = std::uint8_t(code_of(double(x.data[i]), q));
  return out;
}

Tensor dequantize(const TensorT<std::uint8_t>& codes, const QuantParams& q) {
  Tensor out(codes.shape);
  for (std::size_t i = 0; i < codes.data.size(); ++i)
    out.data[i] = float((double(codes.data[i]) - q.zero_point) * q.scale);
  return out;
}

Tensor fake_quant(const Tensor& x, const QuantParams& q) {
  Tensor out(x.shape);
  for (std::size_t i = 0; i < x.data.size(); ++i)
    out.data[i] =
        float((code_of(double(x.data[i]), q) - q.zero_point) * q.scale);
  return out;
}

int fake_quant_node(Tape& t, int a, const QuantParams& q) {
  Tensor out = fake_quant(t.value(a), q);
  const float lo = float(q.min), hi = float(q.max);
  return t.unary("fake_quant", a, std::move(out),
                 [lo, hi](const Tensor& x, const Tensor&, const Tensor& g,
                          Tensor& gx) {
                   for (std::size_t i = 0; i < g.data.size(); ++i)
                     if (x.data[i] >= lo && x.data[i] <= hi)
                       gx.data[i] += g.data[i];
                 });
}

FoldedModel fold_batchnorm(const ModelSpec& spec, const Params& params) {
  FoldedModel out;
  out.spec.name = spec.name + "_folded";
  out.spec.in_h = spec.in_h;
  out.spec.in_w = spec.in_w;
  out.spec.in_c = spec.in_c;
  out.spec.latent_dim = spec.latent_dim;
  out.spec.num_classes = spec.num_classes;

  auto copy_tensor = [&](std::size_t old_i, std::size_t new_i, const char* kind,
                         const char* field) {
    out.params.tensors.emplace(param_name(new_i, kind, field),
                               params.tensors.at(param_name(old_i, kind, field)));
  };

  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    const LayerDesc& l = spec.layers[i];
    if (l.kind == LayerKind::batchnorm) {
      if (out.spec.layers.empty() ||
          out.spec.layers.back().kind != LayerKind::conv)
        throw std::invalid_argument(
            "fold_batchnorm: batchnorm at layer " + std::to_string(i) +
            " does not follow a convolution");
      LayerDesc& conv = out.spec.layers.back();
      const std::size_t n = out.spec.layers.size() - 1;
      const Tensor& gamma = params.tensors.at(param_name(i, "bn", "gamma"));
      const Tensor& beta = params.tensors.at(param_name(i, "bn", "beta"));
      const Tensor& mean = params.running.at(param_name(i, "bn", "mean"));
      const Tensor& var = params.running.at(param_name(i, "bn", "var"));
      const std::size_t cout = conv.out;

      std::vector<double> s(cout);
      for (std::size_t c = 0; c < cout; ++c)
        s[c] = double(gamma.data[c]) / std::sqrt(double(var.data[c]) + kBnEpsilon);

      Tensor& kernel = out.params.tensors.at(param_name(n, "conv", "kernel"));
      for (std::size_t j = 0; j < kernel.data.size(); ++j)
        kernel.data[j] = float(double(kernel.data[j]) * s[j % cout]);

      Tensor bias({cout});
      if (conv.bias)
        bias = out.params.tensors.at(param_name(n, "conv", "bias"));
      Tensor folded_bias({cout});
      for (std::size_t c = 0; c < cout; ++c)
        folded_bias.data[c] = float(
            double(beta.data[c]) + (double(bias.data[c]) - mean.data[c]) * s[c]);
      out.params.tensors[param_name(n, "conv", "bias")] = std::move(folded_bias);
      conv.bias = true;
      continue;
    }
    const std::size_t n = out.spec.layers.size();
    out.spec.layers.push_back(l);
    switch (l.kind) {
      case LayerKind::dense:
        copy_tensor(i, n, "dense", "weight");
        if (l.bias) copy_tensor(i, n, "dense", "bias");
        break;
      case LayerKind::conv:
        copy_tensor(i, n, "conv", "kernel");
        if (l.bias) copy_tensor(i, n, "conv", "bias");
        break;
      default:
        break;
    }
  }
  layer_output_shapes(out.spec);  // validate the rewritten network
  return out;
}

std::map<std::string, QuantParams> weight_qparams(const Params& params,
                                                  int bits) {
  std::map<std::string, QuantParams> out;
  for (const auto& [name, t] : params.tensors) {
    if (!is_weight_name(name)) continue;
    const auto [lo, hi] = tensor_range(t);
    out.emplace(name, compute_qparams(lo, hi, bits));
  }
  return out;
}

std::vector<std::pair<double, double>> activation_ranges(
    const ModelSpec& spec, const Params& params,
    const std::vector<Tensor>& batches,
    const std::map<std::string, QuantParams>* weight_q) {
  if (batches.empty())
    throw std::invalid_argument("activation_ranges: need at least one batch");
  ValueHooks hooks;
  if (weight_q)
    hooks.on_param = [weight_q](const std::string& name, const Tensor& w) {
      auto it = weight_q->find(name);
      return it == weight_q->end() ? w : fake_quant(w, it->second);
    };
  std::vector<std::pair<double, double>> ranges;
  for (const Tensor& batch : batches) {
    const ForwardResult res =
        forward(spec, params, batch, BnMode::infer, /*want_moments=*/false,
                /*want_taps=*/true, weight_q ? &hooks : nullptr);
    if (ranges.empty())
      ranges.assign(res.taps.size(),
                    {std::numeric_limits<double>::infinity(),
                     -std::numeric_limits<double>::infinity()});
    if (res.taps.size() != ranges.size())
      throw std::logic_error("activation_ranges: tap count changed");
    for (std::size_t k = 0; k < res.taps.size(); ++k) {
      const auto [lo, hi] = tensor_range(res.taps[k]);
      ranges[k].first = std::min(ranges[k].first, lo);
      ranges[k].second = std::max(ranges[k].second, hi);
    }
  }
  return ranges;
}

std::vector<QuantParams> activation_qparams(
    const std::vector<std::pair<double, double>>& ranges, int bits) {
  std::vector<QuantParams> out;
  out.reserve(ranges.size());
  for (const auto& [lo, hi] : ranges) out.push_back(compute_qparams(lo, hi, bits));
  return out;
}

Tensor quantized_logits(const QuantizedModel& qm, const Tensor& input) {
  ValueHooks hooks;
  hooks.on_param = [&qm](const std::string& name, const Tensor& w) {
    auto it = qm.weight_q.find(name);
    return it == qm.weight_q.end() ? w : fake_quant(w, it->second);
  };
  hooks.on_activation = [&qm](std::size_t tap, const Tensor& a) {
    if (tap >= qm.activation_q.size())
      throw std::runtime_error("quantized_logits: tap " + std::to_string(tap) +
                               " has no calibrated range");
    return fake_quant(a, qm.activation_q[tap]);
  };
  return forward(qm.spec, qm.params, input, BnMode::infer, false, false, &hooks)
      .out;
}

TapeForward quantized_forward_on_tape(Tape& tape, const QuantizedModel& qm,
                                      const Params& params, int input,
                                      bool bind_params) {
  const int wbits = qm.config.weight_bits;
  TapeHooks hooks;
  hooks.on_param = [wbits](Tape& t, const std::string& name, int node) {
    if (!is_weight_name(name)) return node;
    const auto [lo, hi] = tensor_range(t.value(node));
    return fake_quant_node(t, node, compute_qparams(lo, hi, wbits));
  };
  hooks.on_activation = [&qm](Tape& t, std::size_t tap, int node) {
    if (tap >= qm.activation_q.size())
      throw std::runtime_error("quantized_forward_on_tape: tap " +
                               std::to_string(tap) +
                               " has no calibrated range");
    return fake_quant_node(t, node, qm.activation_q[tap]);
  };
  return forward_on_tape(tape, qm.spec, params, input, BnMode::infer,
                         bind_params, "", &hooks);
}

std::vector<Tensor> sample_generator_batches(const ModelSpec& gen_spec,
                                             const Params& gen_params,
                                             std::size_t n_batches,
                                             std::size_t batch_size,
                                             std::uint64_t seed) {
  if (n_batches == 0 || batch_size == 0)
    throw std::invalid_argument(
        "sample_generator_batches: n_batches and batch_size must be >= 1");
  Rng stream(seed);
  std::vector<Tensor> out;
  out.reserve(n_batches);
  for (std::size_t k = 0; k < n_batches; ++k) {
    Tensor z({batch_size, gen_spec.latent_dim});
    stream.fill_normal(z);
    out.push_back(forward(gen_spec, gen_params, z, BnMode::train).out);
  }
  return out;
}

QuantizedModel df_quantize(const ModelSpec& teacher_spec,
                           const Params& teacher_params,
                           const ModelSpec& gen_spec, const Params& gen_params,
                           const QuantConfig& qcfg, std::size_t n_batches,
                           std::size_t batch_size, std::uint64_t seed) {
  FoldedModel fm = fold_batchnorm(teacher_spec, teacher_params);
  QuantizedModel qm;
  qm.spec = std::move(fm.spec);
  qm.params = std::move(fm.params);
  qm.config = qcfg;
  qm.weight_q = weight_qparams(qm.params, qcfg.weight_bits);
  const std::vector<Tensor> batches = sample_generator_batches(
      gen_spec, gen_params, n_batches, batch_size, splitmix64(seed ^ 0xca11b));
  qm.activation_q = activation_qparams(
      activation_ranges(qm.spec, qm.params, batches, &qm.weight_q),
      qcfg.activation_bits);
  return qm;
}

void recalibrate(QuantizedModel& qm, const std::vector<Tensor>& batches) {
  qm.weight_q = weight_qparams(qm.params, qm.config.weight_bits);
  qm.activation_q = activation_qparams(
      activation_ranges(qm.spec, qm.params, batches, &qm.weight_q),
      qm.config.activation_bits);
}

QatResult df_qat_kd(const ModelSpec& teacher_spec, const Params& teacher_params,
                    const ModelSpec& gen_spec,
                    std::vector<Params> warm_generators,
                    const QuantConfig& qcfg, const TrainConfig& cfg_in,
                    std::size_t calib_batches, std::size_t calib_batch_size,
                    const std::function<double(const QuantizedModel&)>& evaluate) {
  if (calib_batches == 0 || calib_batch_size == 0)
    throw std::invalid_argument(
        "df_qat_kd: calib_batches and calib_batch_size must be >= 1");
  TrainConfig cfg = cfg_in;
  cfg.n_students = 1;

  FoldedModel fm = fold_batchnorm(teacher_spec, teacher_params);
  auto qm = std::make_shared<QuantizedModel>();
  qm->spec = fm.spec;
  qm->params = fm.params;
  qm->config = qcfg;
  qm->weight_q = weight_qparams(fm.params, qcfg.weight_bits);

  EngineHooks hooks;
  hooks.student_forward = [qm](Tape& tape, const ModelSpec&,
                               const Params& params, int input, bool bind,
                               const std::string&) {
    return quantized_forward_on_tape(tape, *qm, params, input, bind);
  };

  AdversarialEngine* engine_ptr = nullptr;
  const std::uint64_t calib_seed = splitmix64(cfg.seed ^ 0x5ca1eull);
  auto calibrate_now = [qm, &engine_ptr, gen_spec, calib_batches,
                        calib_batch_size, calib_seed](std::size_t round) {
    const auto& gens = engine_ptr->generators();
    std::vector<Tensor> batches;
    batches.reserve(calib_batches);
    for (std::size_t k = 0; k < calib_batches; ++k) {
      const Params& g = gens[k % gens.size()];
      const std::uint64_t s =
          splitmix64(calib_seed ^ (round * 0x9e3779b9ull + k + 1));
      batches.push_back(sample_generator_batches(gen_spec, g, 1,
                                                 calib_batch_size, s)[0]);
    }
    qm->params = engine_ptr->students()[0];
    recalibrate(*qm, batches);
  };
  hooks.on_epoch = [&calibrate_now](std::size_t epoch) {
    calibrate_now(epoch + 1);
  };

  AdversarialEngine engine(teacher_spec, teacher_params, gen_spec, fm.spec,
                           cfg, hooks);
  engine_ptr = &engine;
  if (!warm_generators.empty()) engine.set_generators(std::move(warm_generators));
  engine.set_students({fm.params});
  calibrate_now(0);

  Evaluator eval_adapter;
  if (evaluate)
    eval_adapter = [qm, &evaluate](const ModelSpec&, const Params& p) {
      QuantizedModel current = *qm;
      current.params = p;
      current.weight_q = weight_qparams(p, current.config.weight_bits);
      return evaluate(current);
    };

  AdversarialKdResult res = engine.run(eval_adapter);

  QatResult out;
  qm->params = res.students.at(0);
  qm->weight_q = weight_qparams(qm->params, qcfg.weight_bits);
  out.model = *qm;
  out.generators = std::move(res.generators);
  out.metrics = std::move(res.metrics);
  return out;
}

}  // namespace dfkd
