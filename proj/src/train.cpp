#include "dfkd/train.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>
#include <utility>

namespace dfkd {

namespace {

// Stream tags for deriving independent noise sequences from the master seed.
constexpr std::uint64_t kGenInitStream = 100;
constexpr std::uint64_t kStudentInitStream = 200;
constexpr std::uint64_t kWarmupNoiseStream = 300;
constexpr std::uint64_t kMaxNoiseStream = 400;
constexpr std::uint64_t kMinNoiseStream = 500;

double scalar(const Tape& tape, int node) { return tape.value(node).data.at(0); }

std::vector<std::pair<Tensor, Tensor>> moment_values(const Tape& tape,
                                                     const TapeForward& f) {
  std::vector<std::pair<Tensor, Tensor>> out;
  out.reserve(f.bn_mean_nodes.size());
  for (std::size_t k = 0; k < f.bn_mean_nodes.size(); ++k)
    out.emplace_back(tape.value(f.bn_mean_nodes[k]),
                     tape.value(f.bn_var_nodes[k]));
  return out;
}

}  // namespace

void TrainConfig::validate() const {
  if (n_generators == 0 || n_students == 0)
    throw std::invalid_argument(
        "TrainConfig: n_generators and n_students must be >= 1");
  if (update_interval == 0)
    throw std::invalid_argument("TrainConfig: update_interval must be >= 1");
  if (batch_size == 0)
    throw std::invalid_argument("TrainConfig: batch_size must be >= 1");
  if (batch_size < n_generators)
    throw std::invalid_argument(
        "TrainConfig: batch_size " + std::to_string(batch_size) +
        " leaves no samples per generator with " +
        std::to_string(n_generators) + " generators");
  if (latent_dim == 0)
    throw std::invalid_argument("TrainConfig: latent_dim must be >= 1");
  if (epochs > 0 && batches_per_epoch == 0)
    throw std::invalid_argument(
        "TrainConfig: batches_per_epoch must be >= 1 when epochs > 0");
  if (!(alpha >= 0.0))
    throw std::invalid_argument("TrainConfig: alpha must be >= 0");
  if (!(tau > 0.0)) throw std::invalid_argument("TrainConfig: tau must be > 0");
  if (!(lr_generator > 0.0) || !(lr_student > 0.0))
    throw std::invalid_argument("TrainConfig: learning rates must be > 0");
  if (!(momentum >= 0.0 && momentum < 1.0))
    throw std::invalid_argument("TrainConfig: momentum out of [0, 1)");
  if (!(bn_momentum >= 0.0 && bn_momentum < 1.0))
    throw std::invalid_argument("TrainConfig: bn_momentum out of [0, 1)");
  const bool any_aux = aux.moment_match || aux.instance_entropy || aux.batch_entropy;
  if ((warmup_epochs > 0 || alpha > 0.0) && !any_aux)
    throw std::invalid_argument(
        "TrainConfig: generator constraint loss has no active terms");
}

std::size_t samples_per_generator(const TrainConfig& cfg) {
  cfg.validate();
  return cfg.batch_size / cfg.n_generators;
}

AdversarialEngine::AdversarialEngine(ModelSpec teacher_spec,
                                     Params teacher_params,
                                     ModelSpec generator_spec,
                                     ModelSpec student_spec, TrainConfig cfg,
                                     EngineHooks hooks)
    : teacher_spec_(std::move(teacher_spec)),
      teacher_params_(std::move(teacher_params)),
      generator_spec_(std::move(generator_spec)),
      student_spec_(std::move(student_spec)),
      cfg_(std::move(cfg)),
      hooks_(std::move(hooks)) {
  cfg_.validate();
  if (!generator_spec_.is_generator())
    throw std::invalid_argument("AdversarialEngine: generator spec expected");
  if (generator_spec_.latent_dim != cfg_.latent_dim)
    throw std::invalid_argument(
        "AdversarialEngine: latent_dim mismatch between config (" +
        std::to_string(cfg_.latent_dim) + ") and generator (" +
        std::to_string(generator_spec_.latent_dim) + ")");
  const auto gen_out = layer_output_shapes(generator_spec_).back();
  if (gen_out.size() != 4 || gen_out[1] != teacher_spec_.in_h ||
      gen_out[2] != teacher_spec_.in_w || gen_out[3] != teacher_spec_.in_c)
    throw std::invalid_argument(
        "AdversarialEngine: generator output does not match teacher input "
        "geometry");
  const bool need_aux = cfg_.warmup_epochs > 0 || cfg_.alpha > 0.0;
  if (need_aux && cfg_.aux.moment_match &&
      batchnorm_layer_indices(teacher_spec_).empty())
    throw std::invalid_argument(
        "AdversarialEngine: statistics matching requires a teacher with "
        "batchnorm layers");
  teacher_moments_ = bn_running_moments(teacher_spec_, teacher_params_);

  const Rng master(cfg_.seed);
  for (std::size_t j = 0; j < cfg_.n_generators; ++j) {
    generators_.push_back(
        init_params(generator_spec_, master.split(kGenInitStream + j).seed()));
    warmup_noise_.push_back(master.split(kWarmupNoiseStream + j));
    max_noise_.push_back(master.split(kMaxNoiseStream + j));
    min_noise_.push_back(master.split(kMinNoiseStream + j));
  }
  for (std::size_t i = 0; i < cfg_.n_students; ++i)
    students_.push_back(
        init_params(student_spec_, master.split(kStudentInitStream + i).seed()));
  gen_opt_.resize(cfg_.n_generators);
  student_opt_.resize(cfg_.n_students);
}

void AdversarialEngine::set_generators(std::vector<Params> generators) {
  if (generators.size() != cfg_.n_generators)
    throw std::invalid_argument("set_generators: expected " +
                                std::to_string(cfg_.n_generators) +
                                " parameter sets, got " +
                                std::to_string(generators.size()));
  generators_ = std::move(generators);
}

void AdversarialEngine::set_students(std::vector<Params> students) {
  if (students.size() != cfg_.n_students)
    throw std::invalid_argument("set_students: expected " +
                                std::to_string(cfg_.n_students) +
                                " parameter sets, got " +
                                std::to_string(students.size()));
  students_ = std::move(students);
}

Tensor AdversarialEngine::draw_latent(Rng& stream, std::size_t n) const {
  Tensor z({n, cfg_.latent_dim});
  stream.fill_normal(z);
  return z;
}

void AdversarialEngine::check_finite(const char* phase, double value,
                                     const std::string& breakdown) const {
  if (std::isfinite(value)) return;
  std::ostringstream msg;
  msg << phase << " loss is not finite at iteration " << iteration_ << " ("
      << breakdown << ")";
  throw std::runtime_error(msg.str());
}

AdversarialEngine::GenGraph AdversarialEngine::build_generator_graph(
    Tape& tape, std::size_t gen_index, const Tensor& z, bool bind_generator) {
  GenGraph g;
  const int zin = tape.input(z);
  g.gen = forward_on_tape(tape, generator_spec_, generators_[gen_index], zin,
                          BnMode::train, bind_generator);
  const BnMode teacher_mode =
      cfg_.teacher_bn_batch_stats ? BnMode::train : BnMode::infer;
  g.teacher = forward_on_tape(tape, teacher_spec_, teacher_params_, g.gen.out,
                              teacher_mode, /*bind_params=*/false);
  g.teacher_probs = tape.softmax_logs(g.teacher.out, 1.0).first;
  return g;
}

AuxNodes AdversarialEngine::build_aux(Tape& tape, const GenGraph& g) {
  return aux_loss_node(tape, g.teacher.bn_mean_nodes, g.teacher.bn_var_nodes,
                       teacher_moments_, g.teacher_probs, cfg_.aux);
}

TapeForward AdversarialEngine::student_graph(Tape& tape,
                                             std::size_t student_index,
                                             int input, bool bind_params) {
  if (hooks_.student_forward)
    return hooks_.student_forward(tape, student_spec_, students_[student_index],
                                  input, bind_params, "");
  return forward_on_tape(tape, student_spec_, students_[student_index], input,
                         BnMode::train, bind_params);
}

MaximizationOutcome AdversarialEngine::maximization_step(double lr_now) {
  MaximizationOutcome agg;
  const bool need_aux = cfg_.alpha > 0.0;
  for (std::size_t j = 0; j < cfg_.n_generators; ++j) {
    Tape tape;
    const Tensor z = draw_latent(max_noise_[j], cfg_.batch_size);
    GenGraph g = build_generator_graph(tape, j, z, /*bind_generator=*/true);
    AuxNodes aux;
    if (need_aux) aux = build_aux(tape, g);
    std::vector<int> student_logits;
    for (std::size_t i = 0; i < cfg_.n_students; ++i)
      student_logits.push_back(
          student_graph(tape, i, g.gen.out, /*bind_params=*/false).out);
    const AdversarialNodes adv = adversarial_objective_node(
        tape, g.teacher.out, student_logits, aux.total, cfg_.alpha, cfg_.tau);
    const int loss = tape.mul_scalar(adv.objective, -1.0f);
    tape.backward(loss);

    MaximizationOutcome one;
    one.objective = scalar(tape, adv.objective);
    for (int kd : adv.pair_kd) one.kd += scalar(tape, kd);
    one.kd /= static_cast<double>(adv.pair_kd.size());
    if (need_aux) {
      one.aux_total = scalar(tape, aux.total);
      if (aux.moment_match >= 0) one.moment_match = scalar(tape, aux.moment_match);
      if (aux.instance_entropy >= 0)
        one.instance_entropy = scalar(tape, aux.instance_entropy);
      if (aux.batch_entropy >= 0)
        one.batch_entropy = scalar(tape, aux.batch_entropy);
    }
    std::ostringstream breakdown;
    breakdown << "objective=" << one.objective << ", kd=" << one.kd
              << ", moment_match=" << one.moment_match
              << ", instance_entropy=" << one.instance_entropy
              << ", batch_entropy=" << one.batch_entropy;
    check_finite("generator update", one.objective, breakdown.str());

    adam_step(generators_[j].tensors, tape.param_gradients(), gen_opt_[j],
              AdamConfig{}, lr_now);
    update_running_stats(generator_spec_, generators_[j],
                         moment_values(tape, g.gen), cfg_.bn_momentum);

    agg.objective += one.objective;
    agg.kd += one.kd;
    agg.moment_match += one.moment_match;
    agg.instance_entropy += one.instance_entropy;
    agg.batch_entropy += one.batch_entropy;
    agg.aux_total += one.aux_total;
  }
  const double g = static_cast<double>(cfg_.n_generators);
  agg.objective /= g;
  agg.kd /= g;
  agg.moment_match /= g;
  agg.instance_entropy /= g;
  agg.batch_entropy /= g;
  agg.aux_total /= g;
  return agg;
}

std::vector<double> AdversarialEngine::minimization_step(double lr_now) {
  const std::size_t b = cfg_.batch_size / cfg_.n_generators;
  std::vector<Tensor> parts;
  parts.reserve(cfg_.n_generators);
  for (std::size_t j = 0; j < cfg_.n_generators; ++j) {
    Tensor z = draw_latent(min_noise_[j], b);
    parts.push_back(
        forward(generator_spec_, generators_[j], z, BnMode::train).out);
  }
  const Tensor batch = concat_batch(parts);
  const BnMode teacher_mode =
      cfg_.teacher_bn_batch_stats ? BnMode::train : BnMode::infer;
  const Tensor teacher_logits =
      forward(teacher_spec_, teacher_params_, batch, teacher_mode).out;

  std::vector<double> kds;
  kds.reserve(cfg_.n_students);
  for (std::size_t i = 0; i < cfg_.n_students; ++i) {
    Tape tape;
    const int x = tape.input(batch);
    const TapeForward sf = student_graph(tape, i, x, /*bind_params=*/true);
    const int kd =
        kd_divergence_const_teacher_node(tape, teacher_logits, sf.out, cfg_.tau);
    tape.backward(kd);
    const double v = scalar(tape, kd);
    check_finite("student update", v,
                 "student=" + std::to_string(i) + ", kd=" + std::to_string(v));
    nesterov_step(students_[i].tensors, tape.param_gradients(), student_opt_[i],
                  cfg_.momentum, lr_now);
    update_running_stats(student_spec_, students_[i], moment_values(tape, sf),
                         cfg_.bn_momentum);
    kds.push_back(v);
  }
  return kds;
}

RunMetrics AdversarialEngine::run_warmup() {
  RunMetrics metrics;
  for (std::size_t e = 0; e < cfg_.warmup_epochs; ++e) {
    EpochRecord rec;
    rec.epoch = e;
    rec.phase = "warmup";
    rec.lr_generator = cfg_.lr_generator;
    double steps = 0;
    for (std::size_t k = 0; k < cfg_.batches_per_epoch; ++k) {
      iteration_ = e * cfg_.batches_per_epoch + k;
      for (std::size_t j = 0; j < cfg_.n_generators; ++j) {
        Tape tape;
        const Tensor z = draw_latent(warmup_noise_[j], cfg_.batch_size);
        GenGraph g = build_generator_graph(tape, j, z, /*bind_generator=*/true);
        const AuxNodes aux = build_aux(tape, g);
        tape.backward(aux.total);
        const double total = scalar(tape, aux.total);
        std::ostringstream breakdown;
        breakdown << "aux_total=" << total;
        check_finite("warm-up", total, breakdown.str());
        adam_step(generators_[j].tensors, tape.param_gradients(), gen_opt_[j],
                  AdamConfig{}, cfg_.lr_generator);
        update_running_stats(generator_spec_, generators_[j],
                             moment_values(tape, g.gen), cfg_.bn_momentum);
        rec.aux_total += total;
        if (aux.moment_match >= 0)
          rec.moment_match += scalar(tape, aux.moment_match);
        if (aux.instance_entropy >= 0)
          rec.instance_entropy += scalar(tape, aux.instance_entropy);
        if (aux.batch_entropy >= 0)
          rec.batch_entropy += scalar(tape, aux.batch_entropy);
        steps += 1;
      }
    }
    rec.aux_total /= steps;
    rec.moment_match /= steps;
    rec.instance_entropy /= steps;
    rec.batch_entropy /= steps;
    metrics.epochs.push_back(std::move(rec));
  }
  return metrics;
}

AdversarialKdResult AdversarialEngine::run(const Evaluator& evaluate) {
  AdversarialKdResult out;
  RunMetrics metrics = run_warmup();

  const std::size_t total_iters = cfg_.epochs * cfg_.batches_per_epoch;
  std::size_t n = 1;  // 1-based so generator updates happen floor(total/m) times
  for (std::size_t e = 0; e < cfg_.epochs; ++e) {
    EpochRecord rec;
    rec.epoch = cfg_.warmup_epochs + e;
    rec.phase = "main";
    rec.lr_generator = cosine_lr(n - 1, total_iters, cfg_.lr_generator);
    rec.lr_student = cosine_lr(n - 1, total_iters, cfg_.lr_student);
    double min_steps = 0;
    for (std::size_t k = 0; k < cfg_.batches_per_epoch; ++k, ++n) {
      iteration_ = n;
      const double lr_g = cosine_lr(n - 1, total_iters, cfg_.lr_generator);
      const double lr_s = cosine_lr(n - 1, total_iters, cfg_.lr_student);
      if (n % cfg_.update_interval == 0) {
        const MaximizationOutcome mo = maximization_step(lr_g);
        rec.maximization_steps += 1;
        rec.generator_objective += mo.objective;
        rec.moment_match += mo.moment_match;
        rec.instance_entropy += mo.instance_entropy;
        rec.batch_entropy += mo.batch_entropy;
        rec.aux_total += mo.aux_total;
      }
      const std::vector<double> kds = minimization_step(lr_s);
      double mean_kd = 0;
      for (double v : kds) mean_kd += v;
      rec.kd_divergence += mean_kd / static_cast<double>(kds.size());
      min_steps += 1;
    }
    if (rec.maximization_steps > 0) {
      const double ms = static_cast<double>(rec.maximization_steps);
      rec.generator_objective /= ms;
      rec.moment_match /= ms;
      rec.instance_entropy /= ms;
      rec.batch_entropy /= ms;
      rec.aux_total /= ms;
    }
    rec.kd_divergence /= min_steps;
    if (hooks_.on_epoch) hooks_.on_epoch(e);
    if (evaluate)
      for (std::size_t i = 0; i < cfg_.n_students; ++i)
        rec.student_accuracy.push_back(evaluate(student_spec_, students_[i]));
    metrics.epochs.push_back(std::move(rec));
  }

  out.generators = generators_;
  out.students = students_;
  out.metrics = std::move(metrics);
  return out;
}

}  // namespace dfkd
