#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "dfkd/losses.hpp"
#include "dfkd/model.hpp"
#include "dfkd/optim.hpp"
#include "dfkd/rng.hpp"

namespace dfkd {

/// Hyperparameters for adversarial distillation without training data.
struct TrainConfig {
  double alpha = 0.1;                // weight of the generator constraint loss
  double tau = 1.0;                  // softmax temperature for distillation
  std::size_t batch_size = 128;      // samples per iteration (split across generators)
  std::size_t n_generators = 1;
  std::size_t n_students = 1;
  std::size_t update_interval = 1;   // run generator updates every this many iterations
  std::size_t epochs = 60;           // main-phase epochs
  std::size_t batches_per_epoch = 50;
  std::size_t warmup_epochs = 20;    // generator-only epochs before the main phase
  std::size_t latent_dim = 512;
  double lr_generator = 1e-3;        // Adam, cosine-decayed over the main phase
  double lr_student = 0.1;           // Nesterov, cosine-decayed over the main phase
  double momentum = 0.9;             // Nesterov momentum
  double bn_momentum = 0.9;          // running-stat decay for generator/student bn
  bool teacher_bn_batch_stats = false;  // normalize teacher with batch moments
  AuxSwitches aux;                   // which constraint terms are active
  std::uint64_t seed = 0;

  void validate() const;
};

/// Samples drawn per generator in one student update.
std::size_t samples_per_generator(const TrainConfig& cfg);

/// One epoch of aggregate training signals.
struct EpochRecord {
  std::size_t epoch = 0;                 // contiguous across warm-up and main
  std::string phase;                     // "warmup" or "main"
  std::size_t maximization_steps = 0;    // generator updates taken this epoch
  double generator_objective = 0.0;      // mean maximization objective
  double kd_divergence = 0.0;            // mean divergence driving student updates
  double moment_match = 0.0;             // constraint-term means (generator passes)
  double instance_entropy = 0.0;
  double batch_entropy = 0.0;
  double aux_total = 0.0;
  double lr_generator = 0.0;
  double lr_student = 0.0;
  std::vector<double> student_accuracy;  // evaluator output per student (main only)
};

struct RunMetrics {
  std::vector<EpochRecord> epochs;
};

/// Scores a model; typically held-out accuracy. The training loop itself
/// never sees data — only this callback does.
using Evaluator = std::function<double(const ModelSpec&, const Params&)>;

/// Extension points for training modified students (e.g. quantized ones).
struct EngineHooks {
  /// Replaces the student graph construction in both phases.
  std::function<TapeForward(Tape&, const ModelSpec&, const Params&, int input,
                            bool bind_params, const std::string& prefix)>
      student_forward;
  /// Runs after every main-phase epoch (e.g. to refresh calibration).
  std::function<void(std::size_t epoch)> on_epoch;
};

struct MaximizationOutcome {
  double objective = 0.0;  // mean divergence minus alpha * constraint loss
  double kd = 0.0;
  double moment_match = 0.0;
  double instance_entropy = 0.0;
  double batch_entropy = 0.0;
  double aux_total = 0.0;
};

struct AdversarialKdResult {
  std::vector<Params> generators;
  std::vector<Params> students;
  RunMetrics metrics;
};

/// Two-player training loop: generators ascend the divergence between a
/// frozen teacher and the students (regularized toward teacher statistics),
/// students descend it. No training data is consumed anywhere; every image
/// the students ever see is produced by a generator from latent noise.
class AdversarialEngine {
 public:
  AdversarialEngine(ModelSpec teacher_spec, Params teacher_params,
                    ModelSpec generator_spec, ModelSpec student_spec,
                    TrainConfig cfg, EngineHooks hooks = {});

  /// Replace the seeded initial parameters (e.g. warm-started generators).
  void set_generators(std::vector<Params> generators);
  void set_students(std::vector<Params> students);

  /// Generator-only phase: descend the constraint loss, constant lr.
  RunMetrics run_warmup();

  /// Full schedule: warm-up, then the adversarial main phase with both
  /// learning rates cosine-decayed over the main phase.
  AdversarialKdResult run(const Evaluator& evaluate);

  /// Single steps, exposed so invariants can be tested in isolation.
  MaximizationOutcome maximization_step(double lr_now);
  std::vector<double> minimization_step(double lr_now);

  const std::vector<Params>& generators() const { return generators_; }
  const std::vector<Params>& students() const { return students_; }
  const Params& teacher_params() const { return teacher_params_; }
  const ModelSpec& student_spec() const { return student_spec_; }

 private:
  struct GenGraph {
    TapeForward gen;
    TapeForward teacher;
    int teacher_probs = -1;     // temperature-1 probabilities
    int teacher_logprobs = -1;  // temperature-tau log-probabilities
    int tau_probs = -1;
  };

  GenGraph build_generator_graph(Tape& tape, std::size_t gen_index,
                                 const Tensor& z, bool bind_generator);
  AuxNodes build_aux(Tape& tape, const GenGraph& g);
  TapeForward student_graph(Tape& tape, std::size_t student_index, int input,
                            bool bind_params);
  Tensor draw_latent(Rng& stream, std::size_t n) const;
  void check_finite(const char* phase, double value,
                    const std::string& breakdown) const;

  ModelSpec teacher_spec_;
  Params teacher_params_;
  ModelSpec generator_spec_;
  ModelSpec student_spec_;
  TrainConfig cfg_;
  EngineHooks hooks_;

  std::vector<std::pair<Tensor, Tensor>> teacher_moments_;
  std::vector<Params> generators_;
  std::vector<Params> students_;
  std::vector<AdamState> gen_opt_;
  std::vector<NesterovState> student_opt_;
  std::vector<Rng> warmup_noise_;
  std::vector<Rng> max_noise_;
  std::vector<Rng> min_noise_;
  std::size_t iteration_ = 0;  // global counter for error reports
};

}  // namespace dfkd
