#include "dfkd/pipeline.hpp"

#include <chrono>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <string>

#include "dfkd/data.hpp"
#include "dfkd/image.hpp"
#include "dfkd/io.hpp"
#include "dfkd/metrics.hpp"
#include "dfkd/model.hpp"
#include "dfkd/quant.hpp"
#include "dfkd/rng.hpp"
#include "dfkd/train.hpp"
#include "json.hpp"

namespace dfkd {

namespace {

namespace fs = std::filesystem;

std::string art(const std::string& out_dir, const std::string& name) {
  return (fs::path(out_dir) / name).string();
}

/// Measures one step; the timing file is deliberately separate from
/// metrics.jsonl so metrics stay byte-reproducible.
class StepTimer {
 public:
  StepTimer(std::string out_dir, std::string name)
      : out_dir_(std::move(out_dir)),
        name_(std::move(name)),
        start_(std::chrono::steady_clock::now()) {}

  ~StepTimer() {
    const double seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
    std::ofstream out(art(out_dir_, "timings.txt"), std::ios::app);
    if (out) out << name_ << " " << seconds << "\n";
  }

 private:
  std::string out_dir_;
  std::string name_;
  std::chrono::steady_clock::time_point start_;
};

void prepare(const RunConfig& cfg, const std::string& out_dir) {
  fs::create_directories(out_dir);
  std::ofstream out(art(out_dir, "config.resolved"), std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + art(out_dir, "config.resolved"));
  out << render_config(cfg);
}

ModelSpec teacher_spec(const RunConfig& cfg) {
  return make_classifier(cfg.data_height, cfg.data_width, 3, cfg.teacher_width,
                         cfg.teacher_depth, cfg.data_classes);
}

ModelSpec student_spec(const RunConfig& cfg) {
  return make_classifier(cfg.data_height, cfg.data_width, 3, cfg.student_width,
                         cfg.student_depth, cfg.data_classes);
}

ModelSpec generator_spec(const RunConfig& cfg) {
  return make_generator(cfg.data_height, cfg.data_width, cfg.train.latent_dim);
}

DatasetSplit load_split_checked(const RunConfig& cfg, const std::string& path) {
  DatasetSplit split = load_dataset_split(path);
  if (split.images.shape[1] != cfg.data_height ||
      split.images.shape[2] != cfg.data_width ||
      split.labels.shape[1] != cfg.data_classes) {
    throw IoError(IoErrorKind::mismatch,
                  path + ": geometry " + split.images.shape_str() + " / " +
                      split.labels.shape_str() + " does not match the config");
  }
  return split;
}

Params load_teacher_params(const RunConfig& cfg, const std::string& out_dir,
                           const ModelSpec& spec) {
  return load_params_for(art(out_dir, "teacher.dfkd"), spec);
}

std::string resolve_model_path(const std::string& out_dir, const std::string& name) {
  fs::path p(name);
  return p.is_absolute() ? name : art(out_dir, name);
}

void save_engine_artifacts(const std::string& out_dir, const ModelSpec& gen_spec,
                           const std::vector<Params>& generators,
                           const RunMetrics& metrics) {
  for (std::size_t j = 0; j < generators.size(); ++j) {
    save_model(art(out_dir, "generator_" + std::to_string(j) + ".dfkd"), gen_spec,
               generators[j]);
  }
  write_metrics_jsonl(art(out_dir, "metrics.jsonl"), metrics);
}

}  // namespace

void pipeline_gen_data(const RunConfig& cfg, const std::string& out_dir) {
  prepare(cfg, out_dir);
  StepTimer timer(out_dir, "gen-data");
  Dataset ds = make_synthetic_dataset(cfg.data_height, cfg.data_width, cfg.data_classes,
                                      cfg.data_train, cfg.data_test, cfg.seed);
  save_dataset_split(art(out_dir, "data_train.dfkd"), ds.train);
  save_dataset_split(art(out_dir, "data_test.dfkd"), ds.test);
}

void pipeline_train_teacher(const RunConfig& cfg, const std::string& out_dir) {
  prepare(cfg, out_dir);
  StepTimer timer(out_dir, "train-teacher");
  DatasetSplit train = load_split_checked(cfg, art(out_dir, "data_train.dfkd"));
  DatasetSplit test = load_split_checked(cfg, art(out_dir, "data_test.dfkd"));

  ModelSpec spec = teacher_spec(cfg);
  Params params = init_params(spec, splitmix64(cfg.seed ^ 0x7e4cull));
  SupervisedConfig scfg;
  scfg.epochs = cfg.teacher_epochs;
  scfg.batch_size = cfg.teacher_batch_size;
  scfg.lr = cfg.teacher_lr;
  scfg.momentum = cfg.teacher_momentum;
  scfg.bn_momentum = cfg.train.bn_momentum;
  scfg.seed = cfg.seed;
  SupervisedMetrics metrics = train_classifier(spec, params, train, test, scfg);

  save_model(art(out_dir, "teacher.dfkd"), spec, params);
  std::ofstream out(art(out_dir, "teacher_metrics.jsonl"), std::ios::binary);
  if (!out) throw std::runtime_error("cannot write teacher_metrics.jsonl");
  for (std::size_t e = 0; e < metrics.train_loss.size(); ++e) {
    nlohmann::json j;
    j["epoch"] = e;
    j["train_loss"] = metrics.train_loss[e];
    j["test_accuracy"] = metrics.test_accuracy[e];
    out << j.dump() << '\n';
  }
}

void pipeline_warmup_generators(const RunConfig& cfg, const std::string& out_dir) {
  prepare(cfg, out_dir);
  StepTimer timer(out_dir, "warmup-gen");
  ModelSpec tspec = teacher_spec(cfg);
  Params tparams = load_teacher_params(cfg, out_dir, tspec);
  AdversarialEngine engine(tspec, tparams, generator_spec(cfg), student_spec(cfg),
                           cfg.train);
  RunMetrics metrics = engine.run_warmup();
  save_engine_artifacts(out_dir, generator_spec(cfg), engine.generators(), metrics);
}

void pipeline_distill(const RunConfig& cfg, const std::string& out_dir) {
  prepare(cfg, out_dir);
  StepTimer timer(out_dir, "distill");
  ModelSpec tspec = teacher_spec(cfg);
  Params tparams = load_teacher_params(cfg, out_dir, tspec);
  // Training itself never touches the dataset; the test split is loaded only
  // to report student accuracy after each epoch.
  DatasetSplit test = load_split_checked(cfg, art(out_dir, "data_test.dfkd"));

  AdversarialEngine engine(tspec, tparams, generator_spec(cfg), student_spec(cfg),
                           cfg.train);
  AdversarialKdResult result = engine.run([&](const ModelSpec& spec, const Params& p) {
    return evaluate_accuracy(spec, p, test.images, test.labels);
  });

  for (std::size_t i = 0; i < result.students.size(); ++i) {
    save_model(art(out_dir, "student_" + std::to_string(i) + ".dfkd"), student_spec(cfg),
               result.students[i]);
  }
  save_engine_artifacts(out_dir, generator_spec(cfg), result.generators, result.metrics);
}

void pipeline_quantize(const RunConfig& cfg, const std::string& out_dir) {
  prepare(cfg, out_dir);
  StepTimer timer(out_dir, "quantize");
  ModelSpec tspec = teacher_spec(cfg);
  Params tparams = load_teacher_params(cfg, out_dir, tspec);
  ModelSpec gspec = generator_spec(cfg);
  Params gparams = load_params_for(art(out_dir, "generator_0.dfkd"), gspec);

  QuantizedModel qm = df_quantize(tspec, tparams, gspec, gparams, cfg.quant,
                                  cfg.calib_batches, cfg.calib_batch_size, cfg.seed);
  save_quantized_model(art(out_dir, "quantized_ptq.dfkd"), qm);
}

void pipeline_qat_distill(const RunConfig& cfg, const std::string& out_dir) {
  prepare(cfg, out_dir);
  StepTimer timer(out_dir, "qat-distill");
  ModelSpec tspec = teacher_spec(cfg);
  Params tparams = load_teacher_params(cfg, out_dir, tspec);
  ModelSpec gspec = generator_spec(cfg);
  DatasetSplit test = load_split_checked(cfg, art(out_dir, "data_test.dfkd"));

  std::vector<Params> warm;
  if (cfg.qat_warm_start) {
    for (std::size_t j = 0; j < cfg.train.n_generators; ++j) {
      warm.push_back(
          load_params_for(art(out_dir, "generator_" + std::to_string(j) + ".dfkd"), gspec));
    }
  }

  TrainConfig tcfg = cfg.train;
  tcfg.lr_student = cfg.qat_lr_student;
  QatResult result = df_qat_kd(tspec, tparams, gspec, warm, cfg.quant, tcfg,
                               cfg.calib_batches, cfg.calib_batch_size,
                               [&](const QuantizedModel& qm) {
                                 return evaluate_quantized_accuracy(qm, test.images,
                                                                    test.labels);
                               });

  save_quantized_model(art(out_dir, "quantized_qat.dfkd"), result.model);
  write_metrics_jsonl(art(out_dir, "metrics.jsonl"), result.metrics);
}

double pipeline_eval(const RunConfig& cfg, const std::string& out_dir) {
  prepare(cfg, out_dir);
  StepTimer timer(out_dir, "eval");
  DatasetSplit test = load_split_checked(cfg, art(out_dir, "data_test.dfkd"));
  const std::string path = resolve_model_path(out_dir, cfg.eval_model);

  if (is_quantized_model_file(path)) {
    QuantizedModel qm = load_quantized_model(path);
    return evaluate_quantized_accuracy(qm, test.images, test.labels);
  }
  LoadedModel m = load_model(path);
  if (m.spec.num_classes == 0) {
    throw std::runtime_error(path + ": not a classifier, cannot evaluate accuracy");
  }
  return evaluate_accuracy(m.spec, m.params, test.images, test.labels);
}

void pipeline_dump_samples(const RunConfig& cfg, const std::string& out_dir) {
  prepare(cfg, out_dir);
  StepTimer timer(out_dir, "dump-samples");
  if (cfg.sample_count == 0) throw std::runtime_error("samples.count must be >= 1");
  ModelSpec gspec = generator_spec(cfg);
  Params gparams =
      load_params_for(resolve_model_path(out_dir, cfg.sample_model), gspec);

  std::vector<Tensor> batches = sample_generator_batches(
      gspec, gparams, 1, cfg.sample_count, splitmix64(cfg.seed ^ 0x5a3e5ull));
  write_ppm(art(out_dir, "samples.ppm"), tile_images(batches[0], cfg.sample_cols));
}

}  // namespace dfkd
