#pragma once

#include <string>

#include "dfkd/config.hpp"

namespace dfkd {

/// Each step works on fixed artifact names inside out_dir (data_train.dfkd,
/// teacher.dfkd, generator_0.dfkd, ..., metrics.jsonl), creates the directory
/// if needed, rewrites config.resolved, and appends its wall time to
/// timings.txt. Steps consume the artifacts of earlier steps and throw when
/// one is missing or malformed.

/// Writes data_train.dfkd and data_test.dfkd.
void pipeline_gen_data(const RunConfig& cfg, const std::string& out_dir);

/// Trains the teacher on data_train.dfkd; writes teacher.dfkd and
/// teacher_metrics.jsonl.
void pipeline_train_teacher(const RunConfig& cfg, const std::string& out_dir);

/// Runs only the generator warm-up against teacher.dfkd; writes
/// generator_<j>.dfkd and metrics.jsonl.
void pipeline_warmup_generators(const RunConfig& cfg, const std::string& out_dir);

/// Full adversarial distillation against teacher.dfkd, evaluated on
/// data_test.dfkd only; writes student_<i>.dfkd, generator_<j>.dfkd and
/// metrics.jsonl.
void pipeline_distill(const RunConfig& cfg, const std::string& out_dir);

/// Post-training quantization of teacher.dfkd calibrated on generator_0.dfkd
/// samples; writes quantized_ptq.dfkd.
void pipeline_quantize(const RunConfig& cfg, const std::string& out_dir);

/// Quantization-aware distillation of teacher.dfkd into a quantized copy of
/// itself; warm-starts from generator_<j>.dfkd when qat.warm_start is set.
/// Writes quantized_qat.dfkd and metrics.jsonl.
void pipeline_qat_distill(const RunConfig& cfg, const std::string& out_dir);

/// Test accuracy of eval.model (float or quantized) on data_test.dfkd.
double pipeline_eval(const RunConfig& cfg, const std::string& out_dir);

/// Renders samples.count images from samples.model as a samples.cols-wide
/// grid in samples.ppm.
void pipeline_dump_samples(const RunConfig& cfg, const std::string& out_dir);

}  // namespace dfkd
