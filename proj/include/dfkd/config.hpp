#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "dfkd/quant.hpp"
#include "dfkd/train.hpp"

namespace dfkd {

/// Flat key=value configuration. '#' starts a comment, blank lines are
/// ignored, duplicate keys and lines without '=' are errors.
std::map<std::string, std::string> parse_config_text(const std::string& text);

std::map<std::string, std::string> parse_config_file(const std::string& path);

/// Applies "key=value" override strings on top of parsed file entries.
void apply_overrides(std::map<std::string, std::string>& kv,
                     const std::vector<std::string>& overrides);

struct RunConfig {
  std::uint64_t seed = 0;

  std::size_t data_height = 16;
  std::size_t data_width = 16;
  std::size_t data_classes = 10;
  std::size_t data_train = 4000;
  std::size_t data_test = 1000;

  std::size_t teacher_width = 16;
  std::size_t teacher_depth = 3;
  std::size_t teacher_epochs = 30;
  std::size_t teacher_batch_size = 64;
  double teacher_lr = 0.05;
  double teacher_momentum = 0.9;

  std::size_t student_width = 4;
  std::size_t student_depth = 3;

  TrainConfig train;

  QuantConfig quant;
  std::size_t calib_batches = 8;
  std::size_t calib_batch_size = 64;
  double qat_lr_student = 1e-3;
  bool qat_warm_start = true;

  std::string eval_model = "teacher.dfkd";
  std::size_t sample_count = 16;
  std::size_t sample_cols = 4;
  std::string sample_model = "generator_0.dfkd";
};

/// Fills a RunConfig from parsed entries; unknown keys are an error that
/// lists every offending key.
RunConfig resolve_config(const std::map<std::string, std::string>& kv);

/// Renders every key with its effective value, sorted, one per line.
std::string render_config(const RunConfig& cfg);

}  // namespace dfkd
