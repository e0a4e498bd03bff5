#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <fstream>
#include <sstream>
#include <string>

#include "dfkd/metrics.hpp"
#include "doctest.h"
#include "json.hpp"
#include "temp_dir.hpp"

using namespace dfkd;

namespace {

RunMetrics sample_metrics() {
  RunMetrics m;
  EpochRecord a;
  a.epoch = 0;
  a.phase = "warmup";
  a.maximization_steps = 0;
  a.generator_objective = 0.0;
  a.kd_divergence = 0.0;
  a.moment_match = 12.5;
  a.instance_entropy = 1.25;
  a.batch_entropy = 2.3;
  a.aux_total = 11.45;
  a.lr_generator = 1e-3;
  a.lr_student = 0.0;
  EpochRecord b;
  b.epoch = 1;
  b.phase = "main";
  b.maximization_steps = 50;
  b.generator_objective = -0.75;
  b.kd_divergence = 0.5;
  b.moment_match = 3.25;
  b.instance_entropy = 1.0;
  b.batch_entropy = 2.2;
  b.aux_total = 2.05;
  b.lr_generator = 9.9e-4;
  b.lr_student = 0.099;
  b.student_accuracy = {0.31, 0.28};
  m.epochs = {a, b};
  return m;
}

}  // namespace

TEST_CASE("metrics serialize one epoch per line with stable keys") {
  const std::string text = metrics_to_jsonl(sample_metrics());
  std::istringstream in(text);
  std::string line;
  std::size_t lines = 0;
  while (std::getline(in, line)) {
    ++lines;
    nlohmann::json j = nlohmann::json::parse(line);
    CHECK(j.is_object());
    CHECK(j.contains("epoch"));
    CHECK(j.contains("phase"));
    CHECK(j.contains("kd_divergence"));
    CHECK(j.contains("student_accuracy"));
  }
  CHECK(lines == 2);
  // Identical input renders to identical bytes.
  CHECK(metrics_to_jsonl(sample_metrics()) == text);
}

TEST_CASE("metrics round trip through a file") {
  TempDir dir("metrics");
  RunMetrics m = sample_metrics();
  write_metrics_jsonl(dir.file("metrics.jsonl"), m);
  RunMetrics back = read_metrics_jsonl(dir.file("metrics.jsonl"));

  REQUIRE(back.epochs.size() == m.epochs.size());
  for (std::size_t i = 0; i < m.epochs.size(); ++i) {
    CHECK(back.epochs[i].epoch == m.epochs[i].epoch);
    CHECK(back.epochs[i].phase == m.epochs[i].phase);
    CHECK(back.epochs[i].maximization_steps == m.epochs[i].maximization_steps);
    CHECK(back.epochs[i].generator_objective == m.epochs[i].generator_objective);
    CHECK(back.epochs[i].kd_divergence == m.epochs[i].kd_divergence);
    CHECK(back.epochs[i].moment_match == m.epochs[i].moment_match);
    CHECK(back.epochs[i].instance_entropy == m.epochs[i].instance_entropy);
    CHECK(back.epochs[i].batch_entropy == m.epochs[i].batch_entropy);
    CHECK(back.epochs[i].aux_total == m.epochs[i].aux_total);
    CHECK(back.epochs[i].lr_generator == m.epochs[i].lr_generator);
    CHECK(back.epochs[i].lr_student == m.epochs[i].lr_student);
    CHECK(back.epochs[i].student_accuracy == m.epochs[i].student_accuracy);
  }

  std::ofstream bad(dir.file("bad.jsonl"));
  bad << "{not json\n";
  bad.close();
  CHECK_THROWS(read_metrics_jsonl(dir.file("bad.jsonl")));
  CHECK_THROWS(read_metrics_jsonl(dir.file("absent.jsonl")));
}
