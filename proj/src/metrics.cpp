#include "dfkd/metrics.hpp"

#include <fstream>
#include <sstream>
#include <stdexcept>

#include "json.hpp"

namespace dfkd {

namespace {

nlohmann::json epoch_to_json(const EpochRecord& r) {
  nlohmann::json j;
  j["epoch"] = r.epoch;
  j["phase"] = r.phase;
  j["maximization_steps"] = r.maximization_steps;
  j["generator_objective"] = r.generator_objective;
  j["kd_divergence"] = r.kd_divergence;
  j["moment_match"] = r.moment_match;
  j["instance_entropy"] = r.instance_entropy;
  j["batch_entropy"] = r.batch_entropy;
  j["aux_total"] = r.aux_total;
  j["lr_generator"] = r.lr_generator;
  j["lr_student"] = r.lr_student;
  j["student_accuracy"] = r.student_accuracy;
  return j;
}

EpochRecord epoch_from_json(const nlohmann::json& j) {
  EpochRecord r;
  r.epoch = j.at("epoch").get<std::size_t>();
  r.phase = j.at("phase").get<std::string>();
  r.maximization_steps = j.at("maximization_steps").get<std::size_t>();
  r.generator_objective = j.at("generator_objective").get<double>();
  r.kd_divergence = j.at("kd_divergence").get<double>();
  r.moment_match = j.at("moment_match").get<double>();
  r.instance_entropy = j.at("instance_entropy").get<double>();
  r.batch_entropy = j.at("batch_entropy").get<double>();
  r.aux_total = j.at("aux_total").get<double>();
  r.lr_generator = j.at("lr_generator").get<double>();
  r.lr_student = j.at("lr_student").get<double>();
  r.student_accuracy = j.at("student_accuracy").get<std::vector<double>>();
  return r;
}

}  // namespace

std::string metrics_to_jsonl(const RunMetrics& metrics) {
  std::ostringstream out;
  for (const EpochRecord& r : metrics.epochs) out << epoch_to_json(r).dump() << '\n';
  return out.str();
}

void write_metrics_jsonl(const std::string& path, const RunMetrics& metrics) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path + " for writing");
  out << metrics_to_jsonl(metrics);
  out.flush();
  if (!out) throw std::runtime_error("failed writing " + path);
}

RunMetrics read_metrics_jsonl(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path);
  RunMetrics metrics;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    nlohmann::json j = nlohmann::json::parse(line, nullptr, false);
    if (j.is_discarded()) {
      throw std::runtime_error(path + ":" + std::to_string(lineno) + ": invalid JSON");
    }
    metrics.epochs.push_back(epoch_from_json(j));
  }
  return metrics;
}

}  // namespace dfkd
