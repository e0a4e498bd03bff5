#include "dfkd/config.hpp"

#include "dfkd/io.hpp"

#include <cctype>
#include <fstream>
#include <functional>
#include <sstream>
#include <stdexcept>

#include "json.hpp"

namespace dfkd {

namespace {

std::string trim(const std::string& s) {
  std::size_t b = 0;
  std::size_t e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return s.substr(b, e - b);
}

std::uint64_t parse_u64(const std::string& key, const std::string& value) {
  std::size_t used = 0;
  std::uint64_t v = 0;
  try {
    v = std::stoull(value, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used != value.size() || value.empty() || value[0] == '-') {
    throw std::invalid_argument("config key '" + key + "': cannot parse '" + value +
                             "' as a non-negative integer");
  }
  return v;
}

std::size_t parse_size(const std::string& key, const std::string& value) {
  return static_cast<std::size_t>(parse_u64(key, value));
}

double parse_double(const std::string& key, const std::string& value) {
  std::size_t used = 0;
  double v = 0.0;
  try {
    v = std::stod(value, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used != value.size() || value.empty()) {
    throw std::invalid_argument("config key '" + key + "': cannot parse '" + value +
                             "' as a number");
  }
  return v;
}

bool parse_bool(const std::string& key, const std::string& value) {
  if (value == "true" || value == "1") return true;
  if (value == "false" || value == "0") return false;
  throw std::invalid_argument("config key '" + key + "': cannot parse '" + value +
                           "' as a boolean (use true/false)");
}

std::string render_double(double v) { return nlohmann::json(v).dump(); }

std::string render_bool(bool v) { return v ? "true" : "false"; }

struct KeyEntry {
  std::function<void(RunConfig&, const std::string&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

const std::map<std::string, KeyEntry>& schema() {
  auto size_key = [](std::size_t RunConfig::* field) {
    return KeyEntry{
        [field](RunConfig& c, const std::string& k, const std::string& v) {
          c.*field = parse_size(k, v);
        },
        [field](const RunConfig& c) { return std::to_string(c.*field); }};
  };
  auto double_key = [](double RunConfig::* field) {
    return KeyEntry{
        [field](RunConfig& c, const std::string& k, const std::string& v) {
          c.*field = parse_double(k, v);
        },
        [field](const RunConfig& c) { return render_double(c.*field); }};
  };
  auto string_key = [](std::string RunConfig::* field) {
    return KeyEntry{
        [field](RunConfig& c, const std::string&, const std::string& v) { c.*field = v; },
        [field](const RunConfig& c) { return c.*field; }};
  };
  auto train_size = [](std::size_t TrainConfig::* field) {
    return KeyEntry{
        [field](RunConfig& c, const std::string& k, const std::string& v) {
          c.train.*field = parse_size(k, v);
        },
        [field](const RunConfig& c) { return std::to_string(c.train.*field); }};
  };
  auto train_double = [](double TrainConfig::* field) {
    return KeyEntry{
        [field](RunConfig& c, const std::string& k, const std::string& v) {
          c.train.*field = parse_double(k, v);
        },
        [field](const RunConfig& c) { return render_double(c.train.*field); }};
  };
  auto train_bool = [](bool TrainConfig::* field) {
    return KeyEntry{
        [field](RunConfig& c, const std::string& k, const std::string& v) {
          c.train.*field = parse_bool(k, v);
        },
        [field](const RunConfig& c) { return render_bool(c.train.*field); }};
  };
  auto aux_bool = [](bool AuxSwitches::* field) {
    return KeyEntry{
        [field](RunConfig& c, const std::string& k, const std::string& v) {
          c.train.aux.*field = parse_bool(k, v);
        },
        [field](const RunConfig& c) { return render_bool(c.train.aux.*field); }};
  };

  static const std::map<std::string, KeyEntry> table = {
      {"seed",
       {[](RunConfig& c, const std::string& k, const std::string& v) {
          c.seed = parse_u64(k, v);
        },
        [](const RunConfig& c) { return std::to_string(c.seed); }}},

      {"data.height", size_key(&RunConfig::data_height)},
      {"data.width", size_key(&RunConfig::data_width)},
      {"data.classes", size_key(&RunConfig::data_classes)},
      {"data.train", size_key(&RunConfig::data_train)},
      {"data.test", size_key(&RunConfig::data_test)},

      {"teacher.width", size_key(&RunConfig::teacher_width)},
      {"teacher.depth", size_key(&RunConfig::teacher_depth)},
      {"teacher.epochs", size_key(&RunConfig::teacher_epochs)},
      {"teacher.batch_size", size_key(&RunConfig::teacher_batch_size)},
      {"teacher.lr", double_key(&RunConfig::teacher_lr)},
      {"teacher.momentum", double_key(&RunConfig::teacher_momentum)},

      {"student.width", size_key(&RunConfig::student_width)},
      {"student.depth", size_key(&RunConfig::student_depth)},

      {"train.alpha", train_double(&TrainConfig::alpha)},
      {"train.tau", train_double(&TrainConfig::tau)},
      {"train.batch_size", train_size(&TrainConfig::batch_size)},
      {"train.generators", train_size(&TrainConfig::n_generators)},
      {"train.students", train_size(&TrainConfig::n_students)},
      {"train.update_interval", train_size(&TrainConfig::update_interval)},
      {"train.epochs", train_size(&TrainConfig::epochs)},
      {"train.batches_per_epoch", train_size(&TrainConfig::batches_per_epoch)},
      {"train.warmup_epochs", train_size(&TrainConfig::warmup_epochs)},
      {"train.latent_dim", train_size(&TrainConfig::latent_dim)},
      {"train.lr_generator", train_double(&TrainConfig::lr_generator)},
      {"train.lr_student", train_double(&TrainConfig::lr_student)},
      {"train.momentum", train_double(&TrainConfig::momentum)},
      {"train.bn_momentum", train_double(&TrainConfig::bn_momentum)},
      {"train.moment_match", aux_bool(&AuxSwitches::moment_match)},
      {"train.instance_entropy", aux_bool(&AuxSwitches::instance_entropy)},
      {"train.batch_entropy", aux_bool(&AuxSwitches::batch_entropy)},
      {"train.teacher_bn_batch_stats", train_bool(&TrainConfig::teacher_bn_batch_stats)},

      {"quant.weight_bits",
       {[](RunConfig& c, const std::string& k, const std::string& v) {
          c.quant.weight_bits = static_cast<int>(parse_u64(k, v));
        },
        [](const RunConfig& c) { return std::to_string(c.quant.weight_bits); }}},
      {"quant.activation_bits",
       {[](RunConfig& c, const std::string& k, const std::string& v) {
          c.quant.activation_bits = static_cast<int>(parse_u64(k, v));
        },
        [](const RunConfig& c) { return std::to_string(c.quant.activation_bits); }}},
      {"quant.calib_batches", size_key(&RunConfig::calib_batches)},
      {"quant.calib_batch_size", size_key(&RunConfig::calib_batch_size)},

      {"qat.lr_student", double_key(&RunConfig::qat_lr_student)},
      {"qat.warm_start",
       {[](RunConfig& c, const std::string& k, const std::string& v) {
          c.qat_warm_start = parse_bool(k, v);
        },
        [](const RunConfig& c) { return render_bool(c.qat_warm_start); }}},

      {"eval.model", string_key(&RunConfig::eval_model)},

      {"samples.count", size_key(&RunConfig::sample_count)},
      {"samples.cols", size_key(&RunConfig::sample_cols)},
      {"samples.model", string_key(&RunConfig::sample_model)},
  };
  return table;
}

}  // namespace

std::map<std::string, std::string> parse_config_text(const std::string& text) {
  std::map<std::string, std::string> kv;
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    std::size_t hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    std::size_t eq = line.find('=');
    if (eq == std::string::npos) {
      throw std::invalid_argument("config line " + std::to_string(lineno) +
                               ": expected key=value, got '" + line + "'");
    }
    std::string key = trim(line.substr(0, eq));
    std::string value = trim(line.substr(eq + 1));
    if (key.empty()) {
      throw std::invalid_argument("config line " + std::to_string(lineno) + ": empty key");
    }
    if (kv.count(key)) {
      throw std::invalid_argument("config line " + std::to_string(lineno) +
                               ": duplicate key '" + key + "'");
    }
    kv[key] = value;
  }
  return kv;
}

std::map<std::string, std::string> parse_config_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError(IoErrorKind::io, "cannot open config file " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_config_text(buf.str());
}

void apply_overrides(std::map<std::string, std::string>& kv,
                     const std::vector<std::string>& overrides) {
  for (const std::string& item : overrides) {
    std::size_t eq = item.find('=');
    if (eq == std::string::npos || trim(item.substr(0, eq)).empty()) {
      throw std::invalid_argument("override '" + item + "': expected key=value");
    }
    kv[trim(item.substr(0, eq))] = trim(item.substr(eq + 1));
  }
}

RunConfig resolve_config(const std::map<std::string, std::string>& kv) {
  const auto& table = schema();
  std::vector<std::string> unknown;
  for (const auto& [key, value] : kv) {
    if (!table.count(key)) unknown.push_back(key);
  }
  if (!unknown.empty()) {
    std::string msg = "unknown config keys:";
    for (const std::string& k : unknown) msg += " " + k;
    throw std::invalid_argument(msg);
  }
  RunConfig cfg;
  for (const auto& [key, value] : kv) table.at(key).set(cfg, key, value);
  cfg.train.seed = cfg.seed;
  return cfg;
}

std::string render_config(const RunConfig& cfg) {
  std::ostringstream out;
  for (const auto& [key, entry] : schema()) out << key << " = " << entry.get(cfg) << '\n';
  return out.str();
}

}  // namespace dfkd
