// Command-line front end; talks to the library only through the C API.
#include <cstdint>
#include <cstdio>
#include <memory>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "dfkd.h"

namespace {

struct Options {
  std::string config_path;
  std::string out_dir = "run";
  std::vector<std::string> overrides;
  std::uint64_t seed = 0;
  bool seed_set = false;
};

struct ConfigDeleter {
  void operator()(dfkd_config* cfg) const { dfkd_config_destroy(cfg); }
};
using ConfigHandle = std::unique_ptr<dfkd_config, ConfigDeleter>;

int fail_with_last_error(const char* when) {
  std::fprintf(stderr, "error: %s: %s\n", when, dfkd_last_error());
  return 1;
}

/// Builds the effective configuration: file first, then --seed, then
/// --override in order. Returns nullptr after printing the error.
ConfigHandle build_config(const Options& opts) {
  ConfigHandle cfg(dfkd_config_create());
  if (!cfg) {
    std::fprintf(stderr, "error: out of memory\n");
    return nullptr;
  }
  if (!opts.config_path.empty() &&
      dfkd_config_load(cfg.get(), opts.config_path.c_str()) != DFKD_OK) {
    fail_with_last_error("loading config");
    return nullptr;
  }
  if (opts.seed_set &&
      dfkd_config_set(cfg.get(), "seed", std::to_string(opts.seed).c_str()) != DFKD_OK) {
    fail_with_last_error("setting seed");
    return nullptr;
  }
  for (const std::string& item : opts.overrides) {
    const std::size_t eq = item.find('=');
    if (eq == std::string::npos || eq == 0) {
      std::fprintf(stderr, "error: override '%s': expected key=value\n", item.c_str());
      return nullptr;
    }
    const std::string key = item.substr(0, eq);
    const std::string value = item.substr(eq + 1);
    if (dfkd_config_set(cfg.get(), key.c_str(), value.c_str()) != DFKD_OK) {
      fail_with_last_error("applying override");
      return nullptr;
    }
  }
  return cfg;
}

int run_step(const Options& opts, dfkd_status (*step)(const dfkd_config*, const char*),
             const char* name) {
  ConfigHandle cfg = build_config(opts);
  if (!cfg) return 1;
  if (step(cfg.get(), opts.out_dir.c_str()) != DFKD_OK) return fail_with_last_error(name);
  return 0;
}

int run_eval(const Options& opts) {
  ConfigHandle cfg = build_config(opts);
  if (!cfg) return 1;
  double accuracy = 0.0;
  if (dfkd_eval(cfg.get(), opts.out_dir.c_str(), &accuracy) != DFKD_OK)
    return fail_with_last_error("eval");
  std::printf("accuracy %.4f\n", accuracy);
  return 0;
}

void add_common(CLI::App* sub, Options& opts) {
  sub->add_option("--config", opts.config_path, "key=value configuration file");
  sub->add_option("--out-dir", opts.out_dir, "artifact directory (default: run)");
  sub->add_option("--override", opts.overrides, "config override key=value (repeatable)");
  sub->add_option("--seed", opts.seed, "run seed (same as --override seed=N)")
      ->each([&opts](const std::string&) { opts.seed_set = true; });
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{std::string("data-free distillation and quantization (dfkd ") +
               dfkd_version() + ")"};
  app.require_subcommand(1);

  Options opts;
  int rc = 0;

  struct Step {
    const char* name;
    const char* help;
    dfkd_status (*fn)(const dfkd_config*, const char*);
  };
  const std::vector<Step> steps = {
      {"gen-data", "synthesize the train/test dataset", dfkd_gen_data},
      {"train-teacher", "train the teacher on the train split", dfkd_train_teacher},
      {"warmup-gen", "pre-train generators against the teacher", dfkd_warmup_gen},
      {"distill", "adversarial data-free distillation", dfkd_distill},
      {"quantize", "post-training quantization of the teacher", dfkd_quantize},
      {"qat-distill", "quantization-aware data-free distillation", dfkd_qat_distill},
      {"dump-samples", "render generator samples to samples.ppm", dfkd_dump_samples},
  };
  for (const Step& step : steps) {
    CLI::App* sub = app.add_subcommand(step.name, step.help);
    add_common(sub, opts);
    sub->callback([&rc, &opts, step] { rc = run_step(opts, step.fn, step.name); });
  }
  CLI::App* eval_cmd =
      app.add_subcommand("eval", "test accuracy of the model named by eval.model");
  add_common(eval_cmd, opts);
  eval_cmd->callback([&rc, &opts] { rc = run_eval(opts); });

  CLI11_PARSE(app, argc, argv);
  return rc;
}
