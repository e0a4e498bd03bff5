#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <map>
#include <string>

#include "dfkd/config.hpp"
#include "doctest.h"

using namespace dfkd;

using doctest::Contains;

TEST_CASE("key=value parsing with comments, blanks and trimming") {
  const std::string text =
      "# run settings\n"
      "seed = 7\n"
      "\n"
      "data.classes=5   # trailing comment\n"
      "  eval.model =  student_0.dfkd  \n";
  std::map<std::string, std::string> kv = parse_config_text(text);
  CHECK(kv.size() == 3);
  CHECK(kv.at("seed") == "7");
  CHECK(kv.at("data.classes") == "5");
  CHECK(kv.at("eval.model") == "student_0.dfkd");

  CHECK_THROWS_WITH(parse_config_text("seed\n"), Contains("expected key=value"));
  CHECK_THROWS_WITH(parse_config_text("seed = 1\nseed = 2\n"), Contains("duplicate key"));
  CHECK_THROWS_WITH(parse_config_text(" = 3\n"), Contains("empty key"));
  // Error messages carry the line number.
  CHECK_THROWS_WITH(parse_config_text("a = 1\n\nbroken line\n"), Contains("line 3"));
}

TEST_CASE("resolution applies defaults, typed values and rejects unknowns") {
  RunConfig defaults = resolve_config({});
  CHECK(defaults.seed == 0);
  CHECK(defaults.data_classes == 10);
  CHECK(defaults.train.alpha == 0.1);
  CHECK(defaults.train.batch_size == 128);
  CHECK(defaults.train.epochs == 60);
  CHECK(defaults.train.warmup_epochs == 20);
  CHECK(defaults.quant.weight_bits == 8);
  CHECK(defaults.qat_warm_start);

  RunConfig cfg = resolve_config(parse_config_text(
      "seed = 9\n"
      "train.alpha = 0.5\n"
      "train.generators = 2\n"
      "train.students = 2\n"
      "train.moment_match = false\n"
      "train.teacher_bn_batch_stats = true\n"
      "quant.weight_bits = 4\n"
      "qat.warm_start = 0\n"
      "eval.model = quantized_ptq.dfkd\n"));
  CHECK(cfg.seed == 9);
  CHECK(cfg.train.seed == 9);  // the global seed feeds the training config
  CHECK(cfg.train.alpha == 0.5);
  CHECK(cfg.train.n_generators == 2);
  CHECK(cfg.train.n_students == 2);
  CHECK_FALSE(cfg.train.aux.moment_match);
  CHECK(cfg.train.aux.instance_entropy);
  CHECK(cfg.train.teacher_bn_batch_stats);
  CHECK(cfg.quant.weight_bits == 4);
  CHECK_FALSE(cfg.qat_warm_start);
  CHECK(cfg.eval_model == "quantized_ptq.dfkd");

  CHECK_THROWS_WITH(resolve_config({{"train.alhpa", "0.5"}, {"zed", "1"}}),
                    Contains("unknown config keys: train.alhpa zed"));
  CHECK_THROWS_WITH(resolve_config({{"seed", "-3"}}), Contains("seed"));
  CHECK_THROWS_WITH(resolve_config({{"train.alpha", "fast"}}), Contains("train.alpha"));
  CHECK_THROWS_WITH(resolve_config({{"train.moment_match", "yes"}}), Contains("boolean"));
  CHECK_THROWS_WITH(resolve_config({{"train.epochs", "2.5"}}), Contains("integer"));
}

TEST_CASE("overrides replace file values and validate their shape") {
  std::map<std::string, std::string> kv = parse_config_text("seed = 1\ntrain.tau = 2\n");
  apply_overrides(kv, {"seed=5", "train.alpha = 0.3"});
  RunConfig cfg = resolve_config(kv);
  CHECK(cfg.seed == 5);
  CHECK(cfg.train.tau == 2.0);
  CHECK(cfg.train.alpha == 0.3);

  CHECK_THROWS_WITH(apply_overrides(kv, {"seedless"}), Contains("expected key=value"));
  CHECK_THROWS_WITH(apply_overrides(kv, {"=4"}), Contains("expected key=value"));
}

TEST_CASE("rendering is total, stable and re-parses to the same config") {
  RunConfig cfg = resolve_config(parse_config_text(
      "seed = 3\ntrain.alpha = 0.25\nquant.activation_bits = 6\n"));
  const std::string text = render_config(cfg);
  CHECK(render_config(cfg) == text);

  RunConfig back = resolve_config(parse_config_text(text));
  CHECK(render_config(back) == text);
  CHECK(back.seed == 3);
  CHECK(back.train.alpha == 0.25);
  CHECK(back.quant.activation_bits == 6);

  // Every schema key shows up exactly once.
  std::map<std::string, std::string> kv = parse_config_text(text);
  CHECK(kv.count("seed") == 1);
  CHECK(kv.count("data.height") == 1);
  CHECK(kv.count("teacher.lr") == 1);
  CHECK(kv.count("student.width") == 1);
  CHECK(kv.count("train.batches_per_epoch") == 1);
  CHECK(kv.count("quant.calib_batch_size") == 1);
  CHECK(kv.count("qat.lr_student") == 1);
  CHECK(kv.count("samples.model") == 1);
}
