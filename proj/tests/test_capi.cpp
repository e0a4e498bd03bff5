#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>

#include "dfkd.h"
#include "doctest.h"
#include "temp_dir.hpp"

namespace {

struct Handle {
  dfkd_config* cfg;
  Handle() : cfg(dfkd_config_create()) { REQUIRE(cfg != nullptr); }
  ~Handle() { dfkd_config_destroy(cfg); }
};

void set_ok(dfkd_config* cfg, const char* key, const char* value) {
  REQUIRE(dfkd_config_set(cfg, key, value) == DFKD_OK);
}

std::string render(const dfkd_config* cfg) {
  long n = dfkd_config_render(cfg, nullptr, 0);
  REQUIRE(n > 0);
  std::string buf(std::size_t(n) + 1, '\0');
  REQUIRE(dfkd_config_render(cfg, buf.data(), buf.size()) == n);
  buf.resize(std::size_t(n));
  return buf;
}

void make_tiny(dfkd_config* cfg) {
  set_ok(cfg, "seed", "5");
  set_ok(cfg, "data.height", "8");
  set_ok(cfg, "data.width", "8");
  set_ok(cfg, "data.classes", "3");
  set_ok(cfg, "data.train", "90");
  set_ok(cfg, "data.test", "45");
  set_ok(cfg, "teacher.width", "4");
  set_ok(cfg, "teacher.depth", "2");
  set_ok(cfg, "teacher.epochs", "3");
  set_ok(cfg, "teacher.batch_size", "30");
  set_ok(cfg, "train.latent_dim", "16");
  set_ok(cfg, "train.batch_size", "8");
  set_ok(cfg, "train.warmup_epochs", "1");
  set_ok(cfg, "train.epochs", "1");
  set_ok(cfg, "train.batches_per_epoch", "2");
  set_ok(cfg, "quant.calib_batches", "2");
  set_ok(cfg, "quant.calib_batch_size", "8");
  set_ok(cfg, "samples.count", "4");
  set_ok(cfg, "samples.cols", "2");
}

}  // namespace

TEST_CASE("version and error strings are always present") {
  REQUIRE(dfkd_version() != nullptr);
  CHECK(std::strlen(dfkd_version()) >= 5);
  REQUIRE(dfkd_last_error() != nullptr);
}

TEST_CASE("config handle: defaults, set, render, validation") {
  Handle h;
  std::string text = render(h.cfg);
  CHECK(text.find("seed = 0\n") != std::string::npos);
  CHECK(text.find("train.alpha = 0.1\n") != std::string::npos);

  set_ok(h.cfg, "seed", "9");
  set_ok(h.cfg, "train.alpha", "0.5");
  text = render(h.cfg);
  CHECK(text.find("seed = 9\n") != std::string::npos);
  CHECK(text.find("train.alpha = 0.5\n") != std::string::npos);

  CHECK(dfkd_config_set(h.cfg, "train.alhpa", "0.5") == DFKD_ERROR_INVALID_ARGUMENT);
  CHECK(std::string(dfkd_last_error()).find("unknown config keys") != std::string::npos);
  CHECK(dfkd_config_set(h.cfg, "train.epochs", "soon") == DFKD_ERROR_INVALID_ARGUMENT);
  // Failed sets leave the config untouched.
  CHECK(render(h.cfg) == text);

  // Truncating render still NUL-terminates.
  char small[8];
  long full = dfkd_config_render(h.cfg, small, sizeof(small));
  CHECK(full == long(text.size()));
  CHECK(small[7] == '\0');
  CHECK(std::string(small) == text.substr(0, 7));

  CHECK(dfkd_config_set(nullptr, "seed", "1") == DFKD_ERROR_INVALID_ARGUMENT);
  CHECK(dfkd_config_set(h.cfg, nullptr, "1") == DFKD_ERROR_INVALID_ARGUMENT);
  CHECK(dfkd_config_render(nullptr, nullptr, 0) == -1);
  CHECK(dfkd_gen_data(nullptr, "x") == DFKD_ERROR_INVALID_ARGUMENT);
  CHECK(dfkd_eval(h.cfg, "x", nullptr) == DFKD_ERROR_INVALID_ARGUMENT);
}

TEST_CASE("config files merge over current entries") {
  TempDir dir("capi_cfg");
  {
    std::ofstream out(dir.file("a.cfg"));
    out << "seed = 3\ndata.classes = 7\n";
  }
  Handle h;
  set_ok(h.cfg, "seed", "1");
  set_ok(h.cfg, "train.tau", "2");
  REQUIRE(dfkd_config_load(h.cfg, dir.file("a.cfg").c_str()) == DFKD_OK);
  std::string text = render(h.cfg);
  CHECK(text.find("seed = 3\n") != std::string::npos);        // file wins
  CHECK(text.find("data.classes = 7\n") != std::string::npos);
  CHECK(text.find("train.tau = 2.0\n") != std::string::npos);  // earlier set kept

  CHECK(dfkd_config_load(h.cfg, dir.file("absent.cfg").c_str()) == DFKD_ERROR_IO);
  CHECK(std::string(dfkd_last_error()).find("absent.cfg") != std::string::npos);
  {
    std::ofstream out(dir.file("bad.cfg"));
    out << "data.classes = 7\nwhat.is.this = 1\n";
  }
  CHECK(dfkd_config_load(h.cfg, dir.file("bad.cfg").c_str()) ==
        DFKD_ERROR_INVALID_ARGUMENT);
  CHECK(render(h.cfg) == text);  // failed load left entries alone
}

TEST_CASE("pipeline steps run end to end and map error kinds") {
  TempDir dir("capi_pipe");
  const std::string out = dir.file("run");
  Handle h;
  make_tiny(h.cfg);

  REQUIRE(dfkd_gen_data(h.cfg, out.c_str()) == DFKD_OK);
  CHECK(std::filesystem::exists(out + "/data_train.dfkd"));
  CHECK(std::filesystem::exists(out + "/data_test.dfkd"));
  CHECK(std::filesystem::exists(out + "/config.resolved"));

  REQUIRE(dfkd_train_teacher(h.cfg, out.c_str()) == DFKD_OK);
  CHECK(std::filesystem::exists(out + "/teacher.dfkd"));
  CHECK(std::filesystem::exists(out + "/teacher_metrics.jsonl"));

  double acc = -1.0;
  REQUIRE(dfkd_eval(h.cfg, out.c_str(), &acc) == DFKD_OK);
  CHECK(acc > 0.3);
  CHECK(acc <= 1.0);

  REQUIRE(dfkd_warmup_gen(h.cfg, out.c_str()) == DFKD_OK);
  CHECK(std::filesystem::exists(out + "/generator_0.dfkd"));
  CHECK(std::filesystem::exists(out + "/metrics.jsonl"));

  REQUIRE(dfkd_quantize(h.cfg, out.c_str()) == DFKD_OK);
  CHECK(std::filesystem::exists(out + "/quantized_ptq.dfkd"));
  set_ok(h.cfg, "eval.model", "quantized_ptq.dfkd");
  double qacc = -1.0;
  REQUIRE(dfkd_eval(h.cfg, out.c_str(), &qacc) == DFKD_OK);
  CHECK(qacc > 0.3);

  REQUIRE(dfkd_dump_samples(h.cfg, out.c_str()) == DFKD_OK);
  CHECK(std::filesystem::exists(out + "/samples.ppm"));

  // Error kinds surface through the status codes.
  set_ok(h.cfg, "eval.model", "absent.dfkd");
  CHECK(dfkd_eval(h.cfg, out.c_str(), &acc) == DFKD_ERROR_IO);

  {
    std::ofstream garbage(out + "/garbage.dfkd", std::ios::binary);
    garbage << "XXXXXXXX not one of ours";
  }
  set_ok(h.cfg, "eval.model", "garbage.dfkd");
  CHECK(dfkd_eval(h.cfg, out.c_str(), &acc) == DFKD_ERROR_BAD_MAGIC);

  {
    std::ifstream in(out + "/teacher.dfkd", std::ios::binary);
    std::string bytes((std::istreambuf_iterator<char>(in)),
                      std::istreambuf_iterator<char>());
    std::ofstream cut(out + "/cut.dfkd", std::ios::binary);
    cut.write(bytes.data(), std::streamsize(bytes.size() / 2));
  }
  set_ok(h.cfg, "eval.model", "cut.dfkd");
  CHECK(dfkd_eval(h.cfg, out.c_str(), &acc) == DFKD_ERROR_TRUNCATED);

  set_ok(h.cfg, "eval.model", "data_test.dfkd");
  CHECK(dfkd_eval(h.cfg, out.c_str(), &acc) == DFKD_ERROR_MISMATCH);

  // Same config, fresh directory: artifacts are byte-identical.
  const std::string out2 = dir.file("run2");
  set_ok(h.cfg, "eval.model", "teacher.dfkd");
  REQUIRE(dfkd_gen_data(h.cfg, out2.c_str()) == DFKD_OK);
  std::ifstream a(out + "/data_train.dfkd", std::ios::binary);
  std::ifstream b(out2 + "/data_train.dfkd", std::ios::binary);
  std::string abytes((std::istreambuf_iterator<char>(a)), std::istreambuf_iterator<char>());
  std::string bbytes((std::istreambuf_iterator<char>(b)), std::istreambuf_iterator<char>());
  CHECK(abytes == bbytes);
}
