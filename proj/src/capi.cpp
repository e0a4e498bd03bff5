#include "dfkd.h"

#include <cstring>
#include <map>
#include <string>

#include "dfkd/config.hpp"
#include "dfkd/io.hpp"
#include "dfkd/pipeline.hpp"

struct dfkd_config {
  std::map<std::string, std::string> kv;
};

namespace {

thread_local std::string g_last_error;

dfkd_status fail(dfkd_status status, const std::string& message) {
  g_last_error = message;
  return status;
}

dfkd_status status_of(const dfkd::IoError& e) {
  switch (e.kind) {
    case dfkd::IoErrorKind::io: return DFKD_ERROR_IO;
    case dfkd::IoErrorKind::bad_magic: return DFKD_ERROR_BAD_MAGIC;
    case dfkd::IoErrorKind::truncated: return DFKD_ERROR_TRUNCATED;
    case dfkd::IoErrorKind::mismatch: return DFKD_ERROR_MISMATCH;
  }
  return DFKD_ERROR_RUNTIME;
}

template <typename Fn>
dfkd_status guarded(Fn&& fn) {
  try {
    fn();
    return DFKD_OK;
  } catch (const dfkd::IoError& e) {
    return fail(status_of(e), e.what());
  } catch (const std::invalid_argument& e) {
    return fail(DFKD_ERROR_INVALID_ARGUMENT, e.what());
  } catch (const std::exception& e) {
    return fail(DFKD_ERROR_RUNTIME, e.what());
  }
}

dfkd_status run_step(const dfkd_config* cfg, const char* out_dir,
                     void (*step)(const dfkd::RunConfig&, const std::string&)) {
  if (!cfg || !out_dir) return fail(DFKD_ERROR_INVALID_ARGUMENT, "null argument");
  return guarded([&] { step(dfkd::resolve_config(cfg->kv), out_dir); });
}

}  // namespace

extern "C" {

const char* dfkd_version(void) { return "1.0.0"; }

const char* dfkd_last_error(void) { return g_last_error.c_str(); }

dfkd_config* dfkd_config_create(void) { return new (std::nothrow) dfkd_config(); }

void dfkd_config_destroy(dfkd_config* cfg) { delete cfg; }

dfkd_status dfkd_config_load(dfkd_config* cfg, const char* path) {
  if (!cfg || !path) return fail(DFKD_ERROR_INVALID_ARGUMENT, "null argument");
  return guarded([&] {
    std::map<std::string, std::string> merged = cfg->kv;
    for (auto& [key, value] : dfkd::parse_config_file(path)) merged[key] = value;
    dfkd::resolve_config(merged);  // validate before committing
    cfg->kv = std::move(merged);
  });
}

dfkd_status dfkd_config_set(dfkd_config* cfg, const char* key, const char* value) {
  if (!cfg || !key || !value) return fail(DFKD_ERROR_INVALID_ARGUMENT, "null argument");
  return guarded([&] {
    std::map<std::string, std::string> merged = cfg->kv;
    merged[key] = value;
    dfkd::resolve_config(merged);
    cfg->kv = std::move(merged);
  });
}

long dfkd_config_render(const dfkd_config* cfg, char* buf, size_t cap) {
  if (!cfg) {
    fail(DFKD_ERROR_INVALID_ARGUMENT, "null argument");
    return -1;
  }
  std::string text;
  dfkd_status status =
      guarded([&] { text = dfkd::render_config(dfkd::resolve_config(cfg->kv)); });
  if (status != DFKD_OK) return -1;
  if (buf && cap > 0) {
    const size_t n = text.size() < cap - 1 ? text.size() : cap - 1;
    std::memcpy(buf, text.data(), n);
    buf[n] = '\0';
  }
  return long(text.size());
}

dfkd_status dfkd_gen_data(const dfkd_config* cfg, const char* out_dir) {
  return run_step(cfg, out_dir, dfkd::pipeline_gen_data);
}

dfkd_status dfkd_train_teacher(const dfkd_config* cfg, const char* out_dir) {
  return run_step(cfg, out_dir, dfkd::pipeline_train_teacher);
}

dfkd_status dfkd_warmup_gen(const dfkd_config* cfg, const char* out_dir) {
  return run_step(cfg, out_dir, dfkd::pipeline_warmup_generators);
}

dfkd_status dfkd_distill(const dfkd_config* cfg, const char* out_dir) {
  return run_step(cfg, out_dir, dfkd::pipeline_distill);
}

dfkd_status dfkd_quantize(const dfkd_config* cfg, const char* out_dir) {
  return run_step(cfg, out_dir, dfkd::pipeline_quantize);
}

dfkd_status dfkd_qat_distill(const dfkd_config* cfg, const char* out_dir) {
  return run_step(cfg, out_dir, dfkd::pipeline_qat_distill);
}

dfkd_status dfkd_eval(const dfkd_config* cfg, const char* out_dir, double* accuracy) {
  if (!cfg || !out_dir || !accuracy)
    return fail(DFKD_ERROR_INVALID_ARGUMENT, "null argument");
  return guarded(
      [&] { *accuracy = dfkd::pipeline_eval(dfkd::resolve_config(cfg->kv), out_dir); });
}

dfkd_status dfkd_dump_samples(const dfkd_config* cfg, const char* out_dir) {
  return run_step(cfg, out_dir, dfkd::pipeline_dump_samples);
}

}  // extern "C"
