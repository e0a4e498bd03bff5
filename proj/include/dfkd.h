#ifndef DFKD_H
#define DFKD_H

/* C interface to the data-free distillation and quantization pipelines.
 * Every step reads and writes fixed-name artifacts inside an output
 * directory; configuration is a flat key=value store resolved against the
 * library's schema. All functions are synchronous and single-threaded. */

#include <stddef.h>

#ifdef __cplusplus
extern "C" {
#endif

typedef enum dfkd_status {
  DFKD_OK = 0,
  DFKD_ERROR_INVALID_ARGUMENT = 1, /* bad key, value, or null pointer */
  DFKD_ERROR_IO = 2,               /* cannot open, read or write a file */
  DFKD_ERROR_BAD_MAGIC = 3,        /* file is not a dfkd artifact */
  DFKD_ERROR_TRUNCATED = 4,        /* file shorter than its header promises */
  DFKD_ERROR_MISMATCH = 5,         /* artifact structure differs from expected */
  DFKD_ERROR_RUNTIME = 6,          /* anything else (diverged training, ...) */
} dfkd_status;

const char* dfkd_version(void);

/* Message from the most recent failing call on the calling thread; empty
 * string if none. The pointer stays valid until the next failing call. */
const char* dfkd_last_error(void);

/* Opaque run configuration holding raw key=value entries. */
typedef struct dfkd_config dfkd_config;

/* Fresh configuration with every key at its default. Returns NULL only on
 * allocation failure. Destroy with dfkd_config_destroy. */
dfkd_config* dfkd_config_create(void);
void dfkd_config_destroy(dfkd_config* cfg);

/* Merges the entries of a key=value file over the current ones. The file
 * must parse and the merged result must resolve, otherwise the config is
 * left unchanged. */
dfkd_status dfkd_config_load(dfkd_config* cfg, const char* path);

/* Sets one key. The key must exist in the schema and the value must parse,
 * otherwise the config is left unchanged. */
dfkd_status dfkd_config_set(dfkd_config* cfg, const char* key, const char* value);

/* Renders every effective key sorted, one "key = value" per line. Writes at
 * most cap-1 bytes plus a NUL when buf is non-null; returns the full text
 * length (excluding the NUL), or -1 on error. */
long dfkd_config_render(const dfkd_config* cfg, char* buf, size_t cap);

/* Pipeline steps. Artifacts live under out_dir, which is created if needed:
 * data_train.dfkd / data_test.dfkd, teacher.dfkd, generator_<j>.dfkd,
 * student_<i>.dfkd, quantized_ptq.dfkd, quantized_qat.dfkd, metrics.jsonl,
 * teacher_metrics.jsonl, config.resolved, samples.ppm, timings.txt. */
dfkd_status dfkd_gen_data(const dfkd_config* cfg, const char* out_dir);
dfkd_status dfkd_train_teacher(const dfkd_config* cfg, const char* out_dir);
dfkd_status dfkd_warmup_gen(const dfkd_config* cfg, const char* out_dir);
dfkd_status dfkd_distill(const dfkd_config* cfg, const char* out_dir);
dfkd_status dfkd_quantize(const dfkd_config* cfg, const char* out_dir);
dfkd_status dfkd_qat_distill(const dfkd_config* cfg, const char* out_dir);

/* Test accuracy (0..1) of the model named by the eval.model key. */
dfkd_status dfkd_eval(const dfkd_config* cfg, const char* out_dir, double* accuracy);

/* Tiled generator samples as a PPM image. */
dfkd_status dfkd_dump_samples(const dfkd_config* cfg, const char* out_dir);

#ifdef __cplusplus
}
#endif

#endif /* DFKD_H */
