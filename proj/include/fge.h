#ifndef FGE_H
#define FGE_H

/* C interface to the forgery-erasure workbench. A run owns an output
 * directory and a configuration; stages read and write only inside that
 * directory. Handles are opaque and single-threaded; distinct runs are
 * independent. */

#ifdef __cplusplus
extern "C" {
#endif

typedef enum fge_code {
  FGE_OK = 0,
  FGE_E_INVALID_ARG = 1,
  FGE_E_SHAPE_MISMATCH = 2,
  FGE_E_DEGENERATE_NORM = 3,
  FGE_E_NOT_SCALAR = 4,
  FGE_E_IO = 5,
  FGE_E_MALFORMED_HEADER = 6,
  FGE_E_EMPTY_PROMPT = 7,
  FGE_E_BAD_RESOLUTION = 8,
  FGE_E_BATCH_TOO_SMALL = 9,
  FGE_E_LAYER_SET_MISMATCH = 10,
  FGE_E_ZERO_GRADIENT = 11,
  FGE_E_UNKNOWN_SOURCE = 12,
  FGE_E_DIM_MISMATCH = 13,
  FGE_E_BAD_QUALITY = 14,
  FGE_E_RANK_DEFICIENT = 15,
  FGE_E_STAGE_FAILURE = 16,
  FGE_E_CONFIG = 17,
  FGE_E_INTERNAL = 18
} fge_code;

typedef struct fge_run fge_run;

const char* fge_version(void);

/* Opens a run rooted at out_dir. config_path may be NULL for defaults or
 * name a JSON config file. On success *out owns the handle; close it with
 * fge_run_close. */
fge_code fge_run_open(const char* out_dir, const char* config_path,
                      fge_run** out);
void fge_run_close(fge_run* run);

/* Overrides one config key before stages run. The value uses the config
 * file syntax: bare numbers, "8/255" budgets, plain strings, or JSON arrays
 * for the robustness sweeps. */
fge_code fge_run_set(fge_run* run, const char* key, const char* value);

/* Effective config as pretty JSON. The string is malloc-owned; release it
 * with fge_string_free. */
fge_code fge_run_config_json(fge_run* run, char** out);

/* Runs one stage: gen-data, train-backbone, train-detectors, attack,
 * evaluate, ablate-granularity, ablate-source-match, robustness, or
 * export-features. Stages expect their predecessors' artifacts on disk. */
fge_code fge_run_stage(fge_run* run, const char* stage);

/* All stages in order. */
fge_code fge_run_pipeline(fge_run* run);

/* Message for the most recent failure on the calling thread; empty string
 * when nothing failed yet. The pointer stays valid until the next failure. */
const char* fge_last_error(void);

void fge_string_free(char* s);

#ifdef __cplusplus
}
#endif

#endif /* FGE_H */
