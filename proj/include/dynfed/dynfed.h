/*
 * dynfed C API
 *
 * Federated-continual training simulator with prediction-distance update
 * gating. All handles are opaque; every call returns a dynfed_status and the
 * message of the most recent failure on the calling thread is available from
 * dynfed_last_error().
 */
#ifndef DYNFED_DYNFED_H
#define DYNFED_DYNFED_H

#include <stddef.h>
#include <stdint.h>

#if defined(_WIN32)
#  if defined(DYNFED_BUILDING_LIBRARY)
#    define DYNFED_API __declspec(dllexport)
#  else
#    define DYNFED_API __declspec(dllimport)
#  endif
#else
#  define DYNFED_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum dynfed_status {
  DYNFED_OK = 0,
  DYNFED_ERR_INVALID_ARGUMENT = 1, /* null handle, bad length, contract violation */
  DYNFED_ERR_INVALID_CONFIG = 2,   /* configuration rejected; message names the field */
  DYNFED_ERR_IO = 3,
  DYNFED_ERR_RUNTIME = 4           /* numeric failure or other runtime error */
} dynfed_status;

typedef struct dynfed_config dynfed_config;
typedef struct dynfed_gate dynfed_gate;

DYNFED_API const char* dynfed_version(void);

/* Message of the last failed call on this thread ("" if none). */
DYNFED_API const char* dynfed_last_error(void);

/* ---- scenario configuration ------------------------------------------- */

/* Library defaults (cd scenario, dynbc, seeds 0,1,2). */
DYNFED_API dynfed_status dynfed_config_create(dynfed_config** out);
DYNFED_API void dynfed_config_destroy(dynfed_config* config);

/* Replaces the whole configuration with a named preset. */
DYNFED_API dynfed_status dynfed_config_load_preset(dynfed_config* config, const char* name);

/* Overrides the keys present in a JSON object document. */
DYNFED_API dynfed_status dynfed_config_merge_json(dynfed_config* config, const char* json_text);

/* Overrides one field from its command-line text, e.g. ("seeds", "0,1,2"). */
DYNFED_API dynfed_status dynfed_config_set(dynfed_config* config, const char* key, const char* value);

DYNFED_API dynfed_status dynfed_config_validate(const dynfed_config* config);

/*
 * Writes the configuration as JSON into buf (NUL-terminated, truncated to
 * capacity). *required receives the full size including the terminator.
 */
DYNFED_API dynfed_status dynfed_config_to_json(const dynfed_config* config, char* buf, size_t capacity,
                                               size_t* required);

/* Number of preset names and the i-th name (static storage). */
DYNFED_API size_t dynfed_preset_count(void);
DYNFED_API const char* dynfed_preset_name(size_t index);

/* Preset used as the base for a scenario name ("cd", "cf", "combined"); NULL if unknown. */
DYNFED_API const char* dynfed_default_preset(const char* scenario);

/* ---- commands ----------------------------------------------------------- */

/* Each command writes its artifacts to the configured output directory
 * (config out_dir, else $DYNFED_OUT_DIR, else ./dynfed_out). Existing
 * non-empty directories are only replaced when force != 0. */
DYNFED_API dynfed_status dynfed_run(const dynfed_config* config, int jobs, int force);
DYNFED_API dynfed_status dynfed_ablate_threshold(const dynfed_config* config, const double* factors, size_t n_factors,
                                                 int jobs, int force);
DYNFED_API dynfed_status dynfed_ablate_refaug(const dynfed_config* config, int jobs, int force);
DYNFED_API dynfed_status dynfed_gate_trace(const dynfed_config* config, int jobs, int force);

/* ---- gate state machine --------------------------------------------------- */

DYNFED_API dynfed_status dynfed_gate_create(double threshold_factor, double delta_floor, int warmup_rounds,
                                            dynfed_gate** out);
DYNFED_API void dynfed_gate_destroy(dynfed_gate* gate);

/* Per-client check; *accepted is 1 or 0, *delta_max_after the tracked maximum. */
DYNFED_API dynfed_status dynfed_gate_spatial(dynfed_gate* gate, double delta, int* accepted, double* delta_max_after);

/* Aggregate check; *commit is 1 (commit) or 0 (rollback). Never changes the maximum. */
DYNFED_API dynfed_status dynfed_gate_temporal(const dynfed_gate* gate, double delta, int* commit);

DYNFED_API dynfed_status dynfed_gate_end_round(dynfed_gate* gate);
DYNFED_API dynfed_status dynfed_gate_delta_max(const dynfed_gate* gate, double* out);

/* ---- metrics -------------------------------------------------------------- */

/* Dice of (pred > threshold) against a {0,1} mask of n values. */
DYNFED_API dynfed_status dynfed_dice(const double* pred, const uint8_t* mask, size_t n, double threshold,
                                     double* out);

#ifdef __cplusplus
}
#endif

#endif /* DYNFED_DYNFED_H */
