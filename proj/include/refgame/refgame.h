#ifndef REFGAME_H
#define REFGAME_H

/* C interface to the referential-game laboratory. Every call returns an
 * rg_status; on failure rg_last_error() holds a message for the calling
 * thread. Strings returned through out-parameters are freed with
 * rg_string_free. */

#include <stddef.h>
#include <stdint.h>

#if defined(_WIN32)
#define RG_API __declspec(dllexport)
#else
#define RG_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum rg_status {
    RG_OK = 0,
    RG_INVALID_ARGUMENT = 1,
    RG_SHAPE_MISMATCH = 2,
    RG_NOT_FOUND = 3,
    RG_CONFLICT = 4,
    RG_DEPENDENCY = 5,
    RG_VERSION_MISMATCH = 6,
    RG_IO = 7,
    RG_FORBIDDEN = 8,
    RG_INTERNAL = 9
} rg_status;

typedef struct rg_experiment rg_experiment;

typedef void (*rg_progress_fn)(const char* line, void* user);

RG_API const char* rg_status_name(rg_status status);
RG_API const char* rg_last_error(void);
RG_API void rg_string_free(char* s);

/* config_path may be NULL: then <out_dir>/config.json is used when present,
 * else the built-in defaults. out_dir may be NULL to keep the config's. */
RG_API rg_status rg_experiment_open(const char* config_path, const char* out_dir, rg_experiment** out);
RG_API void rg_experiment_close(rg_experiment* e);
RG_API rg_status rg_experiment_set_progress(rg_experiment* e, rg_progress_fn fn, void* user);
RG_API rg_status rg_experiment_set_workers(rg_experiment* e, int workers);
/* Effective configuration as JSON, and the output directory. */
RG_API rg_status rg_experiment_config(const rg_experiment* e, char** json);
RG_API const char* rg_experiment_out_dir(const rg_experiment* e);

/* A NULL seed keeps the configuration's. For gen-data and pretrain the seed
 * is the world / pretraining seed and is persisted to <out>/config.json; for
 * the other stages it restricts the run to that single matrix seed.
 * regimes/n_regimes select a subset of configured regimes (NULL/0: all). */
RG_API rg_status rg_gen_data(rg_experiment* e, const uint64_t* seed);
RG_API rg_status rg_pretrain(rg_experiment* e, const uint64_t* seed);
RG_API rg_status rg_train(rg_experiment* e, const char* const* regimes, size_t n_regimes, const uint64_t* seed);
RG_API rg_status rg_evaluate(rg_experiment* e, const char* const* regimes, size_t n_regimes, const uint64_t* seed);
RG_API rg_status rg_drift_report(rg_experiment* e, const char* const* regimes, size_t n_regimes,
                                 const uint64_t* seed, char** csv);
RG_API rg_status rg_ablate(rg_experiment* e, const uint64_t* seed);

/* Blocks serving the session API until rg_serve_stop is called from another
 * thread (or a signal handler). port 0 keeps the configured port. */
RG_API rg_status rg_serve(rg_experiment* e, const uint64_t* seed, const char* host, int port);
RG_API void rg_serve_stop(rg_experiment* e);

#ifdef __cplusplus
}
#endif

#endif
