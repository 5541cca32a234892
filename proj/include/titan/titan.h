/*
 * titan — heterogeneous mixture-of-experts traffic forecaster.
 *
 * C API over the C++ core: opaque handles, integer status codes, a
 * thread-local error message. Everything returned through an out-pointer is
 * owned by the caller and released with the matching *_free function.
 */
#ifndef TITAN_TITAN_H
#define TITAN_TITAN_H

#include <stdint.h>

#if defined(_WIN32)
#define TITAN_API __declspec(dllexport)
#else
#define TITAN_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum titan_status {
  TITAN_OK = 0,
  TITAN_ERR_INVALID_ARGUMENT = 1,
  TITAN_ERR_FORMAT = 2,
  TITAN_ERR_IO = 3,
  TITAN_ERR_CONFIG = 4,
  TITAN_ERR_DIVERGED = 5,
  TITAN_ERR_VERSION = 6,
  TITAN_ERR_INTERNAL = 7
} titan_status;

TITAN_API const char* titan_version(void);
TITAN_API const char* titan_status_name(titan_status s);
/* message of the last failing call on this thread; empty string if none */
TITAN_API const char* titan_last_error(void);
/* "debug" | "info" | "warn" | "error" | "off" */
TITAN_API titan_status titan_set_log_level(const char* level);

typedef struct titan_series titan_series;
typedef struct titan_prior titan_prior;
typedef struct titan_model titan_model;
typedef struct titan_metrics titan_metrics;

/* ---- sensor series ---------------------------------------------------- */

/* header "timestamp,<id>,...", epoch seconds or ISO-8601, empty cell = missing */
TITAN_API titan_status titan_series_load_csv(const char* path, titan_series** out);
TITAN_API titan_status titan_series_save_csv(const titan_series* s, const char* path);
/* deterministic synthetic traffic; interval_min must divide a day */
TITAN_API titan_status titan_series_generate(int32_t sensors, int32_t days,
                                             int32_t interval_min, uint64_t seed,
                                             titan_series** out);
TITAN_API int32_t titan_series_sensors(const titan_series* s);
TITAN_API int64_t titan_series_steps(const titan_series* s);
TITAN_API void titan_series_free(titan_series* s);

/* ---- DTW prior graph --------------------------------------------------- */

typedef struct titan_prior_params {
  double kappa_quantile;  /* threshold quantile of pairwise distances, default 0.7 */
  double train_fraction;  /* share of the series DTW may see, default 0.7 */
  int32_t downsample_min; /* mean-pooling bucket in minutes, 0 = full, default 60 */
  int32_t max_days;       /* cap on the DTW slice, default 14 */
  int32_t band;           /* Sakoe-Chiba band, 0 = unrestricted */
  int32_t threads;        /* worker threads, 0 = hardware concurrency */
} titan_prior_params;

TITAN_API void titan_prior_params_init(titan_prior_params* p);
TITAN_API titan_status titan_prior_compute(const titan_series* s,
                                           const titan_prior_params* p, titan_prior** out);
/* N x N CSV at 9 significant digits plus {n, kappa, sigma, kappa_quantile} sidecar */
TITAN_API titan_status titan_prior_save(const titan_prior* g, const char* csv_path,
                                        const char* json_path);
TITAN_API titan_status titan_prior_load(const char* csv_path, const char* json_path,
                                        titan_prior** out);
TITAN_API int32_t titan_prior_nodes(const titan_prior* g);
TITAN_API double titan_prior_weight(const titan_prior* g, int32_t i, int32_t j);
TITAN_API void titan_prior_free(titan_prior* g);

/* ---- training ----------------------------------------------------------- */

typedef struct titan_train_report {
  double best_val_mae;
  int32_t best_epoch;
  int32_t epochs_run;
  int32_t duplicate; /* out_dir already held a manifest with identical hashes */
} titan_train_report;

/*
 * config_json: snake_case keys (hidden_size, memory_size, layers, heads, rank,
 * temperature, lr_max, lr_min, t_warm, t_freq, betas, eps_adam, batch_size,
 * epochs, seed, lambda_route, ablation, grad_clip, patience,
 * route_loss_in_warmup, t_in, t_out); "{}" uses the defaults. Unknown keys are
 * config errors. `prior` is required unless the ablation drops it.
 * data_path/prior_path are optional file names recorded (hashed) in the
 * manifest. Writes config.json, history.csv, routing.jsonl, checkpoint.titn
 * and manifest.json under out_dir.
 */
TITAN_API titan_status titan_train_run(const char* config_json, const titan_series* data,
                                       const titan_prior* prior, const char* out_dir,
                                       const char* data_path, const char* prior_path,
                                       titan_train_report* report);

/* ---- checkpoints and evaluation ---------------------------------------- */

TITAN_API titan_status titan_model_load(const char* checkpoint_path, titan_model** out);
TITAN_API void titan_model_free(titan_model* m);

/* split: "train" | "val" | "test"; windows and normalization are re-derived
 * from the checkpoint's protocol, so the data must match its sensor set */
TITAN_API titan_status titan_model_eval(const titan_model* m, const titan_series* data,
                                        const char* split, titan_metrics** out);

TITAN_API int32_t titan_metrics_horizons(const titan_metrics* m);
/* step in [1, horizons] */
TITAN_API titan_status titan_metrics_horizon(const titan_metrics* m, int32_t step,
                                             double* mae, double* rmse, double* mape);
TITAN_API titan_status titan_metrics_avg(const titan_metrics* m, double* mae, double* rmse,
                                         double* mape);
/* "horizon_step,mae,rmse,mape" rows plus an avg row */
TITAN_API titan_status titan_metrics_write_csv(const titan_metrics* m, const char* path);
/* "sensor_id,horizon_step,mae,rmse,mape" rows */
TITAN_API titan_status titan_metrics_write_node_csv(const titan_metrics* m, const char* path);
TITAN_API void titan_metrics_free(titan_metrics* m);

#ifdef __cplusplus
}
#endif

#endif /* TITAN_TITAN_H */
