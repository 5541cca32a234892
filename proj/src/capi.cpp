#include "titan/titan.h"

#include <cstring>
#include <string>

#include "core/checkpoint.hpp"
#include "core/dtw.hpp"
#include "core/series.hpp"
#include "core/synthetic.hpp"
#include "core/trainer.hpp"

struct titan_series {
  titan::SensorSeries s;
};
struct titan_prior {
  titan::PriorGraph g;
};
struct titan_model {
  titan::LoadedModel lm;
};
struct titan_metrics {
  titan::EvalReport r;
};

namespace {

thread_local std::string t_last_error;

titan_status status_of(titan::errc c) {
  switch (c) {
    case titan::errc::invalid_argument: return TITAN_ERR_INVALID_ARGUMENT;
    case titan::errc::format: return TITAN_ERR_FORMAT;
    case titan::errc::io: return TITAN_ERR_IO;
    case titan::errc::config: return TITAN_ERR_CONFIG;
    case titan::errc::diverged: return TITAN_ERR_DIVERGED;
    case titan::errc::version: return TITAN_ERR_VERSION;
    case titan::errc::internal: return TITAN_ERR_INTERNAL;
  }
  return TITAN_ERR_INTERNAL;
}

template <class Fn>
titan_status guarded(Fn&& fn) {
  try {
    t_last_error.clear();
    fn();
    return TITAN_OK;
  } catch (const titan::error& e) {
    t_last_error = e.what();
    return status_of(e.code());
  } catch (const std::exception& e) {
    t_last_error = e.what();
    return TITAN_ERR_INTERNAL;
  } catch (...) {
    t_last_error = "unknown error";
    return TITAN_ERR_INTERNAL;
  }
}

titan_status require(bool cond, const char* msg) {
  if (cond) return TITAN_OK;
  t_last_error = msg;
  return TITAN_ERR_INVALID_ARGUMENT;
}

}  // namespace

extern "C" {

const char* titan_version(void) { return "0.1.0"; }

const char* titan_status_name(titan_status s) {
  switch (s) {
    case TITAN_OK: return "ok";
    case TITAN_ERR_INVALID_ARGUMENT: return "invalid_argument";
    case TITAN_ERR_FORMAT: return "format";
    case TITAN_ERR_IO: return "io";
    case TITAN_ERR_CONFIG: return "config";
    case TITAN_ERR_DIVERGED: return "diverged";
    case TITAN_ERR_VERSION: return "version";
    case TITAN_ERR_INTERNAL: return "internal";
  }
  return "unknown";
}

const char* titan_last_error(void) { return t_last_error.c_str(); }

titan_status titan_set_log_level(const char* level) {
  if (auto rc = require(level != nullptr, "null log level")) return rc;
  return guarded([&] { titan::set_log_level(titan::log_level_from_string(level)); });
}

/* ---- series ------------------------------------------------------------- */

titan_status titan_series_load_csv(const char* path, titan_series** out) {
  if (auto rc = require(path && out, "null argument")) return rc;
  return guarded([&] { *out = new titan_series{titan::load_series_csv(path)}; });
}

titan_status titan_series_save_csv(const titan_series* s, const char* path) {
  if (auto rc = require(s && path, "null argument")) return rc;
  return guarded([&] { titan::save_series_csv(s->s, path); });
}

titan_status titan_series_generate(int32_t sensors, int32_t days, int32_t interval_min,
                                   uint64_t seed, titan_series** out) {
  if (auto rc = require(out != nullptr, "null output pointer")) return rc;
  return guarded([&] {
    titan::SynthOptions opt;
    opt.sensors = sensors;
    opt.days = days;
    opt.interval_min = interval_min;
    opt.seed = seed;
    *out = new titan_series{titan::gen_synthetic(opt)};
  });
}

int32_t titan_series_sensors(const titan_series* s) { return s ? s->s.sensors() : 0; }
int64_t titan_series_steps(const titan_series* s) { return s ? s->s.steps() : 0; }
void titan_series_free(titan_series* s) { delete s; }

/* ---- prior -------------------------------------------------------------- */

void titan_prior_params_init(titan_prior_params* p) {
  if (!p) return;
  p->kappa_quantile = 0.7;
  p->train_fraction = 0.7;
  p->downsample_min = 60;
  p->max_days = 14;
  p->band = 0;
  p->threads = 0;
}

titan_status titan_prior_compute(const titan_series* s, const titan_prior_params* p,
                                 titan_prior** out) {
  if (auto rc = require(s && out, "null argument")) return rc;
  return guarded([&] {
    titan_prior_params defaults;
    titan_prior_params_init(&defaults);
    const titan_prior_params& in = p ? *p : defaults;
    titan::PriorOptions opt;
    opt.kappa_quantile = in.kappa_quantile;
    opt.train_steps = static_cast<int64_t>(in.train_fraction * s->s.steps());
    opt.downsample_min = in.downsample_min;
    opt.max_days = in.max_days;
    opt.band = in.band;
    opt.threads = in.threads;
    *out = new titan_prior{titan::build_prior(s->s, opt)};
  });
}

titan_status titan_prior_save(const titan_prior* g, const char* csv_path,
                              const char* json_path) {
  if (auto rc = require(g && csv_path && json_path, "null argument")) return rc;
  return guarded([&] { titan::save_prior_csv(g->g, csv_path, json_path); });
}

titan_status titan_prior_load(const char* csv_path, const char* json_path, titan_prior** out) {
  if (auto rc = require(csv_path && out, "null argument")) return rc;
  return guarded([&] {
    *out = new titan_prior{titan::load_prior_csv(csv_path, json_path ? json_path : "")};
  });
}

int32_t titan_prior_nodes(const titan_prior* g) { return g ? g->g.n : 0; }

double titan_prior_weight(const titan_prior* g, int32_t i, int32_t j) {
  if (!g || i < 0 || j < 0 || i >= g->g.n || j >= g->g.n) return -1.0;
  return g->g.at(i, j);
}

void titan_prior_free(titan_prior* g) { delete g; }

/* ---- training ------------------------------------------------------------ */

titan_status titan_train_run(const char* config_json, const titan_series* data,
                             const titan_prior* prior, const char* out_dir,
                             const char* data_path, const char* prior_path,
                             titan_train_report* report) {
  if (auto rc = require(config_json && data && out_dir, "null argument")) return rc;
  return guarded([&] {
    titan::TrainConfig cfg = titan::TrainConfig::from_json(config_json);
    titan::TrainInputs inputs;
    if (data_path) inputs.data_path = data_path;
    if (prior_path) inputs.prior_path = prior_path;
    auto result =
        titan::train_run(cfg, data->s, prior ? &prior->g : nullptr, out_dir, inputs);
    if (report) {
      report->best_val_mae = result.best_val_mae;
      report->best_epoch = result.best_epoch;
      report->epochs_run = result.epochs_run;
      report->duplicate = result.duplicate ? 1 : 0;
    }
  });
}

/* ---- model / metrics ------------------------------------------------------ */

titan_status titan_model_load(const char* checkpoint_path, titan_model** out) {
  if (auto rc = require(checkpoint_path && out, "null argument")) return rc;
  return guarded([&] { *out = new titan_model{titan::load_checkpoint(checkpoint_path)}; });
}

void titan_model_free(titan_model* m) { delete m; }

titan_status titan_model_eval(const titan_model* m, const titan_series* data,
                              const char* split, titan_metrics** out) {
  if (auto rc = require(m && data && split && out, "null argument")) return rc;
  return guarded([&] {
    const auto& lm = m->lm;
    if (data->s.sensors() != lm.model->config().n_nodes)
      titan::fail(titan::errc::version,
                  "data/checkpoint mismatch for field 'n_nodes' (" +
                      std::to_string(data->s.sensors()) + " vs " +
                      std::to_string(lm.model->config().n_nodes) + ")");
    titan::SensorSeries normed = titan::zscore_transform(data->s, lm.norm);
    auto windows = titan::make_windows(normed, lm.cfg.t_in, lm.cfg.t_out, 1);
    auto split_set = titan::chrono_split(std::move(windows));
    const std::vector<titan::TrafficWindow>* chosen = nullptr;
    if (std::strcmp(split, "train") == 0) chosen = &split_set.train;
    else if (std::strcmp(split, "val") == 0) chosen = &split_set.val;
    else if (std::strcmp(split, "test") == 0) chosen = &split_set.test;
    else titan::fail(titan::errc::config, std::string("unknown split '") + split + "'");
    *out = new titan_metrics{
        titan::evaluate(*lm.model, lm.norm, data->s.sensor_ids, *chosen)};
  });
}

int32_t titan_metrics_horizons(const titan_metrics* m) {
  return m ? static_cast<int32_t>(m->r.per_horizon.size()) : 0;
}

titan_status titan_metrics_horizon(const titan_metrics* m, int32_t step, double* mae,
                                   double* rmse, double* mape) {
  if (auto rc = require(m != nullptr, "null metrics")) return rc;
  if (auto rc = require(step >= 1 && step <= static_cast<int32_t>(m->r.per_horizon.size()),
                        "horizon step out of range"))
    return rc;
  const auto& h = m->r.per_horizon[static_cast<size_t>(step - 1)];
  if (mae) *mae = h.mae;
  if (rmse) *rmse = h.rmse;
  if (mape) *mape = h.mape;
  return TITAN_OK;
}

titan_status titan_metrics_avg(const titan_metrics* m, double* mae, double* rmse,
                               double* mape) {
  if (auto rc = require(m != nullptr, "null metrics")) return rc;
  if (mae) *mae = m->r.avg.mae;
  if (rmse) *rmse = m->r.avg.rmse;
  if (mape) *mape = m->r.avg.mape;
  return TITAN_OK;
}

titan_status titan_metrics_write_csv(const titan_metrics* m, const char* path) {
  if (auto rc = require(m && path, "null argument")) return rc;
  return guarded([&] { titan::write_metrics_csv(m->r, path); });
}

titan_status titan_metrics_write_node_csv(const titan_metrics* m, const char* path) {
  if (auto rc = require(m && path, "null argument")) return rc;
  return guarded([&] { titan::write_node_csv(m->r, path); });
}

void titan_metrics_free(titan_metrics* m) { delete m; }

}  // extern "C"
