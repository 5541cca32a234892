// Command-line front end over the titan C API: synthetic data generation,
// DTW prior construction, training, evaluation and ablation runs.

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <memory>
#include <string>

#include "titan/titan.h"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitInternal = 1;
constexpr int kExitConfig = 2;
constexpr int kExitDiverged = 3;

int exit_code_of(titan_status s) {
  switch (s) {
    case TITAN_OK: return kExitOk;
    case TITAN_ERR_DIVERGED: return kExitDiverged;
    case TITAN_ERR_INTERNAL: return kExitInternal;
    default: return kExitConfig;  // config, format, io, version, invalid argument
  }
}

int report_failure(titan_status s) {
  std::fprintf(stderr, "error (%s): %s\n", titan_status_name(s), titan_last_error());
  return exit_code_of(s);
}

bool refuse_existing(const std::string& path, bool force) {
  if (force || !fs::exists(path)) return false;
  std::fprintf(stderr, "error (config): '%s' exists; pass --force to overwrite\n",
               path.c_str());
  return true;
}

std::string sidecar_path(const std::string& csv_path) {
  fs::path p(csv_path);
  p.replace_extension(".json");
  return p.string();
}

struct SeriesHandle {
  titan_series* p = nullptr;
  ~SeriesHandle() { titan_series_free(p); }
};
struct PriorHandle {
  titan_prior* p = nullptr;
  ~PriorHandle() { titan_prior_free(p); }
};
struct ModelHandle {
  titan_model* p = nullptr;
  ~ModelHandle() { titan_model_free(p); }
};
struct MetricsHandle {
  titan_metrics* p = nullptr;
  ~MetricsHandle() { titan_metrics_free(p); }
};

// flag > file > default: config file keys first, CLI flags stamped on top
struct TrainFlags {
  std::string config_path, data, prior, out_dir, variant;
  int hidden_size = 0, memory_size = 0, layers = 0, heads = 0, rank = 0, batch_size = 0,
      epochs = 0, patience = 0;
  int64_t t_warm = 0, t_freq = 0;
  double lr_max = 0, lr_min = 0, lambda_route = 0, temperature = 0, grad_clip = 0;
  uint64_t seed = 0;

  CLI::App* attach(CLI::App& app, const char* name, const char* desc, bool with_variant) {
    CLI::App* cmd = app.add_subcommand(name, desc);
    cmd->add_option("--data", data, "input series CSV")->required();
    cmd->add_option("--out-dir", out_dir, "run output directory")->required();
    cmd->add_option("--config", config_path, "config JSON (flags override file)");
    cmd->add_option("--prior", prior, "DTW prior CSV (sidecar JSON looked up next to it)");
    if (with_variant)
      cmd->add_option("--variant", variant,
                      "ablation: none, no_semantics, ensemble, no_prior, replaced_prior")
          ->required();
    cmd->add_option("--hidden-size", hidden_size);
    cmd->add_option("--memory-size", memory_size);
    cmd->add_option("--layers", layers);
    cmd->add_option("--heads", heads);
    cmd->add_option("--rank", rank);
    cmd->add_option("--batch-size", batch_size);
    cmd->add_option("--epochs", epochs);
    cmd->add_option("--patience", patience);
    cmd->add_option("--t-warm", t_warm);
    cmd->add_option("--t-freq", t_freq);
    cmd->add_option("--lr-max", lr_max);
    cmd->add_option("--lr-min", lr_min);
    cmd->add_option("--lambda-route", lambda_route);
    cmd->add_option("--temperature", temperature);
    cmd->add_option("--grad-clip", grad_clip);
    cmd->add_option("--seed", seed);
    return cmd;
  }

  // assemble the effective config JSON for the C API
  std::string resolve(const CLI::App& cmd) const {
    json cfg = json::object();
    if (!config_path.empty()) {
      std::ifstream in(config_path);
      if (!in) throw CLI::ValidationError("--config", "cannot open '" + config_path + "'");
      try {
        in >> cfg;
      } catch (const json::exception& e) {
        throw CLI::ValidationError("--config", e.what());
      }
    }
    auto stamp = [&](const char* flag, const char* key, auto value) {
      if (cmd.count(flag)) cfg[key] = value;
    };
    stamp("--hidden-size", "hidden_size", hidden_size);
    stamp("--memory-size", "memory_size", memory_size);
    stamp("--layers", "layers", layers);
    stamp("--heads", "heads", heads);
    stamp("--rank", "rank", rank);
    stamp("--batch-size", "batch_size", batch_size);
    stamp("--epochs", "epochs", epochs);
    stamp("--patience", "patience", patience);
    stamp("--t-warm", "t_warm", t_warm);
    stamp("--t-freq", "t_freq", t_freq);
    stamp("--lr-max", "lr_max", lr_max);
    stamp("--lr-min", "lr_min", lr_min);
    stamp("--lambda-route", "lambda_route", lambda_route);
    stamp("--temperature", "temperature", temperature);
    stamp("--grad-clip", "grad_clip", grad_clip);
    stamp("--seed", "seed", seed);
    if (!variant.empty()) cfg["ablation"] = variant;
    return cfg.dump();
  }
};

int run_train(const TrainFlags& f, const CLI::App& cmd) {
  SeriesHandle data;
  if (titan_status s = titan_series_load_csv(f.data.c_str(), &data.p)) return report_failure(s);

  PriorHandle prior;
  if (!f.prior.empty()) {
    const std::string sidecar = sidecar_path(f.prior);
    if (titan_status s = titan_prior_load(f.prior.c_str(), sidecar.c_str(), &prior.p))
      return report_failure(s);
  }

  std::string cfg;
  try {
    cfg = f.resolve(cmd);
  } catch (const CLI::Error& e) {
    std::fprintf(stderr, "error (config): %s\n", e.what());
    return kExitConfig;
  }

  titan_train_report report{};
  if (titan_status s = titan_train_run(cfg.c_str(), data.p, prior.p, f.out_dir.c_str(),
                                       f.data.c_str(), f.prior.empty() ? nullptr : f.prior.c_str(),
                                       &report))
    return report_failure(s);
  if (report.duplicate)
    std::fprintf(stderr, "note: duplicate run (same config, inputs and seed as the previous "
                         "manifest in this directory)\n");
  std::printf("finished: best val MAE %.6g at epoch %d (%d epochs run)\n",
              report.best_val_mae, report.best_epoch, report.epochs_run);
  std::printf("artifacts in %s: config.json, history.csv, routing.jsonl, checkpoint.titn, "
              "manifest.json\n",
              f.out_dir.c_str());
  return kExitOk;
}

int print_metrics(titan_metrics* m, const std::string& out_csv, const std::string& node_csv) {
  std::printf("%-12s %10s %10s %9s\n", "horizon", "mae", "rmse", "mape%");
  const int horizons = titan_metrics_horizons(m);
  for (int t = 1; t <= horizons; ++t) {
    double mae, rmse, mape;
    titan_metrics_horizon(m, t, &mae, &rmse, &mape);
    std::printf("%-12d %10.4f %10.4f %9.3f\n", t, mae, rmse, mape);
  }
  double mae, rmse, mape;
  titan_metrics_avg(m, &mae, &rmse, &mape);
  std::printf("%-12s %10.4f %10.4f %9.3f\n", "avg", mae, rmse, mape);

  if (!out_csv.empty())
    if (titan_status s = titan_metrics_write_csv(m, out_csv.c_str())) return report_failure(s);
  if (!node_csv.empty())
    if (titan_status s = titan_metrics_write_node_csv(m, node_csv.c_str()))
      return report_failure(s);
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"titan: mixture-of-experts traffic forecasting experiments"};
  app.require_subcommand(1);
  std::string log_level = "info";
  app.add_option("--log-level", log_level, "debug, info, warn, error or off")
      ->envname("TITAN_LOG_LEVEL");

  // gen-synth
  int gs_sensors = 8, gs_days = 14, gs_interval = 5;
  uint64_t gs_seed = 42;
  std::string gs_out;
  bool gs_force = false;
  CLI::App* gen = app.add_subcommand("gen-synth", "generate a deterministic synthetic series");
  gen->add_option("--sensors", gs_sensors, "number of sensors (>= 2)");
  gen->add_option("--days", gs_days, "number of days");
  gen->add_option("--interval-min", gs_interval, "sampling interval in minutes");
  gen->add_option("--seed", gs_seed, "generator seed");
  gen->add_option("--out", gs_out, "output CSV path")->required();
  gen->add_flag("--force", gs_force, "overwrite an existing output file");

  // compute-dtw
  std::string cd_data, cd_out;
  bool cd_force = false;
  titan_prior_params cd_params;
  titan_prior_params_init(&cd_params);
  double cd_quantile = cd_params.kappa_quantile, cd_train_frac = cd_params.train_fraction;
  int cd_downsample = cd_params.downsample_min, cd_max_days = cd_params.max_days,
      cd_band = cd_params.band, cd_threads = cd_params.threads;
  CLI::App* dtw = app.add_subcommand("compute-dtw", "build the DTW prior graph");
  dtw->add_option("--data", cd_data, "input series CSV")->required();
  dtw->add_option("--out", cd_out, "output prior CSV (JSON sidecar written next to it)")
      ->required();
  dtw->add_option("--kappa-quantile", cd_quantile, "distance quantile for the threshold");
  dtw->add_option("--train-frac", cd_train_frac, "fraction of the series DTW may see");
  dtw->add_option("--downsample-min", cd_downsample, "mean-pool bucket minutes, 0 = full");
  dtw->add_option("--max-days", cd_max_days, "cap on the DTW slice in days");
  dtw->add_option("--band", cd_band, "Sakoe-Chiba band, 0 = unrestricted");
  dtw->add_option("--threads", cd_threads, "worker threads, 0 = all cores");
  dtw->add_flag("--force", cd_force, "overwrite existing outputs");

  // train / ablate
  TrainFlags tf;
  CLI::App* train = tf.attach(app, "train", "train a model end to end", false);
  TrainFlags af;
  CLI::App* ablate = af.attach(app, "ablate", "train one named ablation variant", true);

  // eval
  std::string ev_ckpt, ev_data, ev_split = "test", ev_out, ev_nodes;
  CLI::App* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint on a split");
  eval_cmd->add_option("--checkpoint", ev_ckpt, "checkpoint file")->required();
  eval_cmd->add_option("--data", ev_data, "input series CSV")->required();
  eval_cmd->add_option("--split", ev_split, "train, val or test");
  eval_cmd->add_option("--out", ev_out, "write per-horizon metrics CSV here");
  eval_cmd->add_option("--per-node", ev_nodes, "write per-sensor metrics CSV here");

  for (CLI::App* sc : app.get_subcommands([](CLI::App*) { return true; }))
    sc->fallthrough();  // accept global flags after the subcommand too

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitConfig;
  }

  if (titan_status s = titan_set_log_level(log_level.c_str())) return report_failure(s);

  if (gen->parsed()) {
    if (refuse_existing(gs_out, gs_force)) return kExitConfig;
    SeriesHandle series;
    if (titan_status s = titan_series_generate(gs_sensors, gs_days, gs_interval, gs_seed,
                                               &series.p))
      return report_failure(s);
    if (titan_status s = titan_series_save_csv(series.p, gs_out.c_str()))
      return report_failure(s);
    std::printf("wrote %s: %lld rows, %d sensors\n", gs_out.c_str(),
                static_cast<long long>(titan_series_steps(series.p)),
                titan_series_sensors(series.p));
    return kExitOk;
  }

  if (dtw->parsed()) {
    const std::string sidecar = sidecar_path(cd_out);
    if (refuse_existing(cd_out, cd_force) || refuse_existing(sidecar, cd_force))
      return kExitConfig;
    SeriesHandle series;
    if (titan_status s = titan_series_load_csv(cd_data.c_str(), &series.p))
      return report_failure(s);
    titan_prior_params params;
    titan_prior_params_init(&params);
    params.kappa_quantile = cd_quantile;
    params.train_fraction = cd_train_frac;
    params.downsample_min = cd_downsample;
    params.max_days = cd_max_days;
    params.band = cd_band;
    params.threads = cd_threads;
    PriorHandle prior;
    if (titan_status s = titan_prior_compute(series.p, &params, &prior.p))
      return report_failure(s);
    if (titan_status s = titan_prior_save(prior.p, cd_out.c_str(), sidecar.c_str()))
      return report_failure(s);
    std::printf("wrote %s and %s (%d nodes)\n", cd_out.c_str(), sidecar.c_str(),
                titan_prior_nodes(prior.p));
    return kExitOk;
  }

  if (train->parsed()) return run_train(tf, *train);
  if (ablate->parsed()) return run_train(af, *ablate);

  if (eval_cmd->parsed()) {
    ModelHandle model;
    if (titan_status s = titan_model_load(ev_ckpt.c_str(), &model.p)) return report_failure(s);
    SeriesHandle series;
    if (titan_status s = titan_series_load_csv(ev_data.c_str(), &series.p))
      return report_failure(s);
    MetricsHandle metrics;
    if (titan_status s = titan_model_eval(model.p, series.p, ev_split.c_str(), &metrics.p))
      return report_failure(s);
    return print_metrics(metrics.p, ev_out, ev_nodes);
  }

  return kExitConfig;
}
