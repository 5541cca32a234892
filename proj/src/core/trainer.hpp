#pragma once

#include <array>
#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include "core/model.hpp"
#include "core/series.hpp"

namespace titan {

struct TrainConfig {
  int hidden_size = 16;
  int memory_size = 16;
  int layers = 1;
  int heads = 2;
  int rank = 4;
  double temperature = 1.0;
  double lr_max = 3e-3;
  double lr_min = 3e-5;  // lr_max / 100
  int64_t t_warm = -1;   // optimizer steps; -1 resolves to one epoch
  int64_t t_freq = -1;   // optimizer steps; -1 resolves to five epochs
  std::array<double, 2> betas = {0.9, 0.98};
  double eps_adam = 1e-9;
  int batch_size = 16;
  int epochs = 50;
  uint64_t seed = 42;
  double lambda_route = 0.01;
  Ablation ablation = Ablation::none;
  double grad_clip = 5.0;
  int patience = 10;
  bool route_loss_in_warmup = true;
  int t_in = 12;
  int t_out = 12;

  void validate() const;
  bool uses_prior() const {
    return ablation == Ablation::none || ablation == Ablation::no_semantics;
  }
  bool uses_gate() const { return ablation != Ablation::ensemble; }

  // strict snake_case JSON; unknown keys are config errors
  static TrainConfig from_json(const std::string& text);
  std::string to_json() const;
};

// Warmup ramp followed by a periodic cosine wave; the two branches meet at
// lr_max when t_cur == t_warm.
double lr_schedule(int64_t t_cur, double lr_min, double lr_max, int64_t t_warm, int64_t t_freq);

class Adam {
 public:
  Adam(std::vector<NamedParam> params, double beta1, double beta2, double eps);
  // consumes .grad on every parameter; a non-finite gradient aborts naming
  // the parameter
  void step(double lr);
  void zero_grad();
  int64_t steps() const { return t_; }
  const std::vector<NamedParam>& params() const { return params_; }

 private:
  std::vector<NamedParam> params_;
  std::vector<std::vector<double>> m_, v_;
  int64_t t_ = 0;
  double b1_, b2_, eps_;
};

// Masked mean absolute error over observed entries; errors when nothing is
// observed.
Tensor masked_mae(const Tensor& pred, const Tensor& target,
                  const std::vector<uint8_t>& missing);

struct Dataset {
  NormStats norm;
  WindowSplit split;
};
// z-score fit on the train range, windows at stride 1, 70/10/20 split.
Dataset prepare_dataset(const SensorSeries& series, int t_in, int t_out);

struct EvalReport {
  std::vector<Metrics> per_horizon;  // index 0 = first step ahead
  Metrics avg;                       // pooled over all horizons
  struct NodeRow {
    std::string sensor_id;
    std::string horizon;  // "1".."T" or "avg"
    Metrics m;
  };
  std::vector<NodeRow> per_node;
};

// Hard-routed inference over a window split, de-normalized metrics.
EvalReport evaluate(const TitanModel& model, const NormStats& norm,
                    const std::vector<std::string>& sensor_ids,
                    const std::vector<TrafficWindow>& windows);

void write_metrics_csv(const EvalReport& r, const std::string& path);
void write_node_csv(const EvalReport& r, const std::string& path);

struct TrainResult {
  std::shared_ptr<TitanModel> model;  // best-validation parameters
  NormStats norm;
  std::vector<std::string> sensor_ids;
  double best_val_mae = 0.0;
  int best_epoch = 0;
  int epochs_run = 0;
  bool duplicate = false;
  std::filesystem::path checkpoint_path, history_path, routing_log_path, config_path,
      manifest_path;
};

struct TrainInputs {
  std::string data_path;   // hashed into the manifest when non-empty
  std::string prior_path;
};

// Full training run: optimization, per-epoch metrics history, routing log,
// best-val checkpoint and manifest, all under out_dir.
TrainResult train_run(const TrainConfig& cfg, const SensorSeries& series,
                      const PriorGraph* prior, const std::string& out_dir,
                      const TrainInputs& inputs = {});

}  // namespace titan
