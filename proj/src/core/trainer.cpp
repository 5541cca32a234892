#include "core/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <random>

#include <json.hpp>

#include "core/checkpoint.hpp"
#include "core/manifest.hpp"
#include "core/routing.hpp"

namespace titan {

namespace fs = std::filesystem;

void TrainConfig::validate() const {
  if (!(lr_min < lr_max)) fail(errc::config, "config: lr_min must be below lr_max");
  if (lr_min < 0.0) fail(errc::config, "config: lr_min must be non-negative");
  if (batch_size < 1) fail(errc::config, "config: batch_size must be positive");
  if (epochs < 1) fail(errc::config, "config: epochs must be positive");
  if (patience < 1) fail(errc::config, "config: patience must be positive");
  if (lambda_route < 0.0) fail(errc::config, "config: lambda_route must be non-negative");
  if (grad_clip <= 0.0) fail(errc::config, "config: grad_clip must be positive");
  if (betas[0] <= 0.0 || betas[0] >= 1.0 || betas[1] <= 0.0 || betas[1] >= 1.0)
    fail(errc::config, "config: betas must lie in (0, 1)");
  if (eps_adam <= 0.0) fail(errc::config, "config: eps_adam must be positive");
  if (t_in < 1 || t_out < 1) fail(errc::config, "config: t_in and t_out must be positive");
}

TrainConfig TrainConfig::from_json(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    fail(errc::config, std::string("config: ") + e.what());
  }
  if (!j.is_object()) fail(errc::config, "config: top level must be a JSON object");
  TrainConfig c;
  try {
    for (const auto& [key, value] : j.items()) {
      if (key == "hidden_size") c.hidden_size = value.get<int>();
      else if (key == "memory_size") c.memory_size = value.get<int>();
      else if (key == "layers") c.layers = value.get<int>();
      else if (key == "heads") c.heads = value.get<int>();
      else if (key == "rank") c.rank = value.get<int>();
      else if (key == "temperature") c.temperature = value.get<double>();
      else if (key == "lr_max") c.lr_max = value.get<double>();
      else if (key == "lr_min") c.lr_min = value.get<double>();
      else if (key == "t_warm") c.t_warm = value.get<int64_t>();
      else if (key == "t_freq") c.t_freq = value.get<int64_t>();
      else if (key == "betas") {
        const auto v = value.get<std::vector<double>>();
        if (v.size() != 2) fail(errc::config, "config: betas must have two entries");
        c.betas = {v[0], v[1]};
      } else if (key == "eps_adam") c.eps_adam = value.get<double>();
      else if (key == "batch_size") c.batch_size = value.get<int>();
      else if (key == "epochs") c.epochs = value.get<int>();
      else if (key == "seed") c.seed = value.get<uint64_t>();
      else if (key == "lambda_route") c.lambda_route = value.get<double>();
      else if (key == "ablation") c.ablation = ablation_from_string(value.get<std::string>());
      else if (key == "grad_clip") c.grad_clip = value.get<double>();
      else if (key == "patience") c.patience = value.get<int>();
      else if (key == "route_loss_in_warmup") c.route_loss_in_warmup = value.get<bool>();
      else if (key == "t_in") c.t_in = value.get<int>();
      else if (key == "t_out") c.t_out = value.get<int>();
      else fail(errc::config, "config: unknown key '" + key + "'");
    }
  } catch (const nlohmann::json::exception& e) {
    fail(errc::config, std::string("config: ") + e.what());
  }
  c.validate();
  return c;
}

std::string TrainConfig::to_json() const {
  nlohmann::json j = {
      {"hidden_size", hidden_size},
      {"memory_size", memory_size},
      {"layers", layers},
      {"heads", heads},
      {"rank", rank},
      {"temperature", temperature},
      {"lr_max", lr_max},
      {"lr_min", lr_min},
      {"t_warm", t_warm},
      {"t_freq", t_freq},
      {"betas", betas},
      {"eps_adam", eps_adam},
      {"batch_size", batch_size},
      {"epochs", epochs},
      {"seed", seed},
      {"lambda_route", lambda_route},
      {"ablation", ablation_to_string(ablation)},
      {"grad_clip", grad_clip},
      {"patience", patience},
      {"route_loss_in_warmup", route_loss_in_warmup},
      {"t_in", t_in},
      {"t_out", t_out},
  };
  return j.dump(2);
}

double lr_schedule(int64_t t_cur, double lr_min, double lr_max, int64_t t_warm,
                   int64_t t_freq) {
  if (t_cur < 0 || t_warm < 0) fail(errc::invalid_argument, "lr_schedule: negative step");
  if (t_freq < 1) fail(errc::invalid_argument, "lr_schedule: t_freq must be positive");
  if (t_warm > 0 && t_cur < t_warm)
    return lr_min + (lr_max - lr_min) * static_cast<double>(t_cur) /
                        static_cast<double>(t_warm);
  const int64_t t_post = (t_cur - t_warm) % t_freq;
  return lr_min + 0.5 * (lr_max - lr_min) *
                      (1.0 + std::cos(M_PI * static_cast<double>(t_post) /
                                      static_cast<double>(t_freq)));
}

Adam::Adam(std::vector<NamedParam> params, double beta1, double beta2, double eps)
    : params_(std::move(params)), b1_(beta1), b2_(beta2), eps_(eps) {
  for (const auto& p : params_) {
    m_.emplace_back(p.tensor.numel(), 0.0);
    v_.emplace_back(p.tensor.numel(), 0.0);
  }
}

void Adam::step(double lr) {
  ++t_;
  const double c1 = 1.0 - std::pow(b1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(b2_, static_cast<double>(t_));
  for (size_t i = 0; i < params_.size(); ++i) {
    Tensor p = params_[i].tensor;
    const auto& g = p.grad();
    auto& data = p.data();
    auto& m = m_[i];
    auto& v = v_[i];
    for (size_t k = 0; k < data.size(); ++k) {
      if (!std::isfinite(g[k]))
        fail(errc::diverged,
             "non-finite gradient in parameter '" + params_[i].name + "'");
      m[k] = b1_ * m[k] + (1.0 - b1_) * g[k];
      v[k] = b2_ * v[k] + (1.0 - b2_) * g[k] * g[k];
      const double mhat = m[k] / c1;
      const double vhat = v[k] / c2;
      data[k] -= lr * mhat / (std::sqrt(vhat) + eps_);
    }
  }
}

void Adam::zero_grad() {
  for (auto& p : params_) {
    Tensor t = p.tensor;
    t.grad();  // ensure allocated
    t.zero_grad();
  }
}

Tensor masked_mae(const Tensor& pred, const Tensor& target,
                  const std::vector<uint8_t>& missing) {
  if (pred.shape() != target.shape())
    fail(errc::invalid_argument, "loss: shapes " + shape_str(pred.shape()) + " and " +
                                     shape_str(target.shape()) + " differ");
  if (static_cast<int64_t>(missing.size()) != pred.numel())
    fail(errc::invalid_argument, "loss: mask size does not match tensors");
  int64_t observed = 0;
  std::vector<double> mv(missing.size());
  for (size_t i = 0; i < missing.size(); ++i) {
    mv[i] = missing[i] ? 0.0 : 1.0;
    observed += missing[i] ? 0 : 1;
  }
  if (observed == 0) fail(errc::invalid_argument, "loss: empty mask");
  Tensor mask = Tensor::from(pred.shape(), std::move(mv));
  return scale(sum(mul(titan::abs(sub(pred, target)), mask)),
               1.0 / static_cast<double>(observed));
}

Dataset prepare_dataset(const SensorSeries& series, int t_in, int t_out) {
  const StepRange fit = train_fit_range(series.steps(), t_in, t_out, 1);
  auto [norm_series, stats] = zscore_fit_transform(series, fit);
  auto windows = make_windows(norm_series, t_in, t_out, 1);
  Dataset ds;
  ds.norm = stats;
  ds.split = chrono_split(std::move(windows));
  return ds;
}

namespace {

double denorm(double v, const NormStats& norm, bool normalized) {
  return normalized ? v * norm.stdev[0] + norm.mean[0] : v;
}

// per-expert masked MAE on the normalized scale; the lowest-error expert is
// the routing supervision label
int best_expert_label(const std::vector<ExpertOutput>& outputs, const TrafficWindow& w) {
  int best = -1;
  double best_mae = 0.0;
  for (size_t e = 0; e < outputs.size(); ++e) {
    const auto& f = outputs[e].forecast.data();
    const auto& y = w.y.data();
    double acc = 0.0;
    int64_t n = 0;
    for (size_t i = 0; i < f.size(); ++i)
      if (!w.y_missing[i]) {
        acc += std::fabs(f[i] - y[i]);
        ++n;
      }
    if (n == 0) return -1;
    const double mae = acc / static_cast<double>(n);
    if (best < 0 || mae < best_mae) {
      best = static_cast<int>(e);
      best_mae = mae;
    }
  }
  return best;
}

void clip_global_norm(std::vector<NamedParam>& params, double max_norm) {
  double sq = 0.0;
  for (auto& p : params)
    for (double g : p.tensor.grad()) sq += g * g;
  const double norm = std::sqrt(sq);
  if (norm <= max_norm || norm == 0.0) return;
  const double s = max_norm / norm;
  for (auto& p : params)
    for (double& g : p.tensor.grad()) g *= s;
}

std::vector<std::vector<double>> snapshot_params(const std::vector<NamedParam>& params) {
  std::vector<std::vector<double>> snap;
  snap.reserve(params.size());
  for (const auto& p : params) snap.push_back(p.tensor.data());
  return snap;
}

void restore_params(std::vector<NamedParam>& params,
                    const std::vector<std::vector<double>>& snap) {
  for (size_t i = 0; i < params.size(); ++i) {
    Tensor t = params[i].tensor;
    t.data() = snap[i];
  }
}

void format_metric(std::string& line, double v) {
  char buf[48];
  std::snprintf(buf, sizeof(buf), "%.9g", v);
  line += buf;
}

struct HistoryRow {
  int epoch;
  const char* split;
  std::string horizon;
  Metrics m;
  double lr;
  const char* phase;
};

void write_history_csv(const std::string& path, const std::vector<HistoryRow>& rows) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(errc::io, "cannot write '" + path + "'");
  out << "epoch,split,horizon_step,mae,rmse,mape,lr,phase\n";
  for (const auto& r : rows) {
    std::string line = std::to_string(r.epoch);
    line += ',';
    line += r.split;
    line += ',';
    line += r.horizon;
    line += ',';
    format_metric(line, r.m.mae);
    line += ',';
    format_metric(line, r.m.rmse);
    line += ',';
    format_metric(line, r.m.mape);
    line += ',';
    format_metric(line, r.lr);
    line += ',';
    line += r.phase;
    out << line << '\n';
  }
}

}  // namespace

EvalReport evaluate(const TitanModel& model, const NormStats& norm,
                    const std::vector<std::string>& sensor_ids,
                    const std::vector<TrafficWindow>& windows) {
  if (windows.empty()) fail(errc::invalid_argument, "evaluate: empty window split");
  NoGradGuard ng;
  const int t_out = model.config().t_out;
  const int n = model.config().n_nodes;
  std::vector<MetricsAccum> per_h(static_cast<size_t>(t_out));
  std::vector<std::vector<MetricsAccum>> grid(
      static_cast<size_t>(n), std::vector<MetricsAccum>(static_cast<size_t>(t_out)));
  MetricsAccum total;

  for (const auto& w : windows) {
    auto fwd = model.forward(w.x, w.x_timestamps, nullptr, true);
    const auto& pv = fwd.forecast.data();
    const auto& yv = w.y.data();
    for (int t = 0; t < t_out; ++t)
      for (int j = 0; j < n; ++j) {
        const size_t i = static_cast<size_t>(t) * n + j;
        if (w.y_missing[i]) continue;
        const double p = denorm(pv[i], norm, w.normalized);
        const double y = denorm(yv[i], norm, w.normalized);
        per_h[static_cast<size_t>(t)].add(p, y);
        grid[static_cast<size_t>(j)][static_cast<size_t>(t)].add(p, y);
        total.add(p, y);
      }
  }

  EvalReport r;
  for (auto& acc : per_h) r.per_horizon.push_back(acc.result());
  r.avg = total.result();
  for (int j = 0; j < n; ++j) {
    MetricsAccum sensor_total;
    for (int t = 0; t < t_out; ++t) {
      if (grid[j][t].empty()) continue;
      r.per_node.push_back({sensor_ids[static_cast<size_t>(j)], std::to_string(t + 1),
                            grid[j][t].result()});
      sensor_total.merge(grid[j][t]);
    }
    if (!sensor_total.empty())
      r.per_node.push_back({sensor_ids[static_cast<size_t>(j)], "avg", sensor_total.result()});
  }
  return r;
}

void write_metrics_csv(const EvalReport& r, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(errc::io, "cannot write '" + path + "'");
  out << "horizon_step,mae,rmse,mape\n";
  char buf[160];
  for (size_t t = 0; t < r.per_horizon.size(); ++t) {
    std::snprintf(buf, sizeof(buf), "%zu,%.9g,%.9g,%.9g\n", t + 1, r.per_horizon[t].mae,
                  r.per_horizon[t].rmse, r.per_horizon[t].mape);
    out << buf;
  }
  std::snprintf(buf, sizeof(buf), "avg,%.9g,%.9g,%.9g\n", r.avg.mae, r.avg.rmse, r.avg.mape);
  out << buf;
}

void write_node_csv(const EvalReport& r, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(errc::io, "cannot write '" + path + "'");
  out << "sensor_id,horizon_step,mae,rmse,mape\n";
  char buf[224];
  for (const auto& row : r.per_node) {
    std::snprintf(buf, sizeof(buf), "%s,%s,%.9g,%.9g,%.9g\n", row.sensor_id.c_str(),
                  row.horizon.c_str(), row.m.mae, row.m.rmse, row.m.mape);
    out << buf;
  }
}

TrainResult train_run(const TrainConfig& cfg, const SensorSeries& series,
                      const PriorGraph* prior, const std::string& out_dir,
                      const TrainInputs& inputs) {
  cfg.validate();
  if (cfg.uses_prior() && prior == nullptr)
    fail(errc::config, std::string("training with ablation '") +
                           ablation_to_string(cfg.ablation) + "' requires a DTW prior");
  if (!cfg.uses_prior()) prior = nullptr;
  if (prior && prior->n != series.sensors())
    fail(errc::config, "prior has " + std::to_string(prior->n) + " nodes but the data has " +
                           std::to_string(series.sensors()) + " sensors");

  Dataset ds = prepare_dataset(series, cfg.t_in, cfg.t_out);
  auto& train = ds.split.train;

  ModelConfig mc;
  mc.t_in = cfg.t_in;
  mc.t_out = cfg.t_out;
  mc.n_nodes = series.sensors();
  mc.features = 1;
  mc.hidden = cfg.hidden_size;
  mc.memory = cfg.memory_size;
  mc.layers = cfg.layers;
  mc.heads = cfg.heads;
  mc.rank = cfg.rank;
  mc.temperature = cfg.temperature;
  auto model = std::make_shared<TitanModel>(mc, cfg.ablation, cfg.seed * 1000003ULL + 11);

  const int64_t steps_per_epoch =
      (static_cast<int64_t>(train.size()) + cfg.batch_size - 1) / cfg.batch_size;
  const int64_t t_warm = cfg.t_warm >= 0 ? cfg.t_warm : steps_per_epoch;
  const int64_t t_freq = cfg.t_freq >= 1 ? cfg.t_freq : 5 * steps_per_epoch;

  fs::create_directories(out_dir);
  TrainResult result;
  result.norm = ds.norm;
  result.sensor_ids = series.sensor_ids;
  result.config_path = fs::path(out_dir) / "config.json";
  result.history_path = fs::path(out_dir) / "history.csv";
  result.routing_log_path = fs::path(out_dir) / "routing.jsonl";
  result.checkpoint_path = fs::path(out_dir) / "checkpoint.titn";
  result.manifest_path = fs::path(out_dir) / "manifest.json";

  const std::string config_text = cfg.to_json();
  {
    std::ofstream out(result.config_path, std::ios::binary);
    if (!out) fail(errc::io, "cannot write '" + result.config_path.string() + "'");
    out << config_text << '\n';
  }
  const std::string config_hash = sha256_hex(config_text);

  std::map<std::string, std::string> input_hashes;
  if (!inputs.data_path.empty()) {
    input_hashes["data"] = sha256_file(inputs.data_path);
  } else {
    input_hashes["data"] = sha256_hex(series.values.data(), series.values.size() * 8);
  }
  if (prior) {
    input_hashes["prior"] = !inputs.prior_path.empty()
                                ? sha256_file(inputs.prior_path)
                                : sha256_hex(prior->w.data(), prior->w.size() * 8);
  }
  result.duplicate = manifest_is_duplicate(out_dir, config_hash, input_hashes, cfg.seed);
  if (result.duplicate)
    log_warn("run is a duplicate: identical config, inputs and seed as '" + out_dir +
             "/manifest.json'");

  const int64_t started = std::chrono::duration_cast<std::chrono::seconds>(
                              std::chrono::system_clock::now().time_since_epoch())
                              .count();

  Adam adam(model->parameters(), cfg.betas[0], cfg.betas[1], cfg.eps_adam);
  auto& params = model->parameters();
  const int n_experts = model->expert_count();
  const int t_out = cfg.t_out;
  const int n_nodes = series.sensors();

  auto best_snapshot = snapshot_params(params);
  double best_val = std::numeric_limits<double>::infinity();
  int best_epoch = 0;
  int patience_left = cfg.patience;

  std::vector<HistoryRow> history;
  std::vector<std::string> routing_lines;
  int64_t gstep = 0;
  bool transition_logged = false;

  auto save_best = [&](int epochs_run) {
    restore_params(params, best_snapshot);
    save_checkpoint(result.checkpoint_path.string(), *model, cfg, ds.norm, series.sensor_ids,
                    best_epoch, std::isfinite(best_val) ? best_val : 0.0);
    result.best_val_mae = best_val;
    result.best_epoch = best_epoch;
    result.epochs_run = epochs_run;
  };

  int epoch = 1;
  for (; epoch <= cfg.epochs; ++epoch) {
    std::vector<size_t> order(train.size());
    std::iota(order.begin(), order.end(), size_t{0});
    std::mt19937_64 shuffle_rng(cfg.seed * 1000003ULL + 100 + static_cast<uint64_t>(epoch));
    std::shuffle(order.begin(), order.end(), shuffle_rng);

    std::vector<MetricsAccum> train_acc(static_cast<size_t>(t_out));
    std::vector<int64_t> selections(static_cast<size_t>(n_experts), 0);
    std::vector<int64_t> node_selections(static_cast<size_t>(n_experts), 0);
    std::vector<double> prob_sum(static_cast<size_t>(n_experts), 0.0);
    int64_t routed_samples = 0;
    double lr_last = cfg.lr_min;

    for (size_t batch_start = 0; batch_start < order.size();
         batch_start += static_cast<size_t>(cfg.batch_size)) {
      const size_t batch_end =
          std::min(order.size(), batch_start + static_cast<size_t>(cfg.batch_size));
      const size_t bsz = batch_end - batch_start;
      const bool warmup_now = prior != nullptr && gstep < t_warm;
      const PriorGraph* batch_prior = warmup_now ? prior : nullptr;
      const bool ce_enabled = cfg.uses_gate() && cfg.lambda_route > 0.0 &&
                              (cfg.route_loss_in_warmup || !warmup_now);

      // loss scale factors depend only on the masks, so they are known before
      // any forward pass
      int64_t observed = 0, labeled = 0;
      std::vector<int64_t> sample_obs(bsz, 0);
      for (size_t k = 0; k < bsz; ++k) {
        const TrafficWindow& w = train[order[batch_start + k]];
        for (uint8_t m : w.y_missing) sample_obs[k] += m ? 0 : 1;
        observed += sample_obs[k];
        if (ce_enabled && sample_obs[k] > 0) ++labeled;
      }
      if (observed == 0) fail(errc::invalid_argument, "loss: empty mask over a whole batch");

      struct SampleResult {
        GradMap g_forecast, g_gate;
        double loss = 0.0;
        int selected = -1;
        std::vector<int> node_sel;
        std::vector<double> probs;
        std::vector<MetricsAccum> horizon;
      };
      std::vector<SampleResult>结;
      std::vector<SampleResult> samples(bsz);

      auto process = [&](size_t k) {
        const TrafficWindow& w = train[order[batch_start + k]];
        SampleResult& r = samples[k];
        ModelForward fwd = model->forward(w.x, w.x_timestamps, batch_prior, false);

        std::vector<double> maskv(w.y_missing.size());
        for (size_t i = 0; i < maskv.size(); ++i) maskv[i] = w.y_missing[i] ? 0.0 : 1.0;
        Tensor mask = Tensor::from(w.y.shape(), std::move(maskv));
        Tensor l_p = scale(sum(mul(titan::abs(sub(fwd.forecast, w.y)), mask)),
                           1.0 / static_cast<double>(observed));
        r.loss = l_p.value();
        r.g_forecast = backward(l_p);

        if (cfg.uses_gate()) {
          r.selected = fwd.gate.selected;
          r.node_sel = per_node_selection(fwd.gate);
          r.probs = fwd.gate.probs_v;
          if (ce_enabled && sample_obs[k] > 0) {
            const int label = best_expert_label(fwd.outputs, w);
            Tensor l_g = scale(neg(titan::log(slice(fwd.gate.probs, 0, label, 1))),
                               cfg.lambda_route / static_cast<double>(labeled));
            r.loss += l_g.value();
            r.g_gate = backward(l_g);
          }
        } else {
          r.probs = fwd.gate.probs_v;
        }

        r.horizon.resize(static_cast<size_t>(t_out));
        const auto& pv = fwd.forecast.data();
        const auto& yv = w.y.data();
        for (int t = 0; t < t_out; ++t)
          for (int j = 0; j < n_nodes; ++j) {
            const size_t i = static_cast<size_t>(t) * n_nodes + j;
            if (!w.y_missing[i])
              r.horizon[static_cast<size_t>(t)].add(denorm(pv[i], ds.norm, w.normalized),
                                                    denorm(yv[i], ds.norm, w.normalized));
          }
      };

      // samples run in parallel; every reduction below is in sample order, so
      // results are bit-identical for any thread count
      const int workers = std::max(1, std::min<int>(compute_threads(),
                                                    static_cast<int>(bsz)));
      if (workers == 1) {
        for (size_t k = 0; k < bsz; ++k) process(k);
      } else {
        std::vector<std::thread> pool;
        for (int t = 1; t < workers; ++t)
          pool.emplace_back([&, t] {
            for (size_t k = static_cast<size_t>(t); k < bsz; k += workers) process(k);
          });
        for (size_t k = 0; k < bsz; k += workers) process(k);
        for (auto& th : pool) th.join();
      }

      double loss_value = 0.0;
      for (auto& r : samples) loss_value += r.loss;
      if (!std::isfinite(loss_value)) {
        save_best(epoch);
        fail(errc::diverged, "training diverged at step " + std::to_string(gstep) +
                                 " (loss not finite); best checkpoint saved");
      }

      for (auto& r : samples) {
        if (cfg.uses_gate()) {
          ++routed_samples;
          ++selections[static_cast<size_t>(r.selected)];
          for (int node_sel : r.node_sel) ++node_selections[static_cast<size_t>(node_sel)];
        }
        for (int e = 0; e < n_experts; ++e) prob_sum[static_cast<size_t>(e)] += r.probs[e];
        for (int t = 0; t < t_out; ++t)
          train_acc[static_cast<size_t>(t)].merge(r.horizon[static_cast<size_t>(t)]);
      }

      adam.zero_grad();
      for (auto& p : params) {
        const ParamGroup group = param_group(p.name);
        Tensor t = p.tensor;
        auto& g = t.grad();
        auto pull = [&](GradMap& gm) {
          auto it = gm.find(t.impl());
          if (it == gm.end()) return;
          for (size_t i = 0; i < g.size(); ++i) g[i] += it->second[i];
        };
        // the variable expert alternates: encoder follows the forecast loss,
        // bridge follows the gate loss, everything else follows their sum
        for (auto& r : samples) {
          if (group != ParamGroup::semantic_bridge) pull(r.g_forecast);
          if (group != ParamGroup::semantic_encoder) pull(r.g_gate);
        }
      }
      clip_global_norm(params, cfg.grad_clip);
      lr_last = lr_schedule(gstep, cfg.lr_min, cfg.lr_max, t_warm, t_freq);
      adam.step(lr_last);
      ++gstep;

      if (prior != nullptr && !transition_logged && gstep >= t_warm) {
        log_info("prior annealing: warmup ended at step " + std::to_string(gstep) +
                 " (epoch " + std::to_string(epoch) + ")");
        transition_logged = true;
      }
    }

    const char* phase = (prior != nullptr && gstep < t_warm) ? "warmup" : "free";

    EvalReport val = evaluate(*model, ds.norm, series.sensor_ids, ds.split.val);

    MetricsAccum train_total;
    for (int t = 0; t < t_out; ++t) {
      history.push_back({epoch, "train", std::to_string(t + 1), train_acc[t].result(),
                         lr_last, phase});
      train_total.merge(train_acc[static_cast<size_t>(t)]);
    }
    history.push_back({epoch, "train", "avg", train_total.result(), lr_last, phase});
    for (int t = 0; t < t_out; ++t)
      history.push_back({epoch, "val", std::to_string(t + 1),
                         val.per_horizon[static_cast<size_t>(t)], lr_last, phase});
    history.push_back({epoch, "val", "avg", val.avg, lr_last, phase});

    nlohmann::json line = {{"epoch", epoch},
                           {"phase", phase},
                           {"selections", selections},
                           {"mean_probs", nlohmann::json::array()},
                           {"node_selections", node_selections}};
    const double denom = static_cast<double>(
        cfg.uses_gate() ? std::max<int64_t>(1, routed_samples)
                        : static_cast<int64_t>(std::max<size_t>(1, train.size())));
    for (double s : prob_sum) line["mean_probs"].push_back(s / denom);
    routing_lines.push_back(line.dump());
    log_info("epoch " + std::to_string(epoch) + " [" + phase + "] train MAE " +
             std::to_string(train_total.result().mae) + ", val MAE " +
             std::to_string(val.avg.mae));

    if (val.avg.mae < best_val) {
      best_val = val.avg.mae;
      best_epoch = epoch;
      best_snapshot = snapshot_params(params);
      patience_left = cfg.patience;
    } else if (--patience_left <= 0) {
      log_info("early stop after epoch " + std::to_string(epoch) + " (best epoch " +
               std::to_string(best_epoch) + ")");
      break;
    }
  }

  save_best(std::min(epoch, cfg.epochs));
  result.model = model;

  write_history_csv(result.history_path.string(), history);
  {
    std::ofstream out(result.routing_log_path, std::ios::binary);
    if (!out) fail(errc::io, "cannot write '" + result.routing_log_path.string() + "'");
    for (const auto& line : routing_lines) out << line << '\n';
  }

  RunManifest manifest;
  manifest.config_hash = config_hash;
  manifest.seed = cfg.seed;
  manifest.input_hashes = input_hashes;
  manifest.started_unix = started;
  manifest.finished_unix = std::chrono::duration_cast<std::chrono::seconds>(
                               std::chrono::system_clock::now().time_since_epoch())
                               .count();
  manifest.outputs = {{"checkpoint", result.checkpoint_path.string()},
                      {"history", result.history_path.string()},
                      {"routing_log", result.routing_log_path.string()},
                      {"config", result.config_path.string()}};
  manifest.duplicate_of_previous = result.duplicate;
  write_manifest_atomic(out_dir, manifest);
  return result;
}

}  // namespace titan
