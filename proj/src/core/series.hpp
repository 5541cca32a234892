#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "core/tensor.hpp"

namespace titan {

// Fixed-interval multivariate speed readings. Missing entries are stored as
// 0.0 and flagged in `missing`; they never enter statistics, loss or metrics.
struct SensorSeries {
  std::vector<std::string> sensor_ids;
  std::vector<int64_t> timestamps;  // epoch seconds, strictly increasing, constant step
  std::vector<double> values;       // steps x N row-major
  std::vector<uint8_t> missing;     // steps x N, 1 = missing
  bool normalized = false;

  int64_t steps() const { return static_cast<int64_t>(timestamps.size()); }
  int sensors() const { return static_cast<int>(sensor_ids.size()); }
  int64_t interval() const;
  double at(int64_t step, int sensor) const { return values[step * sensors() + sensor]; }
  bool is_missing(int64_t step, int sensor) const {
    return missing[step * sensors() + sensor] != 0;
  }
  void validate() const;
};

struct NormStats {
  std::vector<double> mean;   // per channel
  std::vector<double> stdev;  // per channel, > 1e-8
};

// One training sample: an hour of context and the following hour as target.
struct TrafficWindow {
  Tensor x;  // (T_in, N, F)
  Tensor y;  // (T_out, N, 1)
  std::vector<uint8_t> x_missing;  // T_in x N
  std::vector<uint8_t> y_missing;  // T_out x N
  std::vector<int64_t> x_timestamps;
  bool normalized = false;
};

struct StepRange {
  int64_t begin = 0;
  int64_t end = 0;  // half-open
  int64_t size() const { return end - begin; }
};

SensorSeries load_series_csv(const std::string& path);
void save_series_csv(const SensorSeries& s, const std::string& path);

// Statistics over non-missing entries of the fit range only (train split),
// population standard deviation.
NormStats zscore_fit(const SensorSeries& s, StepRange fit);
SensorSeries zscore_transform(const SensorSeries& s, const NormStats& stats);
SensorSeries zscore_inverse(const SensorSeries& s, const NormStats& stats);
std::pair<SensorSeries, NormStats> zscore_fit_transform(const SensorSeries& s, StepRange fit);

std::vector<TrafficWindow> make_windows(const SensorSeries& s, int t_in = 12, int t_out = 12,
                                        int stride = 1);

struct SplitRatios {
  double train = 0.7, val = 0.1, test = 0.2;
};
struct WindowSplit {
  std::vector<TrafficWindow> train, val, test;
};
// Chronological, floor-rounded, remainder to test. Windows must be in order.
WindowSplit chrono_split(std::vector<TrafficWindow> windows, SplitRatios ratios = {});

// Steps whose readings any train-split window can touch, i.e. the range
// normalization statistics may legally be fitted on.
StepRange train_fit_range(int64_t total_steps, int t_in, int t_out, int stride,
                          SplitRatios ratios = {});

struct Metrics {
  double mae = 0, rmse = 0, mape = 0;  // mape in percent
};

// Pooled error accumulation in de-normalized units. MAPE skips entries with
// |target| < 1.0.
class MetricsAccum {
 public:
  void add(double pred, double target);
  void merge(const MetricsAccum& other);
  bool empty() const { return n_ == 0; }
  int64_t count() const { return n_; }
  Metrics result() const;  // throws on empty

 private:
  double abs_ = 0, sq_ = 0, ape_ = 0;
  int64_t n_ = 0, n_ape_ = 0;
};

Metrics metrics(const std::vector<double>& pred, const std::vector<double>& target,
                const std::vector<uint8_t>& missing_mask);

}  // namespace titan
