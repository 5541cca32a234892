#include "core/series.hpp"

#include <cmath>
#include <cstdlib>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>

namespace titan {

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> cells;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      cells.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur.push_back(c);
    }
  }
  cells.push_back(cur);
  return cells;
}

bool looks_like_iso(const std::string& cell) {
  return cell.find('-') != std::string::npos || cell.find(':') != std::string::npos;
}

int64_t parse_timestamp(const std::string& cell, bool iso, size_t row) {
  if (iso) {
    int y = 0;
    unsigned mo = 0, d = 0, h = 0, mi = 0, se = 0;
    const int n = std::sscanf(cell.c_str(), "%d-%u-%u%*1[T ]%u:%u:%u", &y, &mo, &d, &h, &mi, &se);
    if (n < 3 || mo < 1 || mo > 12 || d < 1 || d > 31 || h > 23 || mi > 59 || se > 60)
      fail(errc::format,
           "row " + std::to_string(row) + ": unparsable ISO-8601 timestamp '" + cell + "'");
    return days_from_civil(y, mo, d) * 86400 + static_cast<int64_t>(h) * 3600 + mi * 60 + se;
  }
  errno = 0;
  char* end = nullptr;
  const long long v = std::strtoll(cell.c_str(), &end, 10);
  if (errno != 0 || end == cell.c_str() || *end != '\0')
    fail(errc::format,
         "row " + std::to_string(row) + ": unparsable epoch timestamp '" + cell + "'");
  return v;
}

}  // namespace

int64_t SensorSeries::interval() const {
  if (timestamps.size() < 2)
    fail(errc::invalid_argument, "series needs at least 2 rows to define an interval");
  return timestamps[1] - timestamps[0];
}

void SensorSeries::validate() const {
  const size_t n = sensor_ids.size() * timestamps.size();
  if (values.size() != n || missing.size() != n)
    fail(errc::internal, "series buffers do not match steps x sensors");
  if (timestamps.size() >= 2) {
    const int64_t dt = timestamps[1] - timestamps[0];
    for (size_t i = 1; i < timestamps.size(); ++i)
      if (timestamps[i] - timestamps[i - 1] != dt)
        fail(errc::format, "irregular interval at row " + std::to_string(i + 1));
  }
}

SensorSeries load_series_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail(errc::io, "cannot open '" + path + "'");
  std::string line;
  if (!std::getline(in, line)) fail(errc::format, "'" + path + "': empty file");
  auto header = split_csv_line(line);
  if (header.size() < 2 || header[0] != "timestamp")
    fail(errc::format, "'" + path + "': header must be 'timestamp,<sensor_id>,...'");

  SensorSeries s;
  s.sensor_ids.assign(header.begin() + 1, header.end());
  const int n = s.sensors();

  bool iso = false;
  bool iso_known = false;
  size_t row = 1;  // header was row 1
  while (std::getline(in, line)) {
    ++row;
    if (line.empty()) continue;
    auto cells = split_csv_line(line);
    if (static_cast<int>(cells.size()) != n + 1)
      fail(errc::format, "row " + std::to_string(row) + ": expected " + std::to_string(n + 1) +
                             " cells, got " + std::to_string(cells.size()));
    if (!iso_known) {
      iso = looks_like_iso(cells[0]);
      iso_known = true;
    }
    const int64_t ts = parse_timestamp(cells[0], iso, row);
    if (!s.timestamps.empty()) {
      if (ts == s.timestamps.back())
        fail(errc::format, "row " + std::to_string(row) + ": duplicate timestamp");
      if (ts < s.timestamps.back())
        fail(errc::format, "row " + std::to_string(row) + ": timestamps must increase");
      if (s.timestamps.size() >= 2) {
        const int64_t dt = s.timestamps[1] - s.timestamps[0];
        if (ts - s.timestamps.back() != dt)
          fail(errc::format,
               "row " + std::to_string(row) + ": irregular interval (expected step " +
                   std::to_string(dt) + ", got " + std::to_string(ts - s.timestamps.back()) +
                   ")");
      }
    }
    s.timestamps.push_back(ts);
    for (int j = 0; j < n; ++j) {
      const std::string& cell = cells[j + 1];
      if (cell.empty()) {
        s.values.push_back(0.0);
        s.missing.push_back(1);
        continue;
      }
      errno = 0;
      char* end = nullptr;
      const double v = std::strtod(cell.c_str(), &end);
      if (errno != 0 || end == cell.c_str() || *end != '\0' || !std::isfinite(v))
        fail(errc::format,
             "row " + std::to_string(row) + ": unparsable value '" + cell + "'");
      s.values.push_back(v);
      s.missing.push_back(0);
    }
  }
  if (s.timestamps.size() < 2)
    fail(errc::format, "'" + path + "': need at least 2 data rows");
  return s;
}

void save_series_csv(const SensorSeries& s, const std::string& path) {
  std::ofstream out(path, std::ios::binary);  // binary keeps LF endings everywhere
  if (!out) fail(errc::io, "cannot write '" + path + "'");
  out << "timestamp";
  for (const auto& id : s.sensor_ids) out << ',' << id;
  out << '\n';
  char buf[64];
  const int n = s.sensors();
  for (int64_t t = 0; t < s.steps(); ++t) {
    out << s.timestamps[t];
    for (int j = 0; j < n; ++j) {
      out << ',';
      if (!s.is_missing(t, j)) {
        std::snprintf(buf, sizeof(buf), "%.12g", s.at(t, j));
        out << buf;
      }
    }
    out << '\n';
  }
  if (!out) fail(errc::io, "short write to '" + path + "'");
}

NormStats zscore_fit(const SensorSeries& s, StepRange fit) {
  if (fit.begin < 0 || fit.end > s.steps() || fit.size() <= 0)
    fail(errc::invalid_argument, "zscore: empty or out-of-range fit range");
  double sum = 0.0, sq = 0.0;
  int64_t count = 0;
  for (int64_t t = fit.begin; t < fit.end; ++t)
    for (int j = 0; j < s.sensors(); ++j)
      if (!s.is_missing(t, j)) {
        sum += s.at(t, j);
        sq += s.at(t, j) * s.at(t, j);
        ++count;
      }
  if (count == 0) fail(errc::invalid_argument, "zscore: channel has no observed values");
  const double mean = sum / static_cast<double>(count);
  const double var = std::max(sq / static_cast<double>(count) - mean * mean, 0.0);
  const double stdev = std::sqrt(var);
  if (stdev <= 1e-8)
    fail(errc::invalid_argument, "zscore: degenerate channel (std = " + std::to_string(stdev) +
                                     ")");
  return NormStats{{mean}, {stdev}};
}

SensorSeries zscore_transform(const SensorSeries& s, const NormStats& stats) {
  SensorSeries t = s;
  for (size_t i = 0; i < t.values.size(); ++i)
    t.values[i] = t.missing[i] ? 0.0 : (t.values[i] - stats.mean[0]) / stats.stdev[0];
  t.normalized = true;
  return t;
}

SensorSeries zscore_inverse(const SensorSeries& s, const NormStats& stats) {
  SensorSeries t = s;
  for (size_t i = 0; i < t.values.size(); ++i)
    t.values[i] = t.missing[i] ? 0.0 : t.values[i] * stats.stdev[0] + stats.mean[0];
  t.normalized = false;
  return t;
}

std::pair<SensorSeries, NormStats> zscore_fit_transform(const SensorSeries& s, StepRange fit) {
  NormStats stats = zscore_fit(s, fit);
  return {zscore_transform(s, stats), stats};
}

std::vector<TrafficWindow> make_windows(const SensorSeries& s, int t_in, int t_out, int stride) {
  if (t_in < 1 || t_out < 1 || stride < 1)
    fail(errc::invalid_argument, "make_windows: t_in, t_out and stride must be positive");
  const int64_t need = t_in + t_out;
  if (s.steps() < need)
    fail(errc::invalid_argument, "make_windows: series has " + std::to_string(s.steps()) +
                                     " steps, needs at least " + std::to_string(need));
  const int n = s.sensors();
  std::vector<TrafficWindow> out;
  for (int64_t start = 0; start + need <= s.steps(); start += stride) {
    TrafficWindow w;
    std::vector<double> xv(static_cast<size_t>(t_in) * n);
    std::vector<double> yv(static_cast<size_t>(t_out) * n);
    w.x_missing.resize(xv.size());
    w.y_missing.resize(yv.size());
    w.x_timestamps.resize(t_in);
    for (int t = 0; t < t_in; ++t) {
      w.x_timestamps[t] = s.timestamps[start + t];
      for (int j = 0; j < n; ++j) {
        xv[t * n + j] = s.at(start + t, j);
        w.x_missing[t * n + j] = s.missing[(start + t) * n + j];
      }
    }
    for (int t = 0; t < t_out; ++t)
      for (int j = 0; j < n; ++j) {
        yv[t * n + j] = s.at(start + t_in + t, j);
        w.y_missing[t * n + j] = s.missing[(start + t_in + t) * n + j];
      }
    w.x = Tensor::from({t_in, n, 1}, std::move(xv));
    w.y = Tensor::from({t_out, n, 1}, std::move(yv));
    w.normalized = s.normalized;
    out.push_back(std::move(w));
  }
  return out;
}

WindowSplit chrono_split(std::vector<TrafficWindow> windows, SplitRatios ratios) {
  if (std::fabs(ratios.train + ratios.val + ratios.test - 1.0) > 1e-9)
    fail(errc::config, "chrono_split: ratios must sum to 1");
  const int64_t n = static_cast<int64_t>(windows.size());
  const int64_t n_train = static_cast<int64_t>(std::floor(ratios.train * n));
  const int64_t n_val = static_cast<int64_t>(std::floor(ratios.val * n));
  const int64_t n_test = n - n_train - n_val;
  if (n_train <= 0 || n_val <= 0 || n_test <= 0)
    fail(errc::invalid_argument, "chrono_split: " + std::to_string(n) +
                                     " windows leave an empty split at ratios (" +
                                     std::to_string(ratios.train) + ", " +
                                     std::to_string(ratios.val) + ", " +
                                     std::to_string(ratios.test) + ")");
  WindowSplit s;
  s.train.assign(std::make_move_iterator(windows.begin()),
                 std::make_move_iterator(windows.begin() + n_train));
  s.val.assign(std::make_move_iterator(windows.begin() + n_train),
               std::make_move_iterator(windows.begin() + n_train + n_val));
  s.test.assign(std::make_move_iterator(windows.begin() + n_train + n_val),
                std::make_move_iterator(windows.end()));
  return s;
}

StepRange train_fit_range(int64_t total_steps, int t_in, int t_out, int stride,
                          SplitRatios ratios) {
  const int64_t need = t_in + t_out;
  if (total_steps < need) fail(errc::invalid_argument, "train_fit_range: series too short");
  const int64_t n_windows = (total_steps - need) / stride + 1;
  const int64_t n_train = static_cast<int64_t>(std::floor(ratios.train * n_windows));
  // last train window starts at (n_train-1)*stride and touches need more steps
  const int64_t end = n_train > 0 ? (n_train - 1) * stride + need : 0;
  return {0, std::min(end, total_steps)};
}

void MetricsAccum::add(double pred, double target) {
  const double e = pred - target;
  abs_ += std::fabs(e);
  sq_ += e * e;
  ++n_;
  if (std::fabs(target) >= 1.0) {
    ape_ += std::fabs(e / target);
    ++n_ape_;
  }
}

void MetricsAccum::merge(const MetricsAccum& other) {
  abs_ += other.abs_;
  sq_ += other.sq_;
  ape_ += other.ape_;
  n_ += other.n_;
  n_ape_ += other.n_ape_;
}

Metrics MetricsAccum::result() const {
  if (n_ == 0) fail(errc::invalid_argument, "metrics: no observed entries");
  Metrics m;
  m.mae = abs_ / static_cast<double>(n_);
  m.rmse = std::sqrt(sq_ / static_cast<double>(n_));
  m.mape = n_ape_ > 0 ? 100.0 * ape_ / static_cast<double>(n_ape_) : 0.0;
  return m;
}

Metrics metrics(const std::vector<double>& pred, const std::vector<double>& target,
                const std::vector<uint8_t>& missing_mask) {
  if (pred.size() != target.size() || pred.size() != missing_mask.size())
    fail(errc::invalid_argument, "metrics: size mismatch (" + std::to_string(pred.size()) +
                                     ", " + std::to_string(target.size()) + ", " +
                                     std::to_string(missing_mask.size()) + ")");
  MetricsAccum acc;
  for (size_t i = 0; i < pred.size(); ++i)
    if (!missing_mask[i]) acc.add(pred[i], target[i]);
  return acc.result();
}

}  // namespace titan
