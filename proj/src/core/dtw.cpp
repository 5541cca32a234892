#include "core/dtw.hpp"

#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <future>
#include <limits>
#include <thread>

#include <json.hpp>

namespace titan {

void PriorGraph::validate() const {
  if (n < 2 || w.size() != static_cast<size_t>(n) * n)
    fail(errc::format, "prior graph: bad dimensions");
  for (int i = 0; i < n; ++i) {
    if (std::fabs(at(i, i) - 1.0) > 1e-12)
      fail(errc::format, "prior graph: diagonal entry " + std::to_string(i) + " is not 1");
    for (int j = 0; j < n; ++j) {
      const double v = at(i, j);
      if (!(v >= 0.0 && v <= 1.0))
        fail(errc::format, "prior graph: entry out of [0, 1] at (" + std::to_string(i) + ", " +
                               std::to_string(j) + ")");
      if (std::fabs(v - at(j, i)) > 1e-12)
        fail(errc::format, "prior graph: asymmetric at (" + std::to_string(i) + ", " +
                               std::to_string(j) + ")");
    }
  }
}

double dtw_distance(std::span<const double> a, std::span<const double> b, int band) {
  if (a.empty() || b.empty()) fail(errc::invalid_argument, "dtw_distance: empty series");
  const size_t la = a.size(), lb = b.size();
  const double inf = std::numeric_limits<double>::infinity();
  // two-row DP over the (la+1) x (lb+1) table, D[0][0] = 0, borders = inf
  std::vector<double> prev(lb + 1, inf), cur(lb + 1, inf);
  prev[0] = 0.0;
  for (size_t i = 1; i <= la; ++i) {
    std::fill(cur.begin(), cur.end(), inf);
    size_t jlo = 1, jhi = lb;
    if (band > 0) {
      const double ratio = static_cast<double>(lb) / static_cast<double>(la);
      const double center = ratio * static_cast<double>(i);
      jlo = static_cast<size_t>(std::max(1.0, std::floor(center - band)));
      jhi = static_cast<size_t>(std::min(static_cast<double>(lb), std::ceil(center + band)));
    }
    for (size_t j = jlo; j <= jhi; ++j) {
      const double cost = std::fabs(a[i - 1] - b[j - 1]);
      const double best = std::min({prev[j], cur[j - 1], prev[j - 1]});
      cur[j] = best == inf ? inf : cost + best;
    }
    std::swap(prev, cur);
  }
  const double d = prev[lb];
  if (!std::isfinite(d)) fail(errc::invalid_argument, "dtw_distance: band too narrow");
  return d;
}

std::vector<std::vector<double>> dtw_preprocess(const SensorSeries& s, const PriorOptions& opt) {
  if (s.sensors() < 2) fail(errc::invalid_argument, "dtw: need at least 2 sensors");
  int64_t train_end = opt.train_steps > 0 ? std::min<int64_t>(opt.train_steps, s.steps())
                                          : (s.steps() * 7) / 10;
  if (train_end < 2) fail(errc::invalid_argument, "dtw: train range too short");

  const int64_t dt = s.interval();
  if (opt.max_days > 0)
    train_end = std::min<int64_t>(train_end, opt.max_days * (86400 / std::max<int64_t>(dt, 1)));

  int64_t bucket = 1;
  if (opt.downsample_min > 0)
    bucket = std::max<int64_t>(1, (static_cast<int64_t>(opt.downsample_min) * 60) / dt);

  const int n = s.sensors();
  std::vector<std::vector<double>> out(n);
  for (int i = 0; i < n; ++i) {
    std::vector<double> series;
    for (int64_t b = 0; b * bucket < train_end; ++b) {
      double sum = 0.0;
      int64_t cnt = 0;
      for (int64_t t = b * bucket; t < std::min(train_end, (b + 1) * bucket); ++t)
        if (!s.is_missing(t, i)) {
          sum += s.at(t, i);
          ++cnt;
        }
      series.push_back(cnt > 0 ? sum / static_cast<double>(cnt) : 0.0);
    }
    // per-sensor z-score so DTW compares shapes, not offsets
    double mean = 0.0;
    for (double v : series) mean += v;
    mean /= static_cast<double>(series.size());
    double var = 0.0;
    for (double v : series) var += (v - mean) * (v - mean);
    const double stdev = std::sqrt(var / static_cast<double>(series.size()));
    for (double& v : series) v = stdev > 1e-8 ? (v - mean) / stdev : 0.0;
    out[i] = std::move(series);
  }
  return out;
}

double distance_quantile(std::vector<double> d, double q) {
  if (d.empty()) fail(errc::invalid_argument, "quantile of empty set");
  std::sort(d.begin(), d.end());
  q = std::clamp(q, 0.0, 1.0);
  // piecewise-linear through (0, 0), (1/n, d1), ..., (n/n, dn)
  const double pos = q * static_cast<double>(d.size());
  const auto lo = static_cast<size_t>(std::floor(pos));
  const double frac = pos - static_cast<double>(lo);
  const double left = lo == 0 ? 0.0 : d[lo - 1];
  const double right = lo >= d.size() ? d.back() : d[lo];
  return left + frac * (right - left);
}

PriorGraph build_prior(const SensorSeries& s, const PriorOptions& opt) {
  const int n = s.sensors();
  if (n < 2) fail(errc::invalid_argument, "build_prior: need at least 2 sensors");
  const auto pre = dtw_preprocess(s, opt);

  std::vector<double> dist(static_cast<size_t>(n) * n, 0.0);
  std::vector<std::pair<int, int>> pairs;
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j) pairs.emplace_back(i, j);

  int threads = opt.threads > 0 ? opt.threads
                                : static_cast<int>(std::thread::hardware_concurrency());
  threads = std::clamp<int>(threads, 1, static_cast<int>(pairs.size()));
  std::vector<std::future<void>> futs;
  std::atomic<size_t> next{0};
  auto worker = [&] {
    for (size_t k = next.fetch_add(1); k < pairs.size(); k = next.fetch_add(1)) {
      const auto [i, j] = pairs[k];
      const double d = dtw_distance(pre[i], pre[j], opt.band);
      dist[static_cast<size_t>(i) * n + j] = d;
      dist[static_cast<size_t>(j) * n + i] = d;
    }
  };
  for (int t = 1; t < threads; ++t) futs.push_back(std::async(std::launch::async, worker));
  worker();
  for (auto& f : futs) f.get();

  std::vector<double> off;
  off.reserve(pairs.size());
  for (const auto& [i, j] : pairs) off.push_back(dist[static_cast<size_t>(i) * n + j]);
  double mean = 0.0;
  for (double v : off) mean += v;
  mean /= static_cast<double>(off.size());
  double var = 0.0;
  for (double v : off) var += (v - mean) * (v - mean);

  PriorGraph g;
  g.n = n;
  g.sigma = std::sqrt(var / static_cast<double>(off.size()));
  g.kappa_quantile = opt.kappa_quantile;
  g.kappa = distance_quantile(off, opt.kappa_quantile);
  g.w.assign(static_cast<size_t>(n) * n, 0.0);
  const double sig = std::max(g.sigma, 1e-12);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) {
      const double l = dist[static_cast<size_t>(i) * n + j];
      const double z = l / sig;
      g.w[static_cast<size_t>(i) * n + j] = l <= g.kappa ? std::exp(-z * z) : 0.0;
    }
  g.validate();
  return g;
}

void save_prior_csv(const PriorGraph& g, const std::string& csv_path,
                    const std::string& json_path) {
  std::ofstream out(csv_path, std::ios::binary);
  if (!out) fail(errc::io, "cannot write '" + csv_path + "'");
  char buf[64];
  for (int i = 0; i < g.n; ++i) {
    for (int j = 0; j < g.n; ++j) {
      if (j) out << ',';
      std::snprintf(buf, sizeof(buf), "%.9g", g.at(i, j));
      out << buf;
    }
    out << '\n';
  }
  if (!out) fail(errc::io, "short write to '" + csv_path + "'");

  nlohmann::json meta = {{"n", g.n},
                         {"kappa", g.kappa},
                         {"sigma", g.sigma},
                         {"kappa_quantile", g.kappa_quantile}};
  std::ofstream jout(json_path, std::ios::binary);
  if (!jout) fail(errc::io, "cannot write '" + json_path + "'");
  jout << meta.dump(2) << '\n';
}

PriorGraph load_prior_csv(const std::string& csv_path, const std::string& json_path) {
  std::ifstream in(csv_path);
  if (!in) fail(errc::io, "cannot open '" + csv_path + "'");
  PriorGraph g;
  std::string line;
  size_t row = 0;
  while (std::getline(in, line)) {
    ++row;
    if (line.empty()) continue;
    size_t pos = 0;
    int cols = 0;
    while (pos <= line.size()) {
      const size_t comma = line.find(',', pos);
      const std::string cell =
          line.substr(pos, comma == std::string::npos ? std::string::npos : comma - pos);
      char* end = nullptr;
      const double v = std::strtod(cell.c_str(), &end);
      if (end == cell.c_str())
        fail(errc::format, "'" + csv_path + "' row " + std::to_string(row) + ": bad cell");
      g.w.push_back(v);
      ++cols;
      if (comma == std::string::npos) break;
      pos = comma + 1;
    }
    if (g.n == 0)
      g.n = cols;
    else if (cols != g.n)
      fail(errc::format, "'" + csv_path + "' row " + std::to_string(row) + ": expected " +
                             std::to_string(g.n) + " columns, got " + std::to_string(cols));
  }
  if (g.w.size() != static_cast<size_t>(g.n) * g.n)
    fail(errc::format, "'" + csv_path + "': not a square matrix");

  if (!json_path.empty()) {
    std::ifstream jin(json_path);
    if (!jin) fail(errc::io, "cannot open '" + json_path + "'");
    nlohmann::json meta;
    try {
      jin >> meta;
      g.kappa = meta.at("kappa").get<double>();
      g.sigma = meta.at("sigma").get<double>();
      g.kappa_quantile = meta.at("kappa_quantile").get<double>();
      if (meta.at("n").get<int>() != g.n)
        fail(errc::format, "'" + json_path + "': n does not match the CSV matrix");
    } catch (const nlohmann::json::exception& e) {
      fail(errc::format, "'" + json_path + "': " + e.what());
    }
  }
  g.validate();
  return g;
}

}  // namespace titan
