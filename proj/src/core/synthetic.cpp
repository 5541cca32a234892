#include "core/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <random>

namespace titan {

namespace {

int ring_dist(int i, int j, int n) {
  const int d = std::abs(i - j);
  return std::min(d, n - d);
}

double bump(double h, double center, double width) {
  const double z = (h - center) / width;
  return std::exp(-0.5 * z * z);
}

}  // namespace

SensorSeries gen_synthetic(const SynthOptions& opt) {
  if (opt.sensors < 2)
    fail(errc::invalid_argument,
         "gen_synthetic: need at least 2 sensors, got " + std::to_string(opt.sensors));
  if (opt.days < 1) fail(errc::invalid_argument, "gen_synthetic: days must be >= 1");
  if (opt.interval_min < 1 || 1440 % opt.interval_min != 0)
    fail(errc::invalid_argument, "gen_synthetic: interval must divide a day");

  const int n = opt.sensors;
  const int per_day = 1440 / opt.interval_min;
  const int64_t steps = static_cast<int64_t>(opt.days) * per_day;
  const int64_t dt = static_cast<int64_t>(opt.interval_min) * 60;
  const int64_t start_ts = days_from_civil(2012, 3, 5) * 86400;  // a Monday

  std::mt19937_64 rng(opt.seed);
  std::uniform_real_distribution<double> uni(0.0, 1.0);

  struct SensorParams {
    double base, m_amp, e_amp, m_center, e_center;
  };
  std::vector<SensorParams> sp(n);
  for (auto& p : sp) {
    p.base = 48.0 + 14.0 * uni(rng);
    p.m_amp = 10.0 + 6.0 * uni(rng);
    p.e_amp = 6.0 + 6.0 * uni(rng);
    p.m_center = 8.0 + 0.8 * (uni(rng) - 0.5);
    p.e_center = 17.5 + 0.8 * (uni(rng) - 0.5);
  }

  // incident multipliers, drawn day by day so the stream layout is stable
  std::vector<double> mult(static_cast<size_t>(steps) * n, 1.0);
  for (int day = 0; day < opt.days; ++day)
    for (int i = 0; i < n; ++i) {
      if (uni(rng) >= 0.05) continue;
      const int start_min = static_cast<int>(uni(rng) * 1440.0);
      const int dur_min = 30 + static_cast<int>(uni(rng) * 90.0);
      const int64_t s0 = day * static_cast<int64_t>(per_day) + start_min / opt.interval_min;
      const int64_t s1 = std::min<int64_t>(steps, s0 + std::max(1, dur_min / opt.interval_min));
      for (int64_t t = s0; t < s1; ++t)
        for (int j = 0; j < n; ++j) {
          const int d = ring_dist(i, j, n);
          if (d == 0)
            mult[t * n + j] *= 0.55;
          else if (d == 1)
            mult[t * n + j] *= 0.8;
        }
    }

  // ring-correlated noise: white draws mixed with a short unit-norm kernel
  const double kernel[3] = {0.9, 0.3, 0.1};
  std::vector<double> kw(n, 0.0);
  double norm_sq = 0.0;
  for (int j = 0; j < n; ++j) {
    const int d = ring_dist(0, j, n);
    if (d <= 2) norm_sq += kernel[d] * kernel[d];
  }
  const double knorm = std::sqrt(norm_sq);
  const double noise_sigma = 0.8;

  std::normal_distribution<double> gauss(0.0, 1.0);
  SensorSeries s;
  s.sensor_ids.resize(n);
  for (int i = 0; i < n; ++i) {
    char buf[16];
    std::snprintf(buf, sizeof(buf), "s%03d", i);
    s.sensor_ids[i] = buf;
  }
  s.timestamps.resize(steps);
  s.values.resize(static_cast<size_t>(steps) * n);
  s.missing.assign(static_cast<size_t>(steps) * n, 0);

  std::vector<double> eps(n);
  for (int64_t t = 0; t < steps; ++t) {
    const int64_t ts = start_ts + t * dt;
    s.timestamps[t] = ts;
    const double hour = static_cast<double>(floor_mod(ts, 86400)) / 3600.0;
    const bool weekend = week_index(ts) >= 6;
    for (int i = 0; i < n; ++i) eps[i] = gauss(rng);
    for (int i = 0; i < n; ++i) {
      double mixed = 0.0;
      for (int j = 0; j < n; ++j) {
        const int d = ring_dist(i, j, n);
        if (d <= 2) mixed += kernel[d] / knorm * eps[j];
      }
      const SensorParams& p = sp[i];
      const double amp_scale = weekend ? 0.35 : 1.0;
      double v = p.base + (weekend ? 2.5 : 0.0);
      v -= amp_scale * (p.m_amp * bump(hour, p.m_center, 1.3) +
                        p.e_amp * bump(hour, p.e_center, 2.0));
      v *= mult[t * n + i];
      v += noise_sigma * mixed;
      s.values[t * n + i] = std::clamp(v, 3.0, 85.0);
    }
  }
  return s;
}

}  // namespace titan
