#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <random>

#include "core/dtw.hpp"
#include "core/synthetic.hpp"

using namespace titan;

namespace {

// Exhaustive minimum over all monotone alignment paths from (0,0) to the
// last cell, stepping (+1,0), (0,+1) or (+1,+1). Only viable for tiny series.
double dtw_enum_oracle(const std::vector<double>& a, const std::vector<double>& b, size_t i = 0,
                       size_t j = 0) {
  const double cost = std::fabs(a[i] - b[j]);
  if (i + 1 == a.size() && j + 1 == b.size()) return cost;
  double best = std::numeric_limits<double>::infinity();
  if (i + 1 < a.size()) best = std::min(best, dtw_enum_oracle(a, b, i + 1, j));
  if (j + 1 < b.size()) best = std::min(best, dtw_enum_oracle(a, b, i, j + 1));
  if (i + 1 < a.size() && j + 1 < b.size())
    best = std::min(best, dtw_enum_oracle(a, b, i + 1, j + 1));
  return cost + best;
}

}  // namespace

TEST_CASE("dtw distance basics") {
  std::vector<double> x = {1.0, -2.0, 0.5, 3.25};
  CHECK(dtw_distance(x, x) == 0.0);
  CHECK(dtw_distance(std::vector<double>{0.0}, std::vector<double>{3.0}) == 3.0);
  CHECK(dtw_distance(std::vector<double>{1, 2, 3}, std::vector<double>{1, 2, 2, 3}) == 0.0);
  CHECK_THROWS_AS(dtw_distance(std::vector<double>{}, x), error);
}

TEST_CASE("dtw matches exhaustive alignment enumeration") {
  std::mt19937_64 rng(17);
  std::uniform_int_distribution<int> len(1, 6);
  std::normal_distribution<double> val(0.0, 2.0);
  for (int rep = 0; rep < 60; ++rep) {
    std::vector<double> a(len(rng)), b(len(rng));
    for (auto& v : a) v = val(rng);
    for (auto& v : b) v = val(rng);
    CHECK(dtw_distance(a, b) == doctest::Approx(dtw_enum_oracle(a, b)).epsilon(1e-12));
    CHECK(dtw_distance(a, b) == doctest::Approx(dtw_distance(b, a)).epsilon(1e-12));
    CHECK(dtw_distance(a, b) >= 0.0);
  }
}

TEST_CASE("build_prior on identical sensors is all ones") {
  SensorSeries s;
  s.sensor_ids = {"a", "b"};
  for (int t = 0; t < 30; ++t) {
    s.timestamps.push_back(t * 300);
    const double v = std::sin(t * 0.7) + 0.1 * t;
    s.values.push_back(v);
    s.values.push_back(v);
    s.missing.push_back(0);
    s.missing.push_back(0);
  }
  auto g = build_prior(s, {.kappa_quantile = 0.7, .train_steps = 30, .downsample_min = 0});
  CHECK(g.n == 2);
  for (double v : g.w) CHECK(v == doctest::Approx(1.0));
}

namespace {

SensorSeries four_hand_series() {
  SensorSeries s;
  s.sensor_ids = {"a", "b", "c", "d"};
  std::mt19937_64 rng(5);
  std::normal_distribution<double> d(0.0, 1.0);
  for (int t = 0; t < 40; ++t) {
    s.timestamps.push_back(t * 300);
    s.values.push_back(std::sin(t * 0.3));
    s.values.push_back(std::cos(t * 0.3) + 0.5);
    s.values.push_back(0.2 * t + d(rng) * 0.1);
    s.values.push_back(std::sin(t * 0.9) * 2.0);
    for (int j = 0; j < 4; ++j) s.missing.push_back(0);
  }
  return s;
}

}  // namespace

TEST_CASE("build_prior matches the direct kernel formula") {
  auto s = four_hand_series();
  PriorOptions opt{.kappa_quantile = 0.8, .train_steps = 40, .downsample_min = 0};
  auto g = build_prior(s, opt);

  // independent recomputation from the exposed preprocessed slices
  auto pre = dtw_preprocess(s, opt);
  std::vector<double> off;
  std::vector<std::vector<double>> l(4, std::vector<double>(4, 0.0));
  for (int i = 0; i < 4; ++i)
    for (int j = i + 1; j < 4; ++j) {
      l[i][j] = l[j][i] = dtw_distance(pre[i], pre[j]);
      off.push_back(l[i][j]);
    }
  double mean = 0;
  for (double v : off) mean += v;
  mean /= off.size();
  double var = 0;
  for (double v : off) var += (v - mean) * (v - mean);
  const double sigma = std::sqrt(var / off.size());
  CHECK(g.sigma == doctest::Approx(sigma).epsilon(1e-12));
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 4; ++j) {
      const double expect =
          l[i][j] <= g.kappa ? std::exp(-(l[i][j] * l[i][j]) / (sigma * sigma)) : 0.0;
      CHECK(g.at(i, j) == doctest::Approx(expect).epsilon(1e-9));
    }
}

TEST_CASE("prior invariants and threshold limits") {
  auto s = gen_synthetic({.sensors = 6, .days = 4, .interval_min = 15, .seed = 21});
  PriorOptions opt{.kappa_quantile = 0.7, .downsample_min = 60};
  auto g = build_prior(s, opt);
  g.validate();

  // q -> 0 closes every off-diagonal edge (all pairwise distances positive)
  opt.kappa_quantile = 1e-9;
  auto g0 = build_prior(s, opt);
  for (int i = 0; i < g0.n; ++i)
    for (int j = 0; j < g0.n; ++j)
      CHECK(g0.at(i, j) == (i == j ? 1.0 : 0.0));

  // q = 1 keeps every edge
  opt.kappa_quantile = 1.0;
  auto g1 = build_prior(s, opt);
  for (double v : g1.w) CHECK(v > 0.0);

  // lowering the quantile never revives a zeroed edge
  PriorGraph prev = g1;
  for (double q : {0.8, 0.5, 0.2, 0.05}) {
    opt.kappa_quantile = q;
    auto cur = build_prior(s, opt);
    for (size_t k = 0; k < cur.w.size(); ++k)
      if (prev.w[k] == 0.0) CHECK(cur.w[k] == 0.0);
    prev = cur;
  }
}

TEST_CASE("build_prior is deterministic and permutation-consistent") {
  auto s = four_hand_series();
  PriorOptions opt{.kappa_quantile = 0.8, .train_steps = 40, .downsample_min = 0};
  auto g1 = build_prior(s, opt);
  auto g2 = build_prior(s, opt);
  CHECK(g1.w == g2.w);

  // swap sensors 0 and 2; the prior must permute the same way
  SensorSeries p = s;
  std::swap(p.sensor_ids[0], p.sensor_ids[2]);
  for (int64_t t = 0; t < p.steps(); ++t) {
    std::swap(p.values[t * 4 + 0], p.values[t * 4 + 2]);
  }
  auto gp = build_prior(p, opt);
  const int perm[4] = {2, 1, 0, 3};
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 4; ++j)
      CHECK(gp.at(i, j) == doctest::Approx(g1.at(perm[i], perm[j])).epsilon(1e-12));
}

TEST_CASE("prior csv and sidecar round trip") {
  auto s = gen_synthetic({.sensors = 5, .days = 3, .interval_min = 30, .seed = 13});
  auto g = build_prior(s, {.kappa_quantile = 0.7});
  auto dir = std::filesystem::temp_directory_path() / "titan_tests";
  std::filesystem::create_directories(dir);
  const auto csv = (dir / "prior.csv").string();
  const auto json = (dir / "prior.json").string();
  save_prior_csv(g, csv, json);
  auto r = load_prior_csv(csv, json);
  CHECK(r.n == g.n);
  CHECK(r.kappa == doctest::Approx(g.kappa).epsilon(1e-9));
  CHECK(r.sigma == doctest::Approx(g.sigma).epsilon(1e-9));
  for (size_t k = 0; k < g.w.size(); ++k)
    CHECK(r.w[k] == doctest::Approx(g.w[k]).epsilon(1e-8));
}
