#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "core/series.hpp"

namespace titan {

// Thresholded-Gaussian kernel over pairwise DTW distances. Supervises the
// routing gate during the warmup phase.
struct PriorGraph {
  int n = 0;
  double kappa = 0.0;           // distance threshold
  double sigma = 0.0;           // std of off-diagonal distances
  double kappa_quantile = 0.0;  // quantile kappa was derived from
  std::vector<double> w;        // n x n, symmetric, unit diagonal, entries in [0, 1]

  double at(int i, int j) const { return w[static_cast<size_t>(i) * n + j]; }
  void validate() const;
};

// Classic dynamic-programming alignment cost with |a_i - b_j| local cost.
// band > 0 restricts |i - j| to the band (Sakoe-Chiba); 0 means unrestricted.
double dtw_distance(std::span<const double> a, std::span<const double> b, int band = 0);

struct PriorOptions {
  double kappa_quantile = 0.7;
  int64_t train_steps = 0;   // 0: first 70% of the series
  int downsample_min = 60;   // bucket width for mean-pooling; 0 keeps full resolution
  int max_days = 14;         // cap on the slice DTW sees
  int band = 0;              // Sakoe-Chiba band, 0 disables
  int threads = 0;           // 0: hardware concurrency
};

// The per-sensor slices build_prior runs DTW on: train-range restriction,
// bucket mean-pooling, then per-sensor z-scoring. Exposed so the kernel can
// be recomputed independently of build_prior.
std::vector<std::vector<double>> dtw_preprocess(const SensorSeries& s, const PriorOptions& opt);

PriorGraph build_prior(const SensorSeries& s, const PriorOptions& opt = {});

// Quantile of the off-diagonal distance distribution, interpolated through
// the sorted values and anchored at (0, 0) so q -> 0 closes the graph.
double distance_quantile(std::vector<double> distances, double q);

void save_prior_csv(const PriorGraph& g, const std::string& csv_path,
                    const std::string& json_path);
PriorGraph load_prior_csv(const std::string& csv_path, const std::string& json_path);

}  // namespace titan
