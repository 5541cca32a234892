#pragma once

#include <memory>
#include <string>
#include <vector>

#include "core/trainer.hpp"

namespace titan {

// Versioned binary container: magic "TITN", u32 version, u64 header length,
// JSON header (config, normalization, parameter table), then raw
// little-endian f64 blobs in header order.
void save_checkpoint(const std::string& path, const TitanModel& model, const TrainConfig& cfg,
                     const NormStats& norm, const std::vector<std::string>& sensor_ids,
                     int best_epoch, double val_mae);

struct LoadedModel {
  std::shared_ptr<TitanModel> model;
  TrainConfig cfg;
  NormStats norm;
  std::vector<std::string> sensor_ids;
  int best_epoch = 0;
  double val_mae = 0.0;
};

LoadedModel load_checkpoint(const std::string& path);

}  // namespace titan
