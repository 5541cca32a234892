#pragma once

#include <cstdint>

#include "core/series.hpp"

namespace titan {

struct SynthOptions {
  int sensors = 8;
  int days = 14;
  int interval_min = 5;
  uint64_t seed = 42;
};

// Deterministic desk-scale traffic: per-sensor base speed, asymmetric morning
// and evening rush-hour dips, weekday/weekend modulation, ring-correlated
// noise and occasional speed-drop incidents. Starts on a Monday 00:00 UTC.
SensorSeries gen_synthetic(const SynthOptions& opt);

}  // namespace titan
