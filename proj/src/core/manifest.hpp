#pragma once

#include <cstdint>
#include <map>
#include <string>

namespace titan {

std::string sha256_hex(const void* data, size_t len);
std::string sha256_hex(const std::string& s);
std::string sha256_file(const std::string& path);

// Run provenance, written atomically at the end of a training run.
struct RunManifest {
  std::string config_hash;
  uint64_t seed = 0;
  std::map<std::string, std::string> input_hashes;  // label -> sha256
  int64_t started_unix = 0;
  int64_t finished_unix = 0;
  std::map<std::string, std::string> outputs;  // label -> path
  bool duplicate_of_previous = false;
};

// True when out_dir already holds a manifest with the same config hash,
// input hashes and seed: re-running would reproduce the same artifacts.
bool manifest_is_duplicate(const std::string& out_dir, const std::string& config_hash,
                           const std::map<std::string, std::string>& input_hashes,
                           uint64_t seed);

void write_manifest_atomic(const std::string& out_dir, const RunManifest& m);

}  // namespace titan
