#include "core/checkpoint.hpp"

#include <cstring>
#include <fstream>

#include <json.hpp>

namespace titan {

namespace {

constexpr char kMagic[4] = {'T', 'I', 'T', 'N'};
constexpr uint32_t kVersion = 1;

void put_u32(std::ofstream& out, uint32_t v) {
  uint8_t b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<uint8_t>(v >> (8 * i));
  out.write(reinterpret_cast<const char*>(b), 4);
}

void put_u64(std::ofstream& out, uint64_t v) {
  uint8_t b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<uint8_t>(v >> (8 * i));
  out.write(reinterpret_cast<const char*>(b), 8);
}

uint32_t get_u32(std::ifstream& in) {
  uint8_t b[4];
  in.read(reinterpret_cast<char*>(b), 4);
  uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= uint32_t(b[i]) << (8 * i);
  return v;
}

uint64_t get_u64(std::ifstream& in) {
  uint8_t b[8];
  in.read(reinterpret_cast<char*>(b), 8);
  uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= uint64_t(b[i]) << (8 * i);
  return v;
}

void put_f64_vec(std::ofstream& out, const std::vector<double>& v) {
  for (double d : v) {
    uint64_t bits;
    std::memcpy(&bits, &d, 8);
    put_u64(out, bits);
  }
}

void get_f64_vec(std::ifstream& in, std::vector<double>& v) {
  for (double& d : v) {
    const uint64_t bits = get_u64(in);
    std::memcpy(&d, &bits, 8);
  }
}

}  // namespace

void save_checkpoint(const std::string& path, const TitanModel& model, const TrainConfig& cfg,
                     const NormStats& norm, const std::vector<std::string>& sensor_ids,
                     int best_epoch, double val_mae) {
  nlohmann::json params = nlohmann::json::array();
  for (const auto& p : model.parameters()) {
    params.push_back({{"name", p.name}, {"shape", p.tensor.shape()}});
  }
  nlohmann::json header = {
      {"config", nlohmann::json::parse(cfg.to_json())},
      {"model",
       {{"n_nodes", model.config().n_nodes},
        {"features", model.config().features},
        {"t_in", model.config().t_in},
        {"t_out", model.config().t_out}}},
      {"norm", {{"mean", norm.mean}, {"std", norm.stdev}}},
      {"sensor_ids", sensor_ids},
      {"params", params},
      {"best_epoch", best_epoch},
      {"val_mae", val_mae},
  };
  const std::string htext = header.dump();

  std::ofstream out(path, std::ios::binary);
  if (!out) fail(errc::io, "cannot write '" + path + "'");
  out.write(kMagic, 4);
  put_u32(out, kVersion);
  put_u64(out, htext.size());
  out.write(htext.data(), static_cast<std::streamsize>(htext.size()));
  for (const auto& p : model.parameters()) put_f64_vec(out, p.tensor.data());
  if (!out) fail(errc::io, "short write to '" + path + "'");
}

LoadedModel load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(errc::io, "cannot open '" + path + "'");
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, kMagic, 4) != 0)
    fail(errc::version, "'" + path + "': not a TITN checkpoint");
  const uint32_t version = get_u32(in);
  if (version != kVersion)
    fail(errc::version, "'" + path + "': unsupported checkpoint version " +
                            std::to_string(version));
  const uint64_t hlen = get_u64(in);
  std::string htext(hlen, '\0');
  in.read(htext.data(), static_cast<std::streamsize>(hlen));
  if (!in) fail(errc::version, "'" + path + "': truncated header");

  nlohmann::json header;
  try {
    header = nlohmann::json::parse(htext);
  } catch (const nlohmann::json::exception& e) {
    fail(errc::version, "'" + path + "': bad header: " + e.what());
  }

  LoadedModel lm;
  try {
    lm.cfg = TrainConfig::from_json(header.at("config").dump());
    lm.norm.mean = header.at("norm").at("mean").get<std::vector<double>>();
    lm.norm.stdev = header.at("norm").at("std").get<std::vector<double>>();
    lm.sensor_ids = header.at("sensor_ids").get<std::vector<std::string>>();
    lm.best_epoch = header.value("best_epoch", 0);
    lm.val_mae = header.value("val_mae", 0.0);

    ModelConfig mc;
    mc.t_in = header.at("model").at("t_in").get<int>();
    mc.t_out = header.at("model").at("t_out").get<int>();
    mc.n_nodes = header.at("model").at("n_nodes").get<int>();
    mc.features = header.at("model").at("features").get<int>();
    mc.hidden = lm.cfg.hidden_size;
    mc.memory = lm.cfg.memory_size;
    mc.layers = lm.cfg.layers;
    mc.heads = lm.cfg.heads;
    mc.rank = lm.cfg.rank;
    mc.temperature = lm.cfg.temperature;
    lm.model = std::make_shared<TitanModel>(mc, lm.cfg.ablation, lm.cfg.seed);

    const auto& params_meta = header.at("params");
    auto& params = lm.model->parameters();
    if (params_meta.size() != params.size())
      fail(errc::version, "'" + path + "': parameter count mismatch for field 'params' (" +
                              std::to_string(params_meta.size()) + " vs " +
                              std::to_string(params.size()) + ")");
    for (size_t i = 0; i < params.size(); ++i) {
      const std::string name = params_meta[i].at("name").get<std::string>();
      const auto shape = params_meta[i].at("shape").get<Shape>();
      if (name != params[i].name)
        fail(errc::version, "'" + path + "': parameter order mismatch for field '" +
                                params[i].name + "' (checkpoint has '" + name + "')");
      if (shape != params[i].tensor.shape())
        fail(errc::version, "'" + path + "': shape mismatch for field '" + name + "' (" +
                                shape_str(shape) + " vs " +
                                shape_str(params[i].tensor.shape()) + ")");
      get_f64_vec(in, params[i].tensor.data());
    }
  } catch (const nlohmann::json::exception& e) {
    fail(errc::version, "'" + path + "': bad header: " + e.what());
  }
  if (!in) fail(errc::version, "'" + path + "': truncated parameter data");
  return lm;
}

}  // namespace titan
