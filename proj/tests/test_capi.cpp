// Exercises the public C surface the way an embedding application would:
// opaque handles, status codes, thread-local error text.
#include <doctest.h>

#include <cstring>
#include <filesystem>
#include <string>

#include "titan/titan.h"

namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& name) {
  auto dir = fs::temp_directory_path() / "titan_capi" / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

const char* kTinyConfig =
    "{\"hidden_size\":8,\"memory_size\":4,\"heads\":2,\"rank\":2,"
    "\"batch_size\":8,\"epochs\":2,\"patience\":50,\"seed\":5}";

}  // namespace

TEST_CASE("status names and version") {
  CHECK(std::strcmp(titan_status_name(TITAN_OK), "ok") == 0);
  CHECK(std::strcmp(titan_status_name(TITAN_ERR_FORMAT), "format") == 0);
  CHECK(titan_version() != nullptr);
  CHECK(titan_set_log_level("warn") == TITAN_OK);
  CHECK(titan_set_log_level("shout") == TITAN_ERR_CONFIG);
}

TEST_CASE("series lifecycle and error reporting") {
  titan_series* s = nullptr;
  REQUIRE(titan_series_generate(4, 2, 30, 9, &s) == TITAN_OK);
  CHECK(titan_series_sensors(s) == 4);
  CHECK(titan_series_steps(s) == 2 * 48);

  auto dir = fresh_dir("series");
  const std::string csv = (dir / "d.csv").string();
  CHECK(titan_series_save_csv(s, csv.c_str()) == TITAN_OK);

  titan_series* r = nullptr;
  REQUIRE(titan_series_load_csv(csv.c_str(), &r) == TITAN_OK);
  CHECK(titan_series_steps(r) == titan_series_steps(s));
  titan_series_free(r);
  titan_series_free(s);

  titan_series* missing = nullptr;
  CHECK(titan_series_load_csv((dir / "nope.csv").string().c_str(), &missing) == TITAN_ERR_IO);
  CHECK(std::strlen(titan_last_error()) > 0);
  CHECK(titan_series_generate(1, 2, 30, 9, &missing) == TITAN_ERR_INVALID_ARGUMENT);
  CHECK(titan_series_load_csv(nullptr, &missing) == TITAN_ERR_INVALID_ARGUMENT);
}

TEST_CASE("prior compute, persist and inspect") {
  titan_series* s = nullptr;
  REQUIRE(titan_series_generate(5, 3, 30, 11, &s) == TITAN_OK);

  titan_prior_params params;
  titan_prior_params_init(&params);
  CHECK(params.kappa_quantile == doctest::Approx(0.7));
  titan_prior* g = nullptr;
  REQUIRE(titan_prior_compute(s, &params, &g) == TITAN_OK);
  CHECK(titan_prior_nodes(g) == 5);
  for (int i = 0; i < 5; ++i) {
    CHECK(titan_prior_weight(g, i, i) == doctest::Approx(1.0));
    for (int j = 0; j < 5; ++j)
      CHECK(titan_prior_weight(g, i, j) == doctest::Approx(titan_prior_weight(g, j, i)));
  }
  CHECK(titan_prior_weight(g, 7, 0) == -1.0);  // out of range probe

  auto dir = fresh_dir("prior");
  const std::string csv = (dir / "p.csv").string(), json = (dir / "p.json").string();
  CHECK(titan_prior_save(g, csv.c_str(), json.c_str()) == TITAN_OK);
  titan_prior* back = nullptr;
  REQUIRE(titan_prior_load(csv.c_str(), json.c_str(), &back) == TITAN_OK);
  CHECK(titan_prior_nodes(back) == 5);
  titan_prior_free(back);
  titan_prior_free(g);
  titan_series_free(s);
}

TEST_CASE("train, load and evaluate through the C API") {
  titan_series* s = nullptr;
  REQUIRE(titan_series_generate(3, 2, 30, 5, &s) == TITAN_OK);
  titan_prior* g = nullptr;
  REQUIRE(titan_prior_compute(s, nullptr, &g) == TITAN_OK);

  auto dir = fresh_dir("train");
  titan_train_report report{};
  REQUIRE(titan_train_run(kTinyConfig, s, g, dir.string().c_str(), nullptr, nullptr,
                          &report) == TITAN_OK);
  CHECK(report.epochs_run == 2);
  CHECK(report.best_epoch >= 1);
  CHECK(report.duplicate == 0);
  CHECK(report.best_val_mae > 0.0);

  // rerun into the same directory: flagged duplicate
  REQUIRE(titan_train_run(kTinyConfig, s, g, dir.string().c_str(), nullptr, nullptr,
                          &report) == TITAN_OK);
  CHECK(report.duplicate == 1);

  // bad config keys and a missing prior are config errors
  titan_train_report unused{};
  CHECK(titan_train_run("{\"what\":1}", s, g, dir.string().c_str(), nullptr, nullptr,
                        &unused) == TITAN_ERR_CONFIG);
  CHECK(titan_train_run(kTinyConfig, s, nullptr, dir.string().c_str(), nullptr, nullptr,
                        &unused) == TITAN_ERR_CONFIG);

  const std::string ckpt = (dir / "checkpoint.titn").string();
  titan_model* m = nullptr;
  REQUIRE(titan_model_load(ckpt.c_str(), &m) == TITAN_OK);

  titan_metrics* metrics = nullptr;
  REQUIRE(titan_model_eval(m, s, "test", &metrics) == TITAN_OK);
  CHECK(titan_metrics_horizons(metrics) == 12);
  double mae = -1, rmse = -1, mape = -1;
  CHECK(titan_metrics_avg(metrics, &mae, &rmse, &mape) == TITAN_OK);
  CHECK(mae > 0.0);
  CHECK(rmse >= mae);
  CHECK(titan_metrics_horizon(metrics, 1, &mae, &rmse, &mape) == TITAN_OK);
  CHECK(titan_metrics_horizon(metrics, 0, &mae, &rmse, &mape) ==
        TITAN_ERR_INVALID_ARGUMENT);
  CHECK(titan_metrics_horizon(metrics, 13, &mae, &rmse, &mape) ==
        TITAN_ERR_INVALID_ARGUMENT);

  const std::string mcsv = (dir / "m.csv").string(), ncsv = (dir / "n.csv").string();
  CHECK(titan_metrics_write_csv(metrics, mcsv.c_str()) == TITAN_OK);
  CHECK(titan_metrics_write_node_csv(metrics, ncsv.c_str()) == TITAN_OK);
  CHECK(fs::exists(mcsv));
  CHECK(fs::exists(ncsv));
  titan_metrics_free(metrics);

  // unknown split and sensor-count mismatch
  titan_metrics* bad = nullptr;
  CHECK(titan_model_eval(m, s, "holdout", &bad) == TITAN_ERR_CONFIG);
  titan_series* other = nullptr;
  REQUIRE(titan_series_generate(6, 2, 30, 5, &other) == TITAN_OK);
  CHECK(titan_model_eval(m, other, "test", &bad) == TITAN_ERR_VERSION);
  CHECK(std::string(titan_last_error()).find("n_nodes") != std::string::npos);

  titan_series_free(other);
  titan_model_free(m);
  titan_prior_free(g);
  titan_series_free(s);

  titan_model* nope = nullptr;
  CHECK(titan_model_load((dir / "missing.titn").string().c_str(), &nope) == TITAN_ERR_IO);
}
