#include <doctest.h>

#include <sys/wait.h>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "reachlab/csv_schema.hpp"
#include "reachlab/harness.hpp"

using namespace reachlab;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("reachlab_harness_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

json read_json(const fs::path& p) {
  std::ifstream in(p);
  return json::parse(in);
}

void write_json(const fs::path& p, const json& j) {
  std::ofstream out(p);
  out << j.dump(2) << '\n';
}

int cli(const std::string& args) {
  const std::string cmd = std::string(REACHLAB_CLI_PATH) + " " + args + " > /dev/null 2>&1";
  const int rc = std::system(cmd.c_str());
  return WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
}

json small_kramers() {
  return {{"kind", "kramers-sweep"},
          {"seed", 3},
          {"params",
           {{"potential", {{"name", "double_well"}}},
            {"D_grid", {0.2, 0.25, 0.3}},
            {"n_runs", 40},
            {"max_steps", 2000000},
            {"min_loc", -1.0},
            {"saddle_loc", 0.0}}}};
}

json blob(int classes, int n, int p, double sep, int seed) {
  return {{"blobs", {{"classes", classes}, {"n", n}, {"input_dim", p}, {"separation", sep}, {"seed", seed}}}};
}

json logistic_model(int p, int K) {
  return {{"family", "logistic"}, {"input_dim", p}, {"classes", K}, {"weight_decay", 0.01}};
}

json small_batch_sweep() {
  return {{"kind", "batch-sweep"},
          {"seed", 1},
          {"params",
           {{"dataset", blob(3, 60, 2, 3.0, 2)},
            {"model", logistic_model(2, 3)},
            {"batch_grid", {4, 8, 16}},
            {"n_draws", 2000},
            {"trainer", {{"step", 0.5}, {"max_iters", 20000}}},
            {"sgd", {{"eta", 0.1}, {"max_steps", 100000}}},
            {"n_runs", 4}}}};
}

json small_finetune() {
  json base = blob(3, 60, 2, 4.0, 3);
  json sub = base;
  sub["keep_classes"] = {0, 1};
  return {{"kind", "finetune-matrix"},
          {"seed", 2},
          {"params",
           {{"tasks", {{{"id", "pair"}, {"dataset", sub}}, {{"id", "all"}, {"dataset", base}}}},
            {"model", logistic_model(2, 3)},
            {"trainer", {{"step", 0.5}, {"max_iters", 20000}}},
            {"sgd", {{"eta", 0.1}, {"batch", 8}, {"max_steps", 100000}}},
            {"n_runs", 6}}}};
}

}  // namespace

TEST_CASE("config round trip and strict schema") {
  const auto cfg = harness::ExperimentConfig::from_json(small_kramers());
  CHECK(cfg.kind == "kramers-sweep");
  CHECK(cfg.seed == 3);
  CHECK(harness::ExperimentConfig::from_json(cfg.to_json()).to_json() == cfg.to_json());

  json extra_top = small_kramers();
  extra_top["output"] = "x";
  CHECK_THROWS_AS(harness::ExperimentConfig::from_json(extra_top), harness::ConfigError);

  json extra_param = small_kramers();
  extra_param["params"]["colour"] = "red";
  CHECK_THROWS_AS(harness::ExperimentConfig::from_json(extra_param), harness::ConfigError);

  json bad_kind = small_kramers();
  bad_kind["kind"] = "everything";
  CHECK_THROWS_AS(harness::ExperimentConfig::from_json(bad_kind), harness::ConfigError);

  json short_grid = small_kramers();
  short_grid["params"]["D_grid"] = {0.1, 0.2};
  CHECK_THROWS_AS(harness::ExperimentConfig::from_json(short_grid), harness::ConfigError);

  json nested_seed = small_batch_sweep();
  nested_seed["params"]["sgd"]["seed"] = 4;
  CHECK_THROWS_AS(harness::ExperimentConfig::from_json(nested_seed), harness::ConfigError);

  json label = {{"kind", "label-sweep"},
                {"params",
                 {{"dataset", blob(2, 40, 2, 4.0, 1)},
                  {"model", logistic_model(2, 2)},
                  {"rho_grid", {0.0, 0.5, 1.5}}}}};
  CHECK_THROWS_AS(harness::ExperimentConfig::from_json(label), harness::ConfigError);
  label["params"]["rho_grid"] = {0.0, 0.5, 1.0};
  CHECK_NOTHROW(harness::ExperimentConfig::from_json(label));
  label["params"]["model"]["input_dim"] = 3;
  CHECK_THROWS_AS(harness::ExperimentConfig::from_json(label), harness::ConfigError);
}

TEST_CASE("shipped configs parse") {
  for (const auto& entry : fs::directory_iterator(REACHLAB_CONFIG_DIR)) {
    CAPTURE(entry.path().string());
    CHECK_NOTHROW(harness::ExperimentConfig::from_json(read_json(entry.path())));
  }
}

TEST_CASE("bundles are deterministic across worker counts") {
  const auto cfg = harness::ExperimentConfig::from_json(small_kramers());
  const auto a = harness::run(cfg, {1, {}});
  const auto b = harness::run(cfg, {2, {}});
  const auto c = harness::run(cfg, {1, {}});
  CHECK(!a.failed);
  CHECK(a.deterministic_json().dump() == b.deterministic_json().dump());
  CHECK(a.deterministic_json().dump() == c.deterministic_json().dump());
  CHECK(a.to_json().contains("timing"));
  CHECK(!a.deterministic_json().contains("timing"));
  CHECK(harness::exit_code(a) == 0);
}

TEST_CASE("a bundle regenerates from its own config snapshot") {
  const auto cfg = harness::ExperimentConfig::from_json(small_batch_sweep());
  const auto first = harness::run(cfg);
  const auto dir = scratch("regen");
  harness::write_bundle(first, dir);
  const json snapshot = read_json(dir / "bundle.json").at("config");
  const auto again = harness::run(harness::ExperimentConfig::from_json(snapshot));
  CHECK(again.deterministic_json().dump() == first.deterministic_json().dump());
  fs::remove_all(dir);
}

TEST_CASE("written bundles pass the schema validator") {
  const auto dir = scratch("written");
  const auto b = harness::run(harness::ExperimentConfig::from_json(small_batch_sweep()));
  harness::write_bundle(b, dir);
  CHECK(fs::exists(dir / "bundle.json"));
  CHECK(fs::exists(dir / "batch_sweep.csv"));
  CHECK(fs::exists(dir / "plots" / "manifest.json"));
  CHECK(harness::validate_bundle_dir(dir).empty());

  // One plot row per batch size with (B, noise_trace, median_time).
  const json manifest = read_json(dir / "plots" / "manifest.json");
  bool found = false;
  for (const auto& p : b.plots) {
    if (p.columns == std::vector<std::string>{"batch", "noise_trace", "median_time"}) {
      found = true;
      CHECK(p.rows.size() == 3);
      CHECK(fs::exists(dir / "plots" / p.file));
    }
  }
  CHECK(found);
  CHECK(!manifest.empty());

  const json ratios = b.summary.at("trace_ratios");
  CHECK(ratios.size() == 2);
  for (const auto& r : ratios) CHECK(r.at("trace_ratio").get<double>() == doctest::Approx(2.0).epsilon(0.1));

  // Breaking a header is caught.
  {
    std::ofstream out(dir / "batch_sweep.csv");
    out << "batch,trace\n4,1.0\n";
  }
  CHECK(!harness::validate_bundle_dir(dir).empty());
  fs::remove_all(dir);
}

TEST_CASE("structure curve reaches log K at the largest beta") {
  json j = {{"kind", "structure-curve"},
            {"params",
             {{"dataset", blob(3, 60, 2, 3.0, 2)},
              {"model", {{"family", "logistic"}, {"input_dim", 2}, {"classes", 3}}},
              {"beta_grid", {1e4, 1.0, 0.01}},
              {"lambda2", 0.01},
              {"trainer", {{"step", 0.5}, {"max_iters", 50000}}}}}};
  const auto b = harness::run(harness::ExperimentConfig::from_json(j));
  CHECK(harness::exit_code(b) == 0);
  CHECK(b.summary.at("monotone").get<bool>());
  CHECK(b.summary.at("largest_beta_point_loss").get<double>() == doctest::Approx(std::log(3.0)).epsilon(1e-6));
}

TEST_CASE("action check on the zero potential") {
  json j = {{"kind", "action-check"},
            {"params",
             {{"potential", {{"name", "zero"}, {"dim", 1}}},
              {"start", {0.0}},
              {"end", {1.0}},
              {"D", 0.25},
              {"T", 1.0},
              {"n_knots", 50}}}};
  const auto b = harness::run(harness::ExperimentConfig::from_json(j));
  CHECK(harness::exit_code(b) == 0);
  CHECK(b.summary.at("straight_line_action").at("total").get<double>() == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(b.summary.at("best").at("action").at("total").get<double>() == doctest::Approx(1.0).epsilon(1e-10));
}

TEST_CASE("fine-tune matrix diagonal and checkpoints") {
  const auto dir = scratch("finetune");
  const auto cfg = harness::ExperimentConfig::from_json(small_finetune());
  const auto first = harness::run(cfg, {1, dir / "ck"});
  CHECK(harness::exit_code(first) == 0);
  const json cells = first.summary.at("matrix_cells");
  REQUIRE(cells.size() == 4);
  CHECK(cells[0].at("median_time").get<double>() == 0.0);
  CHECK(cells[3].at("median_time").get<double>() == 0.0);
  CHECK(fs::exists(dir / "ck" / "cell_0_1.json"));

  // A resumed run takes cells from the checkpoint files.
  json saved = read_json(dir / "ck" / "cell_0_1.json");
  saved["cell"]["median_time"] = 12345.0;
  write_json(dir / "ck" / "cell_0_1.json", saved);
  const auto resumed = harness::run(cfg, {1, dir / "ck"});
  CHECK(resumed.summary.at("matrix_cells")[1].at("median_time").get<double>() == 12345.0);

  // A different config ignores stale checkpoints.
  json other = small_finetune();
  other["seed"] = 9;
  const auto fresh = harness::run(harness::ExperimentConfig::from_json(other), {1, dir / "ck"});
  CHECK(fresh.summary.at("matrix_cells")[1].at("median_time").get<double>() != 12345.0);

  const auto uncheckpointed = harness::run(cfg, {2, {}});
  CHECK(uncheckpointed.deterministic_json().dump() == first.deterministic_json().dump());
  fs::remove_all(dir);
}

TEST_CASE("failures are flagged, persisted, and exit with status 3") {
  json j = small_kramers();
  j["params"]["max_steps"] = 5;
  const auto b = harness::run(harness::ExperimentConfig::from_json(j));
  CHECK(!b.flags.empty());
  CHECK(harness::exit_code(b) == 3);
}

TEST_CASE("complexity scatter fits a positive exponential law") {
  const auto b = harness::run(
      harness::ExperimentConfig::from_json(read_json(fs::path(REACHLAB_CONFIG_DIR) / "complexity_scatter.json")));
  REQUIRE(b.summary.at("fit").is_object());
  CHECK(b.summary.at("fit").at("slope").get<double>() > 0.0);
  CHECK(b.summary.at("fit").at("r2").get<double>() >= 0.8);
}

TEST_CASE("command line exit codes") {
  const auto dir = scratch("cli");
  write_json(dir / "ok.json", small_kramers());
  json bad = small_kramers();
  bad["params"]["unknown"] = 1;
  write_json(dir / "bad.json", bad);
  json failing = small_kramers();
  failing["params"]["max_steps"] = 5;
  write_json(dir / "fail.json", failing);
  {
    std::ofstream out(dir / "broken.json");
    out << "{ not json";
  }
  const std::string d = dir.string();

  CHECK(cli("kramers-sweep --config " + d + "/ok.json --out " + d + "/ok --workers 2") == 0);
  CHECK(fs::exists(dir / "ok" / "bundle.json"));
  CHECK(cli("validate-bundle " + d + "/ok") == 0);
  CHECK(cli("validate-csv " + d + "/ok/kramers.csv --schema kramers") == 0);
  CHECK(cli("validate-csv " + d + "/ok/kramers.csv --schema label_sweep") == 1);
  CHECK(cli("kramers-sweep --config " + d + "/bad.json --out " + d + "/bad") == 2);
  CHECK(cli("kramers-sweep --config " + d + "/broken.json --out " + d + "/broken") == 2);
  CHECK(cli("label-sweep --config " + d + "/ok.json --out " + d + "/wrong-kind") == 2);
  CHECK(cli("kramers-sweep --config " + d + "/fail.json --out " + d + "/fail") == 3);
  CHECK(fs::exists(dir / "fail" / "bundle.json"));
  CHECK(cli("schemas") == 0);
  CHECK(cli("--isa scalar kramers-sweep --config " + d + "/ok.json --out " + d + "/scalar") == 0);

  // Scalar and vector kernels agree bit for bit on elementwise updates.
  const json v = read_json(dir / "ok" / "bundle.json");
  const json s = read_json(dir / "scalar" / "bundle.json");
  CHECK(v.at("records").dump() == s.at("records").dump());
  fs::remove_all(dir);
}

TEST_CASE("csv validator") {
  const auto& schema = csv::find("kramers");
  std::string header;
  for (std::size_t i = 0; i < schema.columns.size(); ++i) header += (i ? "," : "") + schema.columns[i].name;
  {
    std::istringstream in(header + "\n0.1,10,54.1,50.2,40.0,500,0,54.1\n");
    const auto r = csv::validate(in, schema);
    CHECK(r.ok);
    CHECK(r.rows == 1);
  }
  {
    std::istringstream in(header + "\n0.1,10,,,40.0,500,0,\n");
    CHECK(csv::validate(in, schema).ok);
  }
  {
    std::istringstream in(header + "\n0.1,ten,54.1,50.2,40.0,500,0,54.1\n");
    CHECK(!csv::validate(in, schema).ok);
  }
  {
    std::istringstream in(header + "\n0.1,10,54.1,50.2,40.0,5.5,0,54.1\n");
    CHECK(!csv::validate(in, schema).ok);
  }
  {
    std::istringstream in(header + "\n0.1,10\n");
    CHECK(!csv::validate(in, schema).ok);
  }
  {
    std::istringstream in("D,x\n");
    CHECK(!csv::validate(in, schema).ok);
  }
  const auto& path = csv::find("path");
  {
    std::istringstream in("t,w0,w1\n0,1,2\n0.5,1.5,2.5\n");
    CHECK(csv::validate(in, path).ok);
  }
  {
    std::istringstream in("t,w1\n0,1\n");
    CHECK(!csv::validate(in, path).ok);
  }
  const auto& matrix = csv::find("task_matrix");
  {
    std::istringstream in("task,a,b\na,0,1.5\nb,2,\n");
    CHECK(csv::validate(in, matrix).ok);
  }
  {
    std::istringstream in("task,a,b\nb,0,1.5\na,2,0\n");
    CHECK(!csv::validate(in, matrix).ok);
  }
  CHECK_THROWS(csv::find("nope"));
  for (const auto& s : csv::registry()) CHECK(!s.description.empty());
}
