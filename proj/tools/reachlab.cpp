// reachlab <experiment-kind> --config <path.json> --out <dir> [--workers N] [--seed S]
// reachlab validate-csv <file> --schema <name>
// reachlab validate-bundle <dir>

#include <cstdlib>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>
#include <json.hpp>

#include "reachlab/csv_schema.hpp"
#include "reachlab/harness.hpp"
#include "reachlab/kernels.hpp"
#include "reachlab/log.hpp"

namespace {

constexpr int kExitConfig = 2;

int run_experiment(const std::string& kind, const std::string& config_path, const std::string& out_dir,
                   std::size_t workers, std::optional<std::uint64_t> seed, bool resume) {
  using namespace reachlab::harness;
  nlohmann::json raw;
  {
    std::ifstream in(config_path);
    if (!in) {
      std::cerr << "error: cannot open config " << config_path << '\n';
      return kExitConfig;
    }
    raw = nlohmann::json::parse(in, nullptr, false);
    if (raw.is_discarded()) {
      std::cerr << "error: " << config_path << " is not valid JSON\n";
      return kExitConfig;
    }
  }
  if (raw.is_object() && !raw.contains("kind")) raw["kind"] = kind;
  if (raw.is_object() && raw.value("kind", "") != kind) {
    std::cerr << "error: config kind '" << raw.value("kind", "") << "' does not match command '" << kind << "'\n";
    return kExitConfig;
  }
  if (seed && raw.is_object()) raw["seed"] = *seed;
  ExperimentConfig cfg;
  try {
    cfg = ExperimentConfig::from_json(raw);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitConfig;
  }
  RunOptions opts;
  opts.workers = workers;
  if (resume || kind == "finetune-matrix") opts.checkpoint_dir = std::filesystem::path(out_dir) / "checkpoints";
  const ResultBundle b = run(cfg, opts);
  write_bundle(b, out_dir);
  if (b.failed) std::cerr << "experiment failed: " << b.error << '\n';
  for (const auto& f : b.flags) std::cerr << "flagged: " << f.dump() << '\n';
  std::cout << b.summary.dump(2) << '\n';
  return exit_code(b);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"reachlab: numerical experiments on task reachability"};
  app.require_subcommand(1);
  std::string isa = "auto";
  app.add_option("--isa", isa, "Kernel variant: auto, scalar, avx2, neon")->check(CLI::IsMember({"auto", "scalar", "avx2", "neon"}));

  std::string config, out;
  std::size_t workers = 1;
  std::optional<std::uint64_t> seed;
  bool resume = false;
  for (const auto& kind : reachlab::harness::experiment_kinds()) {
    auto* sub = app.add_subcommand(kind, "Run a " + kind + " experiment");
    sub->add_option("--config", config, "Experiment config (JSON)")->required();
    sub->add_option("--out", out, "Output directory")->required();
    sub->add_option("--workers", workers, "Worker threads")->check(CLI::PositiveNumber);
    sub->add_option("--seed", seed, "Override the config seed");
    sub->add_flag("--resume", resume, "Reuse per-cell checkpoints in <out>/checkpoints");
  }
  std::string csv_file, schema;
  auto* vcsv = app.add_subcommand("validate-csv", "Check a CSV file against a registered schema");
  vcsv->add_option("file", csv_file)->required();
  vcsv->add_option("--schema", schema)->required();
  std::string bundle_dir;
  auto* vbun = app.add_subcommand("validate-bundle", "Check every CSV of a result bundle");
  vbun->add_option("dir", bundle_dir)->required();
  app.add_subcommand("schemas", "List registered CSV schemas");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : kExitConfig;
  }

  if (isa != "auto") {
    using reachlab::kernels::Isa;
    const Isa want = isa == "scalar" ? Isa::Scalar : isa == "avx2" ? Isa::Avx2 : Isa::Neon;
    try {
      reachlab::kernels::set_active_isa(want);
    } catch (const std::exception& e) {
      std::cerr << "error: " << e.what() << '\n';
      return kExitConfig;
    }
  }

  auto* chosen = app.get_subcommands().front();
  const std::string name = chosen->get_name();
  if (name == "validate-csv") {
    try {
      const auto rep = reachlab::csv::validate_file(csv_file, schema);
      for (const auto& p : rep.problems) std::cerr << p << '\n';
      std::cout << (rep.ok ? "ok" : "invalid") << " (" << rep.rows << " rows)\n";
      return rep.ok ? 0 : 1;
    } catch (const std::exception& e) {
      std::cerr << "error: " << e.what() << '\n';
      return kExitConfig;
    }
  }
  if (name == "validate-bundle") {
    const auto problems = reachlab::harness::validate_bundle_dir(bundle_dir);
    for (const auto& p : problems) std::cerr << p << '\n';
    std::cout << (problems.empty() ? "ok" : "invalid") << '\n';
    return problems.empty() ? 0 : 1;
  }
  if (name == "schemas") {
    for (const auto& s : reachlab::csv::registry()) std::cout << s.name << ": " << s.description << '\n';
    return 0;
  }
  return run_experiment(name, config, out, workers, seed, resume);
}
