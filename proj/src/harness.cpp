#include "reachlab/harness.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <ctime>
#include <fstream>
#include <functional>
#include <iomanip>
#include <limits>
#include <map>
#include <sstream>

#include "reachlab/action.hpp"
#include "reachlab/complexity.hpp"
#include "reachlab/csv_schema.hpp"
#include "reachlab/diffusion.hpp"
#include "reachlab/errors.hpp"
#include "reachlab/json_util.hpp"
#include "reachlab/parallel.hpp"
#include "reachlab/rates.hpp"
#include "reachlab/rng.hpp"
#include "reachlab/stats.hpp"

namespace reachlab::harness {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

// Sub-seed tags derived from the global seed.
constexpr std::uint64_t kTagInit = 1;
constexpr std::uint64_t kTagSgd = 2;
constexpr std::uint64_t kTagLangevin = 3;
constexpr std::uint64_t kTagNoise = 4;

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

[[noreturn]] void config_fail(const std::string& msg) { throw ConfigError(msg); }

void check_keys(const json& j, std::initializer_list<std::string_view> allowed, const std::string& where) {
  try {
    json_util::expect_keys(j, allowed, where);
  } catch (const ContractViolation& e) {
    config_fail(e.what());
  }
}

// Run a parser, turning library contract errors into ConfigError.
template <class Fn>
auto parse(const std::string& where, Fn&& fn) {
  try {
    return fn();
  } catch (const ConfigError&) {
    throw;
  } catch (const ContractViolation& e) {
    config_fail(where + ": " + e.what());
  } catch (const json::exception& e) {
    config_fail(where + ": " + e.what());
  }
}

template <class T>
T opt(const json& j, const char* key, T fallback) {
  return parse(key, [&] { return json_util::get_or(j, key, fallback); });
}

template <class T>
T req(const json& j, const char* key, const std::string& where) {
  return parse(where, [&] { return json_util::get_required<T>(j, key, where); });
}

void no_nested_seed(const json& j, const std::string& where) {
  if (j.is_object() && j.contains("seed"))
    config_fail(where + ": 'seed' is set once at the top level of the config");
}

std::string fmt(double x) {
  if (std::isnan(x)) return "";
  std::ostringstream os;
  os << std::setprecision(17) << x;
  return os.str();
}

json num_or_null(double x) { return std::isfinite(x) ? json(x) : json(nullptr); }

struct CsvBuilder {
  std::ostringstream os;
  explicit CsvBuilder(const std::vector<std::string>& header) {
    for (std::size_t i = 0; i < header.size(); ++i) os << (i ? "," : "") << header[i];
    os << '\n';
  }
  template <class... Ts>
  void row(const Ts&... fields) {
    bool first = true;
    ((os << (first ? "" : ",") << field(fields), first = false), ...);
    os << '\n';
  }
  static std::string field(double x) { return fmt(x); }
  static std::string field(const std::string& s) { return s; }
  static std::string field(const char* s) { return s; }
  static std::string field(std::size_t n) { return std::to_string(n); }
  static std::string field(int n) { return std::to_string(n); }
  std::string str() const { return os.str(); }
};

std::vector<std::string> header_of(const std::string& schema) {
  std::vector<std::string> out;
  for (const auto& c : csv::find(schema).columns) out.push_back(c.name);
  return out;
}

// ---- shared task-experiment parameters -------------------------------------

struct LearningSetup {
  ModelSpec model;
  double lambda2 = 1.0;
  double beta = 0.0;
  TrainerConfig trainer;
  SgdConfig sgd;
  std::size_t n_runs = 16;
  double threshold_offset = 0.1;
};

LearningSetup parse_learning(const json& p, std::uint64_t seed, const std::string& where) {
  LearningSetup s;
  s.model = parse(where + ".model", [&] { return ModelSpec::from_json(req<json>(p, "model", where)); });
  s.lambda2 = opt(p, "lambda2", 1.0);
  if (!(s.lambda2 > 0.0)) config_fail(where + ": lambda2 must be positive");
  if (p.contains("beta")) {
    s.beta = opt(p, "beta", 0.0);
  } else {
    if (!(s.model.weight_decay > 0.0))
      config_fail(where + ": beta omitted and model.weight_decay is 0; set one of them");
    s.beta = 2.0 * s.lambda2 * s.model.weight_decay;
  }
  if (!(s.beta > 0.0)) config_fail(where + ": beta must be positive");
  const json trainer = opt(p, "trainer", json::object());
  no_nested_seed(trainer, where + ".trainer");
  s.trainer = parse(where + ".trainer", [&] { return TrainerConfig::from_json(trainer); });
  s.trainer.seed = derive_seed(seed, kTagInit);
  const json sgd = opt(p, "sgd", json::object());
  no_nested_seed(sgd, where + ".sgd");
  s.sgd = parse(where + ".sgd", [&] { return SgdConfig::from_json(sgd); });
  s.sgd.seed = derive_seed(seed, kTagSgd);
  s.n_runs = opt<std::size_t>(p, "n_runs", 16);
  if (s.n_runs < 1) config_fail(where + ": n_runs must be >= 1");
  s.threshold_offset = opt(p, "threshold_offset", 0.1);
  if (!(s.threshold_offset > 0.0)) config_fail(where + ": threshold_offset must be positive");
  return s;
}

Dataset parse_dataset(const json& spec, const std::string& where) {
  return parse(where, [&] { return make_dataset(spec); });
}

void check_dataset_model(const Dataset& d, const ModelSpec& m, const std::string& where) {
  if (d.input_dim() != m.input_dim) config_fail(where + ": dataset input_dim does not match model.input_dim");
  if (d.classes != m.classes) config_fail(where + ": dataset classes do not match model.classes");
}

// Trained minimizer plus everything derived from it.
struct Solved {
  WeightVector w;
  bool converged = false;
  double min_loss = 0.0;
  double threshold = 0.0;
  ComplexityReport report;
};

Solved solve(const Task& t, const LearningSetup& s) {
  Solved out;
  const TrainResult tr = train_minimizer(t, complexity_weight_decay(t.model, s.beta, s.lambda2), s.trainer);
  out.w = tr.w;
  out.converged = tr.converged;
  out.min_loss = loss(t, tr.w);
  out.threshold = out.min_loss + s.threshold_offset;
  out.report = c_beta(t, tr.w, s.beta, s.lambda2);
  return out;
}

WeightVector sgd_start(const LearningSetup& s) {
  return initial_weights(s.model, s.trainer.seed, s.trainer.init_scale);
}

struct NamedSpec {
  std::string id;
  json dataset;
};

std::vector<NamedSpec> parse_task_list(const json& p, const std::string& where, std::size_t min_count) {
  const json list = req<json>(p, "tasks", where);
  if (!list.is_array() || list.size() < min_count)
    config_fail(where + ": 'tasks' must be an array of at least " + std::to_string(min_count) + " entries");
  std::vector<NamedSpec> out;
  for (const auto& item : list) {
    check_keys(item, {"id", "dataset"}, where + ".tasks[]");
    NamedSpec ns{req<std::string>(item, "id", where + ".tasks[]"), req<json>(item, "dataset", where + ".tasks[]")};
    if (ns.id.empty() || ns.id.find(',') != std::string::npos)
      config_fail(where + ": task ids must be non-empty and contain no commas");
    for (const auto& prev : out)
      if (prev.id == ns.id) config_fail(where + ": duplicate task id '" + ns.id + "'");
    out.push_back(std::move(ns));
  }
  return out;
}

std::vector<double> parse_grid(const json& p, const char* key, const std::string& where, std::size_t min_count) {
  const auto grid = req<std::vector<double>>(p, key, where);
  if (grid.size() < min_count)
    config_fail(where + ": '" + key + "' needs at least " + std::to_string(min_count) + " values");
  return grid;
}

WeightVector parse_point(const json& p, const char* key, std::vector<double> fallback, const std::string& where) {
  const auto v = opt(p, key, fallback);
  if (v.empty()) config_fail(where + ": '" + key + "' must be non-empty");
  return json_util::to_vector(v);
}

// ---- kind-specific validation ------------------------------------------------

void validate_kramers(const json& p) {
  const std::string w = "kramers-sweep";
  check_keys(p, {"potential", "start", "target", "radius", "D_grid", "dt", "max_steps", "n_runs", "min_loc",
                 "saddle_loc"},
             w);
  const PotentialPtr pot = parse(w + ".potential", [&] {
    return make_potential(opt(p, "potential", json{{"name", "double_well"}}));
  });
  const auto start = parse_point(p, "start", {-1.0}, w);
  const auto target = parse_point(p, "target", {1.0}, w);
  if (static_cast<std::size_t>(start.size()) != pot->dim() || static_cast<std::size_t>(target.size()) != pot->dim())
    config_fail(w + ": start/target dimension does not match the potential");
  if (!(opt(p, "radius", 0.1) > 0.0)) config_fail(w + ": radius must be positive");
  for (double D : parse_grid(p, "D_grid", w, 3))
    if (!(D > 0.0)) config_fail(w + ": D_grid values must be positive");
  if (!(opt(p, "dt", 1e-3) > 0.0)) config_fail(w + ": dt must be positive");
  if (opt<std::size_t>(p, "n_runs", 500) < 2) config_fail(w + ": n_runs must be >= 2");
  if (opt<std::size_t>(p, "max_steps", 10000000) < 1) config_fail(w + ": max_steps must be >= 1");
  if (p.contains("min_loc") != p.contains("saddle_loc")) config_fail(w + ": give both min_loc and saddle_loc");
}

void validate_label_sweep(const json& p, std::uint64_t seed) {
  const std::string w = "label-sweep";
  check_keys(p, {"dataset", "rho_grid", "corrupt_seed", "model", "lambda2", "beta", "trainer", "sgd", "n_runs",
                 "threshold_offset"},
             w);
  const auto s = parse_learning(p, seed, w);
  const json base = req<json>(p, "dataset", w);
  if (base.is_object() && base.contains("corrupt")) config_fail(w + ": dataset must not contain 'corrupt'; use rho_grid");
  const Dataset d = parse_dataset(base, w + ".dataset");
  check_dataset_model(d, s.model, w);
  for (double r : parse_grid(p, "rho_grid", w, 3))
    if (!(r >= 0.0 && r <= 1.0)) config_fail(w + ": rho_grid values must lie in [0, 1]");
  opt<std::uint64_t>(p, "corrupt_seed", 1);
  parse(w + ".sgd", [&] {
    s.sgd.validate(d.size());
    return 0;
  });
}

void validate_batch_sweep(const json& p, std::uint64_t seed) {
  const std::string w = "batch-sweep";
  check_keys(p, {"dataset", "model", "lambda2", "beta", "trainer", "sgd", "n_runs", "threshold_offset",
                 "batch_grid", "n_draws", "noise_at"},
             w);
  auto s = parse_learning(p, seed, w);
  if (p.at("sgd").is_object() && p.at("sgd").contains("batch")) config_fail(w + ": set batch sizes in batch_grid, not sgd.batch");
  const Dataset d = parse_dataset(req<json>(p, "dataset", w), w + ".dataset");
  check_dataset_model(d, s.model, w);
  const auto grid = req<std::vector<std::size_t>>(p, "batch_grid", w);
  if (grid.size() < 3) config_fail(w + ": batch_grid needs at least 3 sizes");
  for (auto b : grid) {
    s.sgd.batch = b;
    parse(w + ".batch_grid", [&] {
      s.sgd.validate(d.size());
      return 0;
    });
  }
  if (opt<std::size_t>(p, "n_draws", 2000) < 100) config_fail(w + ": n_draws must be >= 100");
  const auto at = opt<std::string>(p, "noise_at", "init");
  if (at != "init" && at != "minimizer") config_fail(w + ": noise_at must be 'init' or 'minimizer'");
}

void validate_task_list_kind(const json& p, std::uint64_t seed, const std::string& w, std::size_t min_tasks) {
  check_keys(p, {"tasks", "model", "lambda2", "beta", "trainer", "sgd", "n_runs", "threshold_offset"}, w);
  const auto s = parse_learning(p, seed, w);
  for (const auto& t : parse_task_list(p, w, min_tasks)) {
    const Dataset d = parse_dataset(t.dataset, w + ".tasks[" + t.id + "]");
    check_dataset_model(d, s.model, w + ".tasks[" + t.id + "]");
    parse(w + ".sgd", [&] {
      s.sgd.validate(d.size());
      return 0;
    });
  }
}

void validate_structure(const json& p) {
  const std::string w = "structure-curve";
  check_keys(p, {"dataset", "model", "beta_grid", "lambda2", "trainer"}, w);
  const auto model = parse(w + ".model", [&] { return ModelSpec::from_json(req<json>(p, "model", w)); });
  check_dataset_model(parse_dataset(req<json>(p, "dataset", w), w + ".dataset"), model, w);
  for (double b : parse_grid(p, "beta_grid", w, 2))
    if (!(b > 0.0)) config_fail(w + ": beta_grid values must be positive");
  if (!(opt(p, "lambda2", 1.0) > 0.0)) config_fail(w + ": lambda2 must be positive");
  const json trainer = opt(p, "trainer", json::object());
  no_nested_seed(trainer, w + ".trainer");
  parse(w + ".trainer", [&] { return TrainerConfig::from_json(trainer); });
}

void validate_action(const json& p) {
  const std::string w = "action-check";
  check_keys(p, {"potential", "D", "T", "n_knots", "start", "end", "path_opt"}, w);
  const PotentialPtr pot = parse(w + ".potential", [&] { return make_potential(req<json>(p, "potential", w)); });
  const auto a = parse_point(p, "start", {}, w);
  const auto b = parse_point(p, "end", {}, w);
  if (static_cast<std::size_t>(a.size()) != pot->dim() || static_cast<std::size_t>(b.size()) != pot->dim())
    config_fail(w + ": start/end dimension does not match the potential");
  if (!(req<double>(p, "D", w) > 0.0)) config_fail(w + ": D must be positive");
  if (!(req<double>(p, "T", w) > 0.0)) config_fail(w + ": T must be positive");
  if (opt<std::size_t>(p, "n_knots", 100) < 10) config_fail(w + ": n_knots must be >= 10");
  parse(w + ".path_opt", [&] { return PathOptConfig::from_json(opt(p, "path_opt", json::object())); });
}

// ---- runners ---------------------------------------------------------------

void run_kramers(const ExperimentConfig& cfg, const RunOptions& opts, ResultBundle& b) {
  const json& p = cfg.params;
  const json pot_cfg = opt(p, "potential", json{{"name", "double_well"}});
  const PotentialPtr pot = make_potential(pot_cfg);
  const auto start = parse_point(p, "start", {-1.0}, "");
  const auto target = parse_point(p, "target", {1.0}, "");
  const double radius = opt(p, "radius", 0.1);
  const auto grid = p.at("D_grid").get<std::vector<double>>();
  const std::size_t n_runs = opt<std::size_t>(p, "n_runs", 500);
  std::optional<std::pair<double, double>> theory;
  if (p.contains("min_loc")) theory = {p.at("min_loc").get<double>(), p.at("saddle_loc").get<double>()};
  else if (pot_cfg.at("name") == "double_well") theory = {start[0], 0.0};

  CsvBuilder table(header_of("kramers"));
  CsvBuilder runs(header_of("passage_times"));
  std::vector<std::pair<double, double>> fit_points;
  bool all_accepted = true;
  const std::uint64_t base = derive_seed(cfg.seed, kTagLangevin);
  for (std::size_t i = 0; i < grid.size(); ++i) {
    const double D = grid[i];
    DiffusionParams dp;
    dp.D = D;
    dp.dt = opt(p, "dt", 1e-3);
    dp.max_steps = opt<std::size_t>(p, "max_steps", 10000000);
    dp.seed = derive_seed(base, i);
    json rec = {{"D", D}, {"seed", dp.seed}};
    try {
      const EscapeStats es = first_passage(*pot, start, target, radius, dp, n_runs, opts.workers);
      double kt = kNaN;
      if (theory) kt = 1.0 / kramers_double_well(*pot, D, theory->first, theory->second);
      const bool accepted = accept_for_fit(es);
      all_accepted = all_accepted && accepted;
      rec["escape"] = es.to_json();
      rec["kramers_time"] = num_or_null(kt);
      rec["accepted_for_fit"] = accepted;
      table.row(D, 1.0 / D, es.mean, es.std, es.median_time(), n_runs, es.n_censored, kt);
      for (std::size_t r = 0; r < es.samples.size(); ++r) runs.row(D, r, es.samples[r]);
      fit_points.emplace_back(1.0 / D, es.mean);
    } catch (const std::exception& e) {
      all_accepted = false;
      rec["error"] = e.what();
      b.flags.push_back({{"D", D}, {"error", e.what()}});
    }
    b.records.push_back(rec);
  }
  b.tables.push_back({"kramers.csv", "kramers", table.str()});
  b.tables.push_back({"passage_times.csv", "passage_times", runs.str()});
  PlotSeries pts{"arrhenius.dat", "log mean first-passage time vs 1/D", {"inv_D", "log_mean_time"}, {}};
  for (const auto& [x, t] : fit_points) pts.rows.push_back({x, std::log(t)});
  b.plots.push_back(pts);
  if (fit_points.size() >= 3) {
    const RateFit fit = arrhenius_fit(fit_points);
    b.summary["fit"] = fit.to_json();
    b.summary["fit_accepted"] = all_accepted;
    PlotSeries line{"arrhenius_fit.dat", "fitted log time vs 1/D", {"inv_D", "predicted_log_time"}, {}};
    for (const auto& [x, _] : fit.points) line.rows.push_back({x, fit.predict_log_time(x)});
    b.plots.push_back(line);
  } else {
    b.summary["fit"] = nullptr;
    b.summary["fit_accepted"] = false;
  }
  if (theory) {
    WeightVector wm(1), ws(1);
    wm << theory->first;
    ws << theory->second;
    b.summary["theory_barrier"] = pot->value(ws) - pot->value(wm);
  }
}

struct CellResult {
  json record;
  bool ok = true;
  std::string error;
};

void run_label_sweep(const ExperimentConfig& cfg, const RunOptions& opts, ResultBundle& b) {
  const json& p = cfg.params;
  const LearningSetup s = parse_learning(p, cfg.seed, "label-sweep");
  const auto grid = p.at("rho_grid").get<std::vector<double>>();
  const auto corrupt_seed = opt<std::uint64_t>(p, "corrupt_seed", 1);
  std::vector<CellResult> cells(grid.size());
  parallel_for(grid.size(), opts.workers, [&](std::size_t i) {
    json spec = p.at("dataset");
    spec["corrupt"] = {{"rho", grid[i]}, {"seed", corrupt_seed}};
    json rec = {{"rho", grid[i]}};
    try {
      const Task t(make_dataset(spec), s.model);
      const Solved sol = solve(t, s);
      rec["complexity"] = sol.report.to_json();
      rec["min_loss"] = sol.min_loss;
      rec["threshold"] = sol.threshold;
      rec["trainer_converged"] = sol.converged;
      const EscapeStats es = convergence_time(t, sgd_start(s), sol.threshold, s.sgd, s.n_runs, 1);
      rec["convergence"] = es.to_json();
      rec["median_time"] = num_or_null(es.median_time());
    } catch (const std::exception& e) {
      cells[i].ok = false;
      cells[i].error = e.what();
      rec["error"] = e.what();
    }
    cells[i].record = rec;
  });
  CsvBuilder table(header_of("label_sweep"));
  std::vector<double> cs, ts;
  PlotSeries plot{"label_sweep.dat", "complexity and median convergence time vs label corruption",
                  {"rho", "c_beta", "median_time"}, {}};
  bool monotone = true;
  double prev_c = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < cells.size(); ++i) {
    const json& r = cells[i].record;
    b.records.push_back(r);
    if (!cells[i].ok || !r.contains("median_time")) {
      b.flags.push_back({{"rho", grid[i]}, {"error", cells[i].ok ? "incomplete" : cells[i].error}});
      table.row(grid[i], kNaN, kNaN, kNaN, kNaN, kNaN, kNaN, kNaN, kNaN, std::size_t{0},
                "failed");
      monotone = false;
      continue;
    }
    const json& c = r.at("complexity");
    const double med = r.at("median_time").is_null() ? std::numeric_limits<double>::infinity()
                                                    : r.at("median_time").get<double>();
    const json& conv = r.at("convergence");
    table.row(grid[i], c.at("total").get<double>(), c.at("loss_term").get<double>(), c.at("norm_term").get<double>(),
              c.at("logdet_term").get<double>(), r.at("min_loss").get<double>(), r.at("threshold").get<double>(),
              std::isfinite(med) ? med : kNaN,
              conv.at("mean").is_null() ? kNaN : conv.at("mean").get<double>(),
              conv.at("n_censored").get<std::size_t>(), "ok");
    const double cv = c.at("total").get<double>();
    monotone = monotone && cv > prev_c;
    prev_c = cv;
    cs.push_back(cv);
    ts.push_back(med);
    plot.rows.push_back({grid[i], cv, std::isfinite(med) ? med : kNaN});
  }
  b.tables.push_back({"label_sweep.csv", "label_sweep", table.str()});
  b.plots.push_back(plot);
  b.summary["beta"] = s.beta;
  b.summary["lambda2"] = s.lambda2;
  b.summary["c_beta_monotone"] = monotone && std::is_sorted(grid.begin(), grid.end());
  b.summary["spearman_c_time"] = cs.size() >= 2 ? json(stats::spearman(cs, ts)) : json(nullptr);
}

void run_batch_sweep(const ExperimentConfig& cfg, const RunOptions& opts, ResultBundle& b) {
  const json& p = cfg.params;
  const LearningSetup s = parse_learning(p, cfg.seed, "batch-sweep");
  const auto grid = p.at("batch_grid").get<std::vector<std::size_t>>();
  const auto n_draws = opt<std::size_t>(p, "n_draws", 2000);
  const bool at_init = opt<std::string>(p, "noise_at", "init") == "init";
  const Task t(make_dataset(p.at("dataset")), s.model);
  const Solved sol = solve(t, s);
  const WeightVector w_noise = at_init ? sgd_start(s) : sol.w;
  b.summary["min_loss"] = sol.min_loss;
  b.summary["threshold"] = sol.threshold;
  std::vector<CellResult> cells(grid.size());
  const std::uint64_t noise_base = derive_seed(cfg.seed, kTagNoise);
  parallel_for(grid.size(), opts.workers, [&](std::size_t i) {
    json rec = {{"batch", grid[i]}};
    try {
      const Matrix emp = noise_covariance(t, w_noise, grid[i], n_draws, derive_seed(noise_base, i), s.sgd.sampling);
      const Matrix exact = exact_noise_covariance(t, w_noise, grid[i]);
      rec["noise_trace"] = emp.trace();
      rec["exact_trace"] = exact.trace();
      rec["frobenius_rel_error"] = (emp - exact).norm() / exact.norm();
      SgdConfig sc = s.sgd;
      sc.batch = grid[i];
      const EscapeStats es = convergence_time(t, sgd_start(s), sol.threshold, sc, s.n_runs, 1);
      rec["convergence"] = es.to_json();
      rec["median_time"] = num_or_null(es.median_time());
    } catch (const std::exception& e) {
      cells[i].ok = false;
      cells[i].error = e.what();
      rec["error"] = e.what();
    }
    cells[i].record = rec;
  });
  CsvBuilder table(header_of("batch_sweep"));
  PlotSeries plot{"batch_sweep.dat", "noise trace and median convergence time vs batch size",
                  {"batch", "noise_trace", "median_time"}, {}};
  json ratios = json::array();
  for (std::size_t i = 0; i < cells.size(); ++i) {
    const json& r = cells[i].record;
    b.records.push_back(r);
    if (!cells[i].ok) {
      b.flags.push_back({{"batch", grid[i]}, {"error", cells[i].error}});
      table.row(grid[i], kNaN, kNaN, kNaN, kNaN, std::size_t{0}, "failed");
      continue;
    }
    const double med = r.at("median_time").is_null() ? kNaN : r.at("median_time").get<double>();
    table.row(grid[i], r.at("noise_trace").get<double>(), r.at("exact_trace").get<double>(),
              r.at("frobenius_rel_error").get<double>(), med,
              r.at("convergence").at("n_censored").get<std::size_t>(), "ok");
    plot.rows.push_back({static_cast<double>(grid[i]), r.at("noise_trace").get<double>(), med});
    if (i + 1 < cells.size() && cells[i + 1].ok)
      ratios.push_back({{"batch", grid[i]},
                        {"next_batch", grid[i + 1]},
                        {"trace_ratio", r.at("noise_trace").get<double>() /
                                            cells[i + 1].record.at("noise_trace").get<double>()}});
  }
  b.tables.push_back({"batch_sweep.csv", "batch_sweep", table.str()});
  b.plots.push_back(plot);
  b.summary["trace_ratios"] = ratios;
}

struct TaskSolve {
  std::string id;
  std::optional<Task> task;
  Solved sol;
  std::string error;
};

std::vector<TaskSolve> solve_tasks(const std::vector<NamedSpec>& specs, const LearningSetup& s, std::size_t workers) {
  std::vector<TaskSolve> out(specs.size());
  parallel_for(specs.size(), workers, [&](std::size_t i) {
    out[i].id = specs[i].id;
    try {
      out[i].task.emplace(make_dataset(specs[i].dataset), s.model);
      out[i].sol = solve(*out[i].task, s);
    } catch (const std::exception& e) {
      out[i].error = e.what();
    }
  });
  return out;
}

json solved_json(const TaskSolve& t) {
  if (!t.error.empty()) return {{"id", t.id}, {"error", t.error}};
  return {{"id", t.id},
          {"complexity", t.sol.report.to_json()},
          {"min_loss", t.sol.min_loss},
          {"threshold", t.sol.threshold},
          {"trainer_converged", t.sol.converged}};
}

void run_complexity_scatter(const ExperimentConfig& cfg, const RunOptions& opts, ResultBundle& b) {
  const json& p = cfg.params;
  const LearningSetup s = parse_learning(p, cfg.seed, "complexity-scatter");
  const auto specs = parse_task_list(p, "complexity-scatter", 3);
  auto solved = solve_tasks(specs, s, opts.workers);
  std::vector<json> conv(specs.size());
  parallel_for(specs.size(), opts.workers, [&](std::size_t i) {
    if (!solved[i].error.empty()) return;
    try {
      conv[i] = convergence_time(*solved[i].task, sgd_start(s), solved[i].sol.threshold, s.sgd, s.n_runs, 1).to_json();
    } catch (const std::exception& e) {
      solved[i].error = e.what();
    }
  });
  double c_min = std::numeric_limits<double>::infinity();
  for (const auto& t : solved)
    if (t.error.empty()) c_min = std::min(c_min, t.sol.report.total);
  CsvBuilder table(header_of("complexity_scatter"));
  PlotSeries plot{"complexity_scatter.dat", "median convergence time vs complexity", {"c_beta", "median_time"}, {}};
  std::vector<double> cs, ts;
  std::vector<std::pair<double, double>> fit_points;
  for (std::size_t i = 0; i < solved.size(); ++i) {
    json rec = solved_json(solved[i]);
    if (!solved[i].error.empty()) {
      b.flags.push_back({{"task", solved[i].id}, {"error", solved[i].error}});
      table.row(solved[i].id, kNaN, kNaN, kNaN, std::size_t{0}, "failed");
      b.records.push_back(rec);
      continue;
    }
    rec["convergence"] = conv[i];
    const EscapeStats es = EscapeStats::from_samples(conv[i].at("samples").get<std::vector<double>>());
    const double med = es.median_time();
    const double c = solved[i].sol.report.total;
    table.row(solved[i].id, c, c - c_min, std::isfinite(med) ? med : kNaN, es.n_censored, "ok");
    plot.rows.push_back({c, std::isfinite(med) ? med : kNaN});
    cs.push_back(c);
    ts.push_back(med);
    if (std::isfinite(med) && med > 0.0) fit_points.emplace_back(c - c_min, med);
    b.records.push_back(rec);
  }
  b.tables.push_back({"complexity_scatter.csv", "complexity_scatter", table.str()});
  b.plots.push_back(plot);
  b.summary["beta"] = s.beta;
  b.summary["spearman_c_time"] = cs.size() >= 2 ? json(stats::spearman(cs, ts)) : json(nullptr);
  if (fit_points.size() >= 3) {
    try {
      b.summary["fit"] = arrhenius_fit(fit_points).to_json();
    } catch (const std::exception& e) {
      b.summary["fit"] = nullptr;
      b.summary["fit_error"] = e.what();
    }
  }
}

std::string config_digest(const ExperimentConfig& cfg) {
  return std::to_string(std::hash<std::string>{}(cfg.to_json().dump()));
}

void run_finetune_matrix(const ExperimentConfig& cfg, const RunOptions& opts, ResultBundle& b) {
  const json& p = cfg.params;
  const LearningSetup s = parse_learning(p, cfg.seed, "finetune-matrix");
  const auto specs = parse_task_list(p, "finetune-matrix", 2);
  const std::size_t n = specs.size();
  auto solved = solve_tasks(specs, s, opts.workers);
  for (const auto& t : solved) b.records.push_back(solved_json(t));

  // Cell (i, j): SGD on task j from the minimizer of task i.
  const std::string digest = config_digest(cfg);
  std::vector<json> cell(n * n);
  if (!opts.checkpoint_dir.empty()) fs::create_directories(opts.checkpoint_dir);
  auto cell_path = [&](std::size_t i, std::size_t j) {
    return opts.checkpoint_dir / ("cell_" + std::to_string(i) + "_" + std::to_string(j) + ".json");
  };
  parallel_for(n * n, opts.workers, [&](std::size_t c) {
    const std::size_t i = c / n, j = c % n;
    if (!opts.checkpoint_dir.empty() && fs::exists(cell_path(i, j))) {
      std::ifstream in(cell_path(i, j));
      const json saved = json::parse(in, nullptr, false);
      if (!saved.is_discarded() && saved.value("digest", "") == digest) {
        cell[c] = saved.at("cell");
        return;
      }
    }
    json rec = {{"source", specs[i].id}, {"target", specs[j].id}};
    if (!solved[i].error.empty() || !solved[j].error.empty()) {
      rec["status"] = "failed";
      rec["error"] = "training failed for " + (solved[i].error.empty() ? specs[j].id : specs[i].id);
    } else {
      try {
        const EscapeStats es =
            convergence_time(*solved[j].task, solved[i].sol.w, solved[j].sol.threshold, s.sgd, s.n_runs, 1);
        rec["convergence"] = es.to_json();
        rec["median_time"] = num_or_null(es.median_time());
        rec["status"] = std::isfinite(es.median_time()) ? "ok" : "censored";
      } catch (const SimulationError& e) {
        rec["status"] = "censored";
        rec["median_time"] = nullptr;
        rec["note"] = e.what();
      } catch (const std::exception& e) {
        rec["status"] = "failed";
        rec["error"] = e.what();
      }
    }
    cell[c] = rec;
    if (!opts.checkpoint_dir.empty()) {
      const fs::path tmp = cell_path(i, j).string() + ".tmp";
      {
        std::ofstream out(tmp);
        out << json{{"digest", digest}, {"cell", rec}}.dump() << '\n';
      }
      fs::rename(tmp, cell_path(i, j));
    }
  });

  std::vector<NamedDataset> named;
  for (std::size_t i = 0; i < n; ++i) named.push_back({specs[i].id, make_dataset(specs[i].dataset)});
  const DistanceMatrix dm = distance_matrix(named, s.model, s.beta, s.lambda2, s.trainer, opts.workers);

  auto time_of = [&](std::size_t i, std::size_t j) {
    const json& r = cell[i * n + j];
    if (r.at("status") == "ok") return r.at("median_time").get<double>();
    return r.at("status") == "censored" ? std::numeric_limits<double>::infinity() : kNaN;
  };
  std::ostringstream times;
  times << std::setprecision(17) << "task";
  for (const auto& sp : specs) times << ',' << sp.id;
  times << '\n';
  for (std::size_t i = 0; i < n; ++i) {
    times << specs[i].id;
    for (std::size_t j = 0; j < n; ++j) {
      const double t = time_of(i, j);
      times << ',' << (std::isfinite(t) ? fmt(t) : "");
    }
    times << '\n';
  }
  CsvBuilder pairs(header_of("finetune_pairs"));
  PlotSeries scatter{"finetune_scatter.dat", "fine-tune time vs task distance", {"distance", "median_time"}, {}};
  std::vector<double> ds, ts;
  json cells_json = json::array();
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      const json& r = cell[i * n + j];
      cells_json.push_back(r);
      if (r.at("status") == "failed") b.flags.push_back(r);
      if (i == j) continue;
      const double d = dm.cells[i][j] ? *dm.cells[i][j] : kNaN;
      const double t = time_of(i, j);
      const std::size_t cens = r.contains("convergence") ? r.at("convergence").at("n_censored").get<std::size_t>()
                                                         : s.n_runs;
      pairs.row(specs[i].id, specs[j].id, d, std::isfinite(t) ? t : kNaN, cens, r.at("status").get<std::string>());
      if (!std::isnan(d) && !std::isnan(t)) {
        ds.push_back(d);
        ts.push_back(t);
        if (std::isfinite(t)) scatter.rows.push_back({d, t});
      }
    }
  }
  // Directional agreement over unordered pairs, oriented from the more
  // complex task to the simpler one.
  std::size_t n_pairs = 0, time_ok = 0, dist_ok = 0, both_ok = 0;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      if (!solved[i].error.empty() || !solved[j].error.empty()) continue;
      if (!dm.cells[i][j] || !dm.cells[j][i]) continue;
      const bool i_complex = solved[i].sol.report.total > solved[j].sol.report.total;
      const std::size_t c = i_complex ? i : j, sm = i_complex ? j : i;
      const double t_cs = time_of(c, sm), t_sc = time_of(sm, c);
      if (std::isnan(t_cs) || std::isnan(t_sc)) continue;
      ++n_pairs;
      const bool tk = t_cs < t_sc;
      const bool dk = *dm.cells[c][sm] < *dm.cells[sm][c];
      time_ok += tk;
      dist_ok += dk;
      both_ok += tk && dk;
    }
  }
  b.summary["matrix_cells"] = cells_json;
  b.summary["distances"] = dm.to_json();
  b.summary["n_pairs"] = n_pairs;
  auto frac = [&](std::size_t k) { return n_pairs ? json(static_cast<double>(k) / static_cast<double>(n_pairs)) : json(nullptr); };
  b.summary["time_asymmetry_fraction"] = frac(time_ok);
  b.summary["distance_asymmetry_fraction"] = frac(dist_ok);
  b.summary["joint_asymmetry_fraction"] = frac(both_ok);
  b.summary["spearman_distance_time"] = ds.size() >= 2 ? json(stats::spearman(ds, ts)) : json(nullptr);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j)
      if (!dm.errors[i][j].empty()) b.flags.push_back({{"source", specs[i].id}, {"target", specs[j].id}, {"distance_error", dm.errors[i][j]}});
  b.tables.push_back({"finetune_times.csv", "task_matrix", times.str()});
  b.tables.push_back({"distances.csv", "task_matrix", dm.to_csv()});
  b.tables.push_back({"finetune_pairs.csv", "finetune_pairs", pairs.str()});
  b.plots.push_back(scatter);
}

void run_structure(const ExperimentConfig& cfg, const RunOptions&, ResultBundle& b) {
  const json& p = cfg.params;
  const ModelSpec model = ModelSpec::from_json(p.at("model"));
  const Task t(make_dataset(p.at("dataset")), model);
  TrainerConfig tc = TrainerConfig::from_json(opt(p, "trainer", json::object()));
  tc.seed = derive_seed(cfg.seed, kTagInit);
  const double lambda2 = opt(p, "lambda2", 1.0);
  const StructureCurve curve = structure_curve(t, p.at("beta_grid").get<std::vector<double>>(), lambda2, tc);
  CsvBuilder table(header_of("structure_curve"));
  PlotSeries plot{"structure_curve.dat", "expected loss vs information in the weights", {"kl_nats", "expected_loss"}, {}};
  for (const auto& pt : curve.points) {
    b.records.push_back({{"beta", pt.beta}, {"kl_nats", pt.kl_nats}, {"expected_loss", pt.expected_loss},
                         {"point_loss", pt.point_loss}, {"converged", pt.converged}});
    table.row(pt.beta, pt.kl_nats, pt.expected_loss, pt.point_loss, pt.converged ? 1 : 0);
    plot.rows.push_back({pt.kl_nats, pt.expected_loss});
    if (!pt.converged) b.flags.push_back({{"beta", pt.beta}, {"error", "training did not converge"}});
  }
  b.tables.push_back({"structure_curve.csv", "structure_curve", table.str()});
  b.plots.push_back(plot);
  b.summary["monotone"] = curve.is_monotone();
  b.summary["log_classes"] = std::log(static_cast<double>(model.classes));
  if (!curve.points.empty()) {
    b.summary["largest_beta_loss"] = curve.points.front().expected_loss;
    b.summary["largest_beta_point_loss"] = curve.points.front().point_loss;
    b.summary["smallest_beta_loss"] = curve.points.back().expected_loss;
  }
}

void run_action(const ExperimentConfig& cfg, const RunOptions&, ResultBundle& b) {
  const json& p = cfg.params;
  const PotentialPtr pot = make_potential(p.at("potential"));
  const auto w0 = parse_point(p, "start", {}, "");
  const auto wf = parse_point(p, "end", {}, "");
  const double D = p.at("D").get<double>();
  const double T = p.at("T").get<double>();
  const auto n_knots = opt<std::size_t>(p, "n_knots", 100);
  const PathOptConfig oc = PathOptConfig::from_json(opt(p, "path_opt", json::object()));
  const MinimumActionResult r = minimum_action_path(*pot, w0, wf, T, n_knots, D, oc);
  CsvBuilder table(header_of("action_paths"));
  for (std::size_t i = 0; i < r.distinct.size(); ++i) {
    const CriticalPath& c = r.distinct[i];
    b.records.push_back(c.to_json());
    table.row(i, c.start, c.action.total, c.action.static_term, c.action.dynamic_term, c.el_residual,
              c.el_residual_fd, c.converged ? 1 : 0, c.iterations);
    if (!c.converged) b.flags.push_back({{"path", i}, {"start", c.start}, {"error", "optimizer did not converge"}});
  }
  std::ostringstream path_csv;
  r.best.path.write_csv(path_csv);
  Path straight;
  for (std::size_t k = 0; k < n_knots; ++k) {
    const double s = static_cast<double>(k) / static_cast<double>(n_knots - 1);
    straight.times.push_back(s * T);
    straight.points.push_back(w0 + s * (wf - w0));
  }
  b.tables.push_back({"action_paths.csv", "action_paths", table.str()});
  b.tables.push_back({"best_path.csv", "path", path_csv.str()});
  PlotSeries plot{"best_path.dat", "minimum-action path", {"t"}, {}};
  for (std::size_t j = 0; j < pot->dim(); ++j) plot.columns.push_back("w" + std::to_string(j));
  for (std::size_t k = 0; k < r.best.path.size(); ++k) {
    std::vector<double> row{r.best.path.times[k]};
    for (Eigen::Index j = 0; j < r.best.path.points[k].size(); ++j) row.push_back(r.best.path.points[k][j]);
    plot.rows.push_back(row);
  }
  b.plots.push_back(plot);
  b.summary["best"] = r.best.to_json();
  b.summary["n_distinct"] = r.distinct.size();
  b.summary["straight_line_action"] = om_action(*pot, straight, D).to_json();
}

}  // namespace

// ---- config -------------------------------------------------------------------

ExperimentConfig ExperimentConfig::from_json(const json& j) {
  check_keys(j, {"kind", "seed", "params"}, "config");
  ExperimentConfig c;
  c.kind = req<std::string>(j, "kind", "config");
  c.seed = opt<std::uint64_t>(j, "seed", 0);
  c.params = opt(j, "params", json::object());
  if (!c.params.is_object()) config_fail("config: 'params' must be an object");
  const auto& kinds = experiment_kinds();
  if (std::find(kinds.begin(), kinds.end(), c.kind) == kinds.end()) config_fail("config: unknown kind '" + c.kind + "'");
  if (c.kind == "kramers-sweep") validate_kramers(c.params);
  else if (c.kind == "label-sweep") validate_label_sweep(c.params, c.seed);
  else if (c.kind == "batch-sweep") validate_batch_sweep(c.params, c.seed);
  else if (c.kind == "complexity-scatter") validate_task_list_kind(c.params, c.seed, c.kind, 3);
  else if (c.kind == "finetune-matrix") validate_task_list_kind(c.params, c.seed, c.kind, 2);
  else if (c.kind == "structure-curve") validate_structure(c.params);
  else validate_action(c.params);
  return c;
}

json ExperimentConfig::to_json() const { return {{"kind", kind}, {"seed", seed}, {"params", params}}; }

// ---- bundle -------------------------------------------------------------------

json ResultBundle::deterministic_json() const {
  json files = json::array();
  for (const auto& t : tables) files.push_back({{"file", t.file}, {"schema", t.schema}});
  return {{"tool_version", kToolVersion},
          {"config", config.to_json()},
          {"status", failed ? "failed" : (flags.empty() ? "ok" : "partial")},
          {"error", error},
          {"records", records},
          {"summary", summary},
          {"flags", flags},
          {"tables", files}};
}

json ResultBundle::to_json() const {
  json j = deterministic_json();
  j["timing"] = timing;
  return j;
}

ResultBundle run(const ExperimentConfig& cfg, const RunOptions& opts) {
  ResultBundle b;
  b.config = cfg;
  const auto wall_start = std::chrono::system_clock::now();
  const auto t0 = std::chrono::steady_clock::now();
  try {
    if (cfg.kind == "kramers-sweep") run_kramers(cfg, opts, b);
    else if (cfg.kind == "label-sweep") run_label_sweep(cfg, opts, b);
    else if (cfg.kind == "batch-sweep") run_batch_sweep(cfg, opts, b);
    else if (cfg.kind == "complexity-scatter") run_complexity_scatter(cfg, opts, b);
    else if (cfg.kind == "finetune-matrix") run_finetune_matrix(cfg, opts, b);
    else if (cfg.kind == "structure-curve") run_structure(cfg, opts, b);
    else if (cfg.kind == "action-check") run_action(cfg, opts, b);
    else config_fail("unknown kind '" + cfg.kind + "'");
  } catch (const ConfigError&) {
    throw;
  } catch (const std::exception& e) {
    b.failed = true;
    b.error = e.what();
  }
  const std::time_t started = std::chrono::system_clock::to_time_t(wall_start);
  std::ostringstream stamp;
  stamp << std::put_time(std::gmtime(&started), "%Y-%m-%dT%H:%M:%SZ");
  b.timing = {{"started_utc", stamp.str()},
              {"wall_seconds", std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count()},
              {"workers", opts.workers}};
  return b;
}

void write_bundle(const ResultBundle& b, const fs::path& dir) {
  fs::create_directories(dir / "plots");
  {
    std::ofstream out(dir / "bundle.json");
    out << b.to_json().dump(2) << '\n';
  }
  for (const auto& t : b.tables) {
    std::ofstream out(dir / t.file);
    out << t.text;
  }
  json manifest = json::array();
  for (const auto& pl : b.plots) {
    std::ofstream out(dir / "plots" / pl.file);
    out << std::setprecision(17) << "#";
    for (const auto& c : pl.columns) out << ' ' << c;
    out << '\n';
    for (const auto& row : pl.rows) {
      for (std::size_t i = 0; i < row.size(); ++i) out << (i ? " " : "") << row[i];
      out << '\n';
    }
    manifest.push_back({{"file", pl.file},
                        {"title", pl.title},
                        {"x", pl.columns.empty() ? "" : pl.columns.front()},
                        {"y", std::vector<std::string>(pl.columns.begin() + (pl.columns.empty() ? 0 : 1), pl.columns.end())},
                        {"rows", pl.rows.size()}});
  }
  std::ofstream out(dir / "plots" / "manifest.json");
  out << manifest.dump(2) << '\n';
}

int exit_code(const ResultBundle& b) { return b.failed || !b.flags.empty() ? 3 : 0; }

std::vector<std::string> validate_bundle_dir(const fs::path& dir) {
  std::vector<std::string> problems;
  std::ifstream in(dir / "bundle.json");
  if (!in) return {"missing bundle.json"};
  const json bundle = json::parse(in, nullptr, false);
  if (bundle.is_discarded() || !bundle.contains("tables")) return {"bundle.json is not a result bundle"};
  for (const auto& t : bundle.at("tables")) {
    const std::string file = t.at("file");
    const csv::Report rep = csv::validate_file(dir / file, t.at("schema"));
    for (const auto& pr : rep.problems) problems.push_back(file + ": " + pr);
  }
  return problems;
}

}  // namespace reachlab::harness
