#include "reachlab/csv_schema.hpp"

#include <charconv>
#include <fstream>
#include <sstream>

#include "reachlab/errors.hpp"

namespace reachlab::csv {

namespace {

Column real(std::string n, bool nullable = false) { return {std::move(n), ColumnType::Real, nullable}; }
Column integer(std::string n) { return {std::move(n), ColumnType::Integer, false}; }
Column text(std::string n) { return {std::move(n), ColumnType::Text, false}; }

bool parses(const std::string& field, ColumnType type) {
  if (type == ColumnType::Text) return !field.empty();
  if (type == ColumnType::Integer) {
    long long v = 0;
    const auto [ptr, ec] = std::from_chars(field.data(), field.data() + field.size(), v);
    return ec == std::errc() && ptr == field.data() + field.size();
  }
  if (field == "nan" || field == "inf" || field == "-inf") return true;
  double v = 0;
  const auto [ptr, ec] = std::from_chars(field.data(), field.data() + field.size(), v);
  return ec == std::errc() && ptr == field.data() + field.size();
}

}  // namespace

const std::vector<Schema>& registry() {
  static const std::vector<Schema> schemas = {
      {"dataset", "Inputs x0..x{p-1} and integer label y.", {}, "x", false},
      {"path", "Time t and weights w0..w{d-1} per knot.", {real("t")}, "w", false},
      {"kramers", "Mean first-passage time per diffusion coefficient.",
       {real("D"), real("inv_D"), real("mean_time", true), real("std_time", true), real("median_time"),
        integer("n_runs"), integer("n_censored"), real("kramers_time", true)},
       "", false},
      {"passage_times", "Per-run first-passage time; empty when censored.",
       {real("D"), integer("run"), real("time", true)}, "", false},
      {"label_sweep", "Complexity and SGD convergence time per corruption level.",
       {real("rho"), real("c_beta", true), real("loss_term", true), real("norm_term", true),
        real("logdet_term", true), real("min_loss", true), real("threshold", true), real("median_time", true),
        real("mean_time", true), integer("n_censored"), text("status")},
       "", false},
      {"batch_sweep", "Measured and exact noise trace and convergence time per batch size.",
       {integer("batch"), real("noise_trace", true), real("exact_trace", true), real("frobenius_rel_error", true),
        real("median_time", true), integer("n_censored"), text("status")},
       "", false},
      {"complexity_scatter", "Complexity against SGD convergence time per task.",
       {text("task"), real("c_beta", true), real("delta_c", true), real("median_time", true), integer("n_censored"),
        text("status")},
       "", false},
      {"finetune_pairs", "Off-diagonal (distance, fine-tune time) pairs.",
       {text("source"), text("target"), real("distance", true), real("median_time", true), integer("n_censored"),
        text("status")},
       "", false},
      {"task_matrix", "Square task matrix; row = source, column = target; empty cell = failed or censored.",
       {text("task")}, "", true},
      {"structure_curve", "Information (nats) against expected loss per beta.",
       {real("beta"), real("kl_nats"), real("expected_loss"), real("point_loss"), integer("converged")}, "", false},
      {"action_paths", "Distinct minimum-action paths.",
       {integer("index"), text("start"), real("total"), real("static_term"), real("dynamic_term"),
        real("el_residual"), real("el_residual_fd"), integer("converged"), integer("iterations")},
       "", false},
  };
  return schemas;
}

const Schema& find(const std::string& name) {
  for (const auto& s : registry())
    if (s.name == name) return s;
  throw ContractViolation("csv schema: unknown schema '" + name + "'");
}

std::vector<std::string> split_line(const std::string& line) {
  std::vector<std::string> out;
  std::string field;
  std::istringstream in(line);
  while (std::getline(in, field, ',')) out.push_back(field);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

Report validate(std::istream& in, const Schema& schema) {
  Report rep;
  auto problem = [&](std::string msg) {
    rep.ok = false;
    if (rep.problems.size() < 20) rep.problems.push_back(std::move(msg));
  };
  std::string line;
  if (!std::getline(in, line)) {
    problem("missing header");
    return rep;
  }
  const auto header = split_line(line);
  std::vector<Column> cols = schema.columns;
  if (!schema.numbered_stem.empty() || schema.name == "dataset") {
    const std::size_t extra_start = cols.size();
    std::size_t n = 0;
    for (std::size_t i = extra_start; i < header.size(); ++i)
      if (header[i] == schema.numbered_stem + std::to_string(n)) ++n;
      else break;
    for (std::size_t i = 0; i < n; ++i) cols.push_back(real(schema.numbered_stem + std::to_string(i)));
    if (schema.name == "dataset") cols.push_back(integer("y"));
    if (n == 0) problem("no numbered columns '" + schema.numbered_stem + "0..'");
  }
  std::vector<std::string> ids;
  if (schema.matrix) {
    if (header.empty() || header[0] != "task") problem("matrix header must start with 'task'");
    for (std::size_t i = 1; i < header.size(); ++i) {
      ids.push_back(header[i]);
      cols.push_back(real(header[i], true));
    }
    if (ids.empty()) problem("matrix has no task columns");
  }
  if (header.size() != cols.size()) {
    problem("header has " + std::to_string(header.size()) + " columns, schema expects " + std::to_string(cols.size()));
  } else {
    for (std::size_t i = 0; i < cols.size(); ++i)
      if (header[i] != cols[i].name) problem("column " + std::to_string(i) + " is '" + header[i] + "', expected '" + cols[i].name + "'");
  }
  if (!rep.ok) return rep;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto fields = split_line(line);
    const std::string where = "row " + std::to_string(rep.rows + 1);
    if (fields.size() != cols.size()) {
      problem(where + ": " + std::to_string(fields.size()) + " fields, expected " + std::to_string(cols.size()));
    } else {
      for (std::size_t i = 0; i < cols.size(); ++i) {
        if (fields[i].empty() && cols[i].nullable) continue;
        if (!parses(fields[i], cols[i].type)) problem(where + ": column '" + cols[i].name + "' has bad value '" + fields[i] + "'");
      }
      if (schema.matrix && (rep.rows >= ids.size() || fields[0] != ids[rep.rows]))
        problem(where + ": row id does not match column order");
    }
    ++rep.rows;
  }
  if (schema.matrix && rep.rows != ids.size()) problem("matrix is not square");
  return rep;
}

Report validate_file(const std::filesystem::path& file, const std::string& schema_name) {
  std::ifstream in(file);
  if (!in) {
    Report rep;
    rep.ok = false;
    rep.problems.push_back("cannot open " + file.string());
    return rep;
  }
  return validate(in, find(schema_name));
}

}  // namespace reachlab::csv
