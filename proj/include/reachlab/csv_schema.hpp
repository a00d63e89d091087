#pragma once
// Registry of every CSV layout the tool writes, and a validator for them.

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

namespace reachlab::csv {

enum class ColumnType { Real, Integer, Text };

struct Column {
  std::string name;
  ColumnType type = ColumnType::Real;
  bool nullable = false;  // empty field allowed
};

struct Schema {
  std::string name;
  std::string description;
  std::vector<Column> columns;
  // Header is a fixed prefix followed by numbered columns stem0, stem1, ...
  std::string numbered_stem;
  // Square matrix: header "task,<id>..." and one row per id, first field the id.
  bool matrix = false;
};

const std::vector<Schema>& registry();
const Schema& find(const std::string& name);

struct Report {
  bool ok = true;
  std::size_t rows = 0;
  std::vector<std::string> problems;
};

Report validate(std::istream& in, const Schema& schema);
Report validate_file(const std::filesystem::path& file, const std::string& schema_name);

// Quote-free CSV line splitting; the tool never writes commas inside fields.
std::vector<std::string> split_line(const std::string& line);

}  // namespace reachlab::csv
