#pragma once

#include <initializer_list>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "reachlab/errors.hpp"
#include "reachlab/linalg.hpp"

namespace reachlab::json_util {

using nlohmann::json;

// Reject keys outside `allowed`. `where` names the object in the message.
inline void expect_keys(const json& obj, std::initializer_list<std::string_view> allowed,
                        const std::string& where) {
  if (!obj.is_object()) throw ContractViolation(where + ": expected a JSON object");
  for (const auto& [key, _] : obj.items()) {
    bool ok = false;
    for (auto a : allowed) ok = ok || key == a;
    if (!ok) throw ContractViolation(where + ": unknown key '" + key + "'");
  }
}

template <class T>
T get_or(const json& obj, const char* key, T fallback) {
  auto it = obj.find(key);
  if (it == obj.end()) return fallback;
  try {
    return it->get<T>();
  } catch (const json::exception& e) {
    throw ContractViolation(std::string("key '") + key + "': " + e.what());
  }
}

template <class T>
T get_required(const json& obj, const char* key, const std::string& where) {
  auto it = obj.find(key);
  if (it == obj.end()) throw ContractViolation(where + ": missing required key '" + key + "'");
  try {
    return it->get<T>();
  } catch (const json::exception& e) {
    throw ContractViolation(where + ": key '" + key + "': " + e.what());
  }
}

inline Vector to_vector(const std::vector<double>& v) {
  return Eigen::Map<const Vector>(v.data(), static_cast<Eigen::Index>(v.size()));
}

inline std::vector<double> from_vector(const Vector& v) { return {v.data(), v.data() + v.size()}; }

inline json matrix_to_json(const Matrix& m) {
  json rows = json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    std::vector<double> r(static_cast<std::size_t>(m.cols()));
    for (Eigen::Index j = 0; j < m.cols(); ++j) r[static_cast<std::size_t>(j)] = m(i, j);
    rows.push_back(r);
  }
  return rows;
}

}  // namespace reachlab::json_util
