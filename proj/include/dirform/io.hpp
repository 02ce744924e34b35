#pragma once

#include <charconv>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "dirform/drivers.hpp"
#include "json.hpp"

namespace dirform {

/// Shortest decimal form that round-trips the double.
inline std::string format_double(double v) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

inline void write_csv(const std::filesystem::path& path, const std::vector<std::string>& columns,
                      const std::vector<std::vector<double>>& rows) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open for writing: " + path.string());
  for (std::size_t c = 0; c < columns.size(); ++c)
    out << (c ? "," : "") << columns[c];
  out << "\n";
  for (const auto& row : rows) {
    if (row.size() != columns.size())
      throw std::invalid_argument("write_csv: row width does not match the header");
    for (std::size_t c = 0; c < row.size(); ++c)
      out << (c ? "," : "") << format_double(row[c]);
    out << "\n";
  }
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

inline void write_path_csv(const std::filesystem::path& path, const PathGrid& grid) {
  if (grid.times.size() != grid.values.size())
    throw std::invalid_argument("write_path_csv: ragged path");
  std::vector<std::vector<double>> rows(grid.times.size());
  for (std::size_t k = 0; k < rows.size(); ++k) rows[k] = {grid.times[k], grid.values[k]};
  write_csv(path, {"time", "value"}, rows);
}

/// Audit dump of the simulated increments, one row per fine step, with a
/// column per populated channel.
inline void write_increments_csv(const std::filesystem::path& path, const DriverPaths& drv) {
  std::vector<std::string> cols = {"step"};
  if (!drv.db.empty()) cols.push_back("db");
  if (!drv.dw.empty()) cols.push_back("dw");
  if (!drv.dbhat.empty()) cols.push_back("dbhat");
  std::vector<std::vector<double>> rows(static_cast<std::size_t>(drv.n_fine));
  for (std::size_t k = 0; k < rows.size(); ++k) {
    rows[k].push_back(static_cast<double>(k));
    if (!drv.db.empty()) rows[k].push_back(drv.db[k]);
    if (!drv.dw.empty()) rows[k].push_back(drv.dw[k]);
    if (!drv.dbhat.empty()) rows[k].push_back(drv.dbhat[k]);
  }
  write_csv(path, cols, rows);
}

inline void write_json_file(const std::filesystem::path& path, const nlohmann::json& doc) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open for writing: " + path.string());
  out << doc.dump(2) << "\n";
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

inline nlohmann::json read_json_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open: " + path.string());
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw std::runtime_error(path.string() + ": " + e.what());
  }
  return doc;
}

}  // namespace dirform
