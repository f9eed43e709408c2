#pragma once

// RFC-4180 CSV output with shortest round-trip number formatting, and small
// file helpers shared by the CLI.

#include <charconv>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "stgeo/errors.hpp"
#include "stgeo/geometry.hpp"

namespace stgeo {

/// Shortest decimal string that parses back to exactly `v`.
inline std::string format_double(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[32];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

class CsvWriter {
 public:
  explicit CsvWriter(std::vector<std::string> header) : header_(std::move(header)) { add_row(header_); }

  std::size_t columns() const { return header_.size(); }

  void row(const std::vector<double>& values) {
    std::vector<std::string> cells;
    cells.reserve(values.size());
    for (double v : values) cells.push_back(format_double(v));
    add_row(cells);
  }

  void add_row(const std::vector<std::string>& cells) {
    if (cells.size() != header_.size()) throw DomainError("csv: row width differs from header");
    for (std::size_t i = 0; i < cells.size(); ++i) {
      if (i) out_ += ',';
      out_ += quote(cells[i]);
    }
    out_ += "\r\n";
  }

  const std::string& str() const { return out_; }

  static std::string quote(std::string_view s) {
    if (s.find_first_of(",\"\r\n") == std::string_view::npos) return std::string(s);
    std::string q = "\"";
    for (char c : s) {
      if (c == '"') q += '"';
      q += c;
    }
    return q + '"';
  }

 private:
  std::vector<std::string> header_;
  std::string out_;
};

inline void write_file(const std::filesystem::path& path, std::string_view content) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw DomainError("cannot open " + path.string() + " for writing");
  f.write(content.data(), static_cast<std::streamsize>(content.size()));
  if (!f) throw DomainError("write failed: " + path.string());
}

inline void write_json(const std::filesystem::path& path, const nlohmann::ordered_json& j) {
  write_file(path, j.dump(2) + "\n");
}

/// Columns s, t, log_snr, x_1..x_D; s runs uniformly over [0, 1].
inline std::string curve_csv(const NoiseSchedule& schedule, const DiscretizedCurve& curve) {
  std::vector<std::string> header{"s", "t", "log_snr"};
  const std::size_t d = curve.points.empty() ? 0 : curve.points.front().dim();
  for (std::size_t i = 0; i < d; ++i) header.push_back("x_" + std::to_string(i + 1));
  CsvWriter w(std::move(header));
  const std::size_t n = curve.points.size();
  for (std::size_t k = 0; k < n; ++k) {
    const auto& p = curve.points[k];
    std::vector<double> row{n > 1 ? static_cast<double>(k) / static_cast<double>(n - 1) : 0.0, p.t,
                            schedule.log_snr(p.t)};
    row.insert(row.end(), p.x.begin(), p.x.end());
    w.row(row);
  }
  return w.str();
}

/// Columns step, t, x_1..x_D.
inline std::string trajectory_csv(const std::vector<SpacetimePoint>& traj) {
  std::vector<std::string> header{"step", "t"};
  const std::size_t d = traj.empty() ? 0 : traj.front().dim();
  for (std::size_t i = 0; i < d; ++i) header.push_back("x_" + std::to_string(i + 1));
  CsvWriter w(std::move(header));
  for (std::size_t k = 0; k < traj.size(); ++k) {
    std::vector<double> row{static_cast<double>(k), traj[k].t};
    row.insert(row.end(), traj[k].x.begin(), traj[k].x.end());
    w.row(row);
  }
  return w.str();
}

inline nlohmann::ordered_json to_json(const SpacetimePoint& p) { return {{"x", p.x}, {"t", p.t}}; }

}  // namespace stgeo
