#pragma once

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <map>
#include <optional>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "dwols/sim.hpp"

namespace dwols::report {

inline const std::vector<std::string>& metrics_columns() {
  static const std::vector<std::string> cols{"scenario", "variant", "n",      "M",      "mse",
                                             "error_rate", "bias_intercept", "bias_K1", "bias_Q", "value"};
  return cols;
}

struct MetricsRow {
  int scenario = 0;
  std::string variant;
  int n = 0;
  int replications = 0;
  double mse = 0.0;
  double error_rate = 0.0;
  double bias_intercept = 0.0;
  double bias_k1 = 0.0;
  double bias_q = 0.0;
  std::optional<double> value;
};

inline std::string fixed6(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

inline std::vector<MetricsRow> metrics_rows(const sim::SimMetrics& m) {
  std::vector<MetricsRow> rows;
  for (const auto& v : m.variants) {
    rows.push_back({m.config.scenario, std::string(to_string(v.variant)), m.config.n, m.config.replications,
                    v.mse_blip, v.error_rate, v.abs_bias[0], v.abs_bias[1], v.abs_bias[2], v.value});
  }
  return rows;
}

inline void write_metrics_csv(std::ostream& out, const std::vector<MetricsRow>& rows) {
  const auto& cols = metrics_columns();
  for (std::size_t j = 0; j < cols.size(); ++j) out << (j ? "," : "") << cols[j];
  out << '\n';
  for (const auto& r : rows) {
    out << r.scenario << ',' << r.variant << ',' << r.n << ',' << r.replications << ',' << fixed6(r.mse) << ','
        << fixed6(r.error_rate) << ',' << fixed6(r.bias_intercept) << ',' << fixed6(r.bias_k1) << ','
        << fixed6(r.bias_q) << ',' << (r.value ? fixed6(*r.value) : "NA") << '\n';
  }
}

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string field;
  std::istringstream in(line);
  while (std::getline(in, field, ',')) out.push_back(field);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

inline double parse_number(const std::string& s, const std::string& where) {
  try {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw std::runtime_error(where + ": cannot parse number '" + s + "'");
  }
}

}  // namespace detail

inline std::vector<MetricsRow> read_metrics_csv(std::istream& in, const std::string& name) {
  std::string line;
  if (!std::getline(in, line) || line.empty()) throw std::runtime_error(name + ": empty metrics file");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (detail::split_csv_line(line) != metrics_columns()) {
    throw std::runtime_error(name + ": schema mismatch (expected header '" + [] {
      std::string h;
      for (const auto& c : metrics_columns()) h += (h.empty() ? "" : ",") + c;
      return h;
    }() + "')");
  }
  std::vector<MetricsRow> rows;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto f = detail::split_csv_line(line);
    const std::string where = name + ":" + std::to_string(lineno);
    if (f.size() != metrics_columns().size()) {
      throw std::runtime_error(where + ": schema mismatch (expected " + std::to_string(metrics_columns().size()) +
                               " fields, found " + std::to_string(f.size()) + ")");
    }
    MetricsRow r;
    r.scenario = static_cast<int>(detail::parse_number(f[0], where));
    r.variant = f[1];
    r.n = static_cast<int>(detail::parse_number(f[2], where));
    r.replications = static_cast<int>(detail::parse_number(f[3], where));
    r.mse = detail::parse_number(f[4], where);
    r.error_rate = detail::parse_number(f[5], where);
    r.bias_intercept = detail::parse_number(f[6], where);
    r.bias_k1 = detail::parse_number(f[7], where);
    r.bias_q = detail::parse_number(f[8], where);
    if (f[9] != "NA") r.value = detail::parse_number(f[9], where);
    rows.push_back(std::move(r));
  }
  if (rows.empty()) throw std::runtime_error(name + ": metrics file has a header but no rows");
  return rows;
}

inline std::vector<MetricsRow> load_metrics_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open metrics file '" + path + "'");
  return read_metrics_csv(in, path);
}

namespace detail {

inline std::string pad(const std::string& s, std::size_t width, bool right) {
  if (s.size() >= width) return s;
  return right ? std::string(width - s.size(), ' ') + s : s + std::string(width - s.size(), ' ');
}

inline int variant_rank(const std::string& name) {
  for (std::size_t i = 0; i < kAllVariants.size(); ++i) {
    if (to_string(kAllVariants[i]) == name) return static_cast<int>(i);
  }
  return static_cast<int>(kAllVariants.size());
}

}  // namespace detail

// Markdown tables, one per (scenario, n), rows keyed by variant. Rows from
// later inputs replace earlier ones with the same key.
inline std::string render_report(const std::vector<std::vector<MetricsRow>>& inputs) {
  std::map<std::pair<int, int>, std::map<std::pair<int, std::string>, MetricsRow>> groups;
  for (const auto& rows : inputs) {
    for (const auto& r : rows) groups[{r.scenario, r.n}][{detail::variant_rank(r.variant), r.variant}] = r;
  }

  const std::vector<std::string> header{"variant", "M", "mse", "error_rate", "bias_intercept", "bias_K1", "bias_Q",
                                        "value"};
  std::ostringstream out;
  bool first = true;
  for (const auto& [key, rows] : groups) {
    if (!first) out << '\n';
    first = false;
    out << "## Scenario " << key.first << ", n = " << key.second << "\n\n";
    std::vector<std::vector<std::string>> cells;
    for (const auto& [_, r] : rows) {
      cells.push_back({r.variant, std::to_string(r.replications), fixed6(r.mse), fixed6(r.error_rate),
                       fixed6(r.bias_intercept), fixed6(r.bias_k1), fixed6(r.bias_q),
                       r.value ? fixed6(*r.value) : "NA"});
    }
    std::vector<std::size_t> width(header.size());
    for (std::size_t j = 0; j < header.size(); ++j) {
      width[j] = header[j].size();
      for (const auto& row : cells) width[j] = std::max(width[j], row[j].size());
    }
    out << '|';
    for (std::size_t j = 0; j < header.size(); ++j) out << ' ' << detail::pad(header[j], width[j], j > 0) << " |";
    out << "\n|";
    for (std::size_t j = 0; j < header.size(); ++j) {
      out << ' ' << std::string(width[j] - (j ? 1 : 0), '-') << (j ? ":" : "") << " |";
    }
    out << '\n';
    for (const auto& row : cells) {
      out << '|';
      for (std::size_t j = 0; j < header.size(); ++j) out << ' ' << detail::pad(row[j], width[j], j > 0) << " |";
      out << '\n';
    }
  }
  return out.str();
}

// Plain-text summary with the diagnostics that do not fit the metrics CSV.
inline void write_summary(std::ostream& out, const sim::SimMetrics& m) {
  const auto& c = m.config;
  out << "scenario " << c.scenario << "  gamma (A, Z, K2, K3) = (" << fixed6(c.gamma[0]) << ", " << fixed6(c.gamma[1])
      << ", " << fixed6(c.gamma[2]) << ", " << fixed6(c.gamma[3]) << ")\n";
  out << "n = " << c.n << "  M = " << c.replications << "  seed = " << c.seed << "\n";
  out << "events per subject: mean " << fixed6(m.events_mean) << ", IQR (" << fixed6(m.events_q25) << ", "
      << fixed6(m.events_q75) << ")\n";
  out << "clamped event probabilities: " << m.clamped_draws << "\n";
  if (m.optimal_value) out << "value under the true rule: " << fixed6(*m.optimal_value) << "\n";
  out << "\n";
  for (const auto& v : m.variants) {
    out << to_string(v.variant) << ": fitted " << v.fitted << ", failed " << v.failed << "\n";
    out << "  mse " << fixed6(v.mse_blip) << " (bias^2 " << fixed6(v.mse_bias_sq) << ", variance "
        << fixed6(v.mse_variance) << ")\n";
    out << "  error rate " << fixed6(v.error_rate) << ", mean |blip error| " << fixed6(v.blip_abs_bias) << "\n";
    out << "  mean psi (intercept, Q, K1) = (" << fixed6(v.mean_psi[0]) << ", " << fixed6(v.mean_psi[1]) << ", "
        << fixed6(v.mean_psi[2]) << ")\n";
    out << "  value " << (v.value ? fixed6(*v.value) : "NA") << "\n";
  }
}

}  // namespace dwols::report
