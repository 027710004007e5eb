#pragma once

#include <algorithm>
#include <charconv>
#include <cstddef>
#include <fstream>
#include <limits>
#include <map>
#include <numeric>
#include <optional>
#include <ostream>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <system_error>
#include <utility>
#include <vector>

namespace dwols {

// A validation or parse failure. `row` is 1-based: a data line number for
// CSV input (the header is line 1), otherwise the position of the offending
// row in the supplied row list. Zero means "not tied to a row".
class DataError : public std::runtime_error {
 public:
  DataError(const std::string& what, std::size_t row = 0)
      : std::runtime_error(row ? "row " + std::to_string(row) + ": " + what : what), row_(row) {}

  std::size_t row() const noexcept { return row_; }

 private:
  std::size_t row_;
};

// One covariate-constant interval (t_start, t_stop] of one subject. The event
// flag marks an outcome observation at t_stop. Covariate values are aligned
// with the owning dataset's covariate names.
struct PersonTimeRow {
  std::string subject_id;
  double t_start = 0.0;
  double t_stop = 0.0;
  bool event = false;
  bool at_risk = true;
  int treatment = 0;
  std::optional<double> outcome;
  std::vector<double> covariates;

  friend bool operator==(const PersonTimeRow&, const PersonTimeRow&) = default;
};

// Rows where the outcome is observed, with the covariate names needed to
// interpret them.
struct AnalysisRows {
  std::vector<std::string> covariate_names;
  std::vector<PersonTimeRow> rows;

  std::size_t size() const noexcept { return rows.size(); }
  bool empty() const noexcept { return rows.empty(); }
  const PersonTimeRow& operator[](std::size_t i) const { return rows[i]; }

  std::optional<std::size_t> covariate_index(std::string_view name) const {
    const auto it = std::find(covariate_names.begin(), covariate_names.end(), name);
    if (it == covariate_names.end()) return std::nullopt;
    return static_cast<std::size_t>(it - covariate_names.begin());
  }
};

// Long-format counting-process data. Immutable after construction; the
// constructor sorts rows by (subject_id, t_start) and enforces:
//   t_start < t_stop, outcome present iff event, treatment in {0,1},
//   per-subject intervals non-overlapping, t_stop <= tau and <= C_i.
class LongitudinalDataset {
 public:
  struct SubjectRange {
    std::string id;
    std::size_t begin = 0;
    std::size_t end = 0;
  };

  LongitudinalDataset() = default;

  // `tau` defaults to the largest t_stop; `censoring` defaults to each
  // subject's last t_stop.
  LongitudinalDataset(std::vector<std::string> covariate_names, std::vector<PersonTimeRow> rows,
                      std::optional<double> tau = std::nullopt,
                      std::map<std::string, double> censoring = {})
      : covariate_names_(std::move(covariate_names)) {
    validate_names();
    for (std::size_t i = 0; i < rows.size(); ++i) validate_row(rows[i], i + 1);

    std::vector<std::size_t> order(rows.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    const auto less = [&](std::size_t a, std::size_t b) {
      const auto& ra = rows[a];
      const auto& rb = rows[b];
      if (ra.subject_id != rb.subject_id) return ra.subject_id < rb.subject_id;
      return ra.t_start < rb.t_start;
    };
    if (!std::is_sorted(order.begin(), order.end(), less)) std::stable_sort(order.begin(), order.end(), less);

    double max_stop = 0.0;
    for (const auto& r : rows) max_stop = std::max(max_stop, r.t_stop);
    tau_ = tau.value_or(max_stop);

    rows_.reserve(rows.size());
    for (std::size_t k = 0; k < order.size(); ++k) {
      const std::size_t src = order[k];
      auto& row = rows[src];
      if (row.t_stop > tau_) {
        throw DataError("t_stop " + std::to_string(row.t_stop) + " exceeds tau " + std::to_string(tau_), src + 1);
      }
      if (!rows_.empty() && rows_.back().subject_id == row.subject_id) {
        if (row.t_start < rows_.back().t_stop) {
          throw DataError("interval (" + std::to_string(row.t_start) + ", " + std::to_string(row.t_stop) +
                              "] overlaps the previous interval of subject '" + row.subject_id + "'",
                          src + 1);
        }
      } else {
        subjects_.push_back({row.subject_id, rows_.size(), rows_.size()});
      }
      rows_.push_back(std::move(row));
      subjects_.back().end = rows_.size();
      source_position_.push_back(src + 1);
    }

    for (const auto& s : subjects_) {
      const double last_stop = rows_[s.end - 1].t_stop;
      const auto it = censoring.find(s.id);
      const double c = it == censoring.end() ? last_stop : it->second;
      if (last_stop > c) {
        throw DataError("subject '" + s.id + "' has follow-up past its censoring time " + std::to_string(c),
                        source_position_[s.end - 1]);
      }
      censoring_.emplace(s.id, c);
    }
  }

  const std::vector<PersonTimeRow>& rows() const noexcept { return rows_; }
  const std::vector<std::string>& covariate_names() const noexcept { return covariate_names_; }
  double tau() const noexcept { return tau_; }
  std::size_t size() const noexcept { return rows_.size(); }
  std::size_t subject_count() const noexcept { return subjects_.size(); }
  const std::vector<SubjectRange>& subjects() const noexcept { return subjects_; }
  const std::map<std::string, double>& censoring() const noexcept { return censoring_; }

  std::span<const PersonTimeRow> subject_rows(std::string_view id) const {
    for (const auto& s : subjects_) {
      if (s.id == id) return std::span<const PersonTimeRow>(rows_).subspan(s.begin, s.end - s.begin);
    }
    throw std::out_of_range("unknown subject '" + std::string(id) + "'");
  }

  double censoring_time(const std::string& id) const {
    const auto it = censoring_.find(id);
    if (it == censoring_.end()) throw std::out_of_range("unknown subject '" + id + "'");
    return it->second;
  }

  std::optional<std::size_t> covariate_index(std::string_view name) const {
    const auto it = std::find(covariate_names_.begin(), covariate_names_.end(), name);
    if (it == covariate_names_.end()) return std::nullopt;
    return static_cast<std::size_t>(it - covariate_names_.begin());
  }

  friend bool operator==(const LongitudinalDataset& a, const LongitudinalDataset& b) {
    return a.covariate_names_ == b.covariate_names_ && a.rows_ == b.rows_ && a.tau_ == b.tau_ &&
           a.censoring_ == b.censoring_;
  }

 private:
  void validate_names() const {
    for (std::size_t i = 0; i < covariate_names_.size(); ++i) {
      if (covariate_names_[i].empty()) throw DataError("empty covariate name");
      if (covariate_names_[i] == "A") throw DataError("covariate name 'A' is reserved for the treatment");
      for (std::size_t j = 0; j < i; ++j) {
        if (covariate_names_[i] == covariate_names_[j]) {
          throw DataError("duplicate covariate name '" + covariate_names_[i] + "'");
        }
      }
    }
  }

  void validate_row(const PersonTimeRow& r, std::size_t position) const {
    if (!(r.t_start < r.t_stop)) {
      throw DataError("t_start " + std::to_string(r.t_start) + " is not before t_stop " + std::to_string(r.t_stop),
                      position);
    }
    if (r.t_start < 0.0) throw DataError("negative t_start", position);
    if (r.event != r.outcome.has_value()) {
      throw DataError(r.event ? "event row has a missing outcome" : "non-event row carries an outcome", position);
    }
    if (r.treatment != 0 && r.treatment != 1) throw DataError("treatment must be 0 or 1", position);
    if (r.covariates.size() != covariate_names_.size()) {
      throw DataError("row has " + std::to_string(r.covariates.size()) + " covariates, expected " +
                          std::to_string(covariate_names_.size()),
                      position);
    }
  }

  std::vector<std::string> covariate_names_;
  std::vector<PersonTimeRow> rows_;
  std::vector<std::size_t> source_position_;
  std::vector<SubjectRange> subjects_;
  std::map<std::string, double> censoring_;
  double tau_ = 0.0;
};

// Column names used to read and write the long-format CSV. Every column not
// named here is read as a covariate, in file order.
struct CsvSchema {
  std::string id = "id";
  std::string t_start = "tstart";
  std::string t_stop = "tstop";
  std::string event = "event";
  std::string at_risk = "atrisk";
  std::string treatment = "A";
  std::string outcome = "Y";
};

namespace detail {

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  if (s.size() >= 2 && s.front() == '"' && s.back() == '"') s = s.substr(1, s.size() - 2);
  return s;
}

inline std::vector<std::string_view> split_csv_line(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const auto comma = line.find(',', start);
    if (comma == std::string_view::npos) {
      out.push_back(trim(line.substr(start)));
      break;
    }
    out.push_back(trim(line.substr(start, comma - start)));
    start = comma + 1;
  }
  return out;
}

inline std::optional<double> parse_real(std::string_view s) {
  if (s.empty()) return std::nullopt;
  if (s.front() == '+') s.remove_prefix(1);
  double v = 0.0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) return std::nullopt;
  return v;
}

// Shortest text that parses back to exactly the same double.
inline std::string format_real(double v) {
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

}  // namespace detail

inline LongitudinalDataset read_csv(std::istream& in, const CsvSchema& schema = {}, std::optional<double> tau = {}) {
  std::string line;
  if (!std::getline(in, line)) throw DataError("empty input: header required");
  const auto header = detail::split_csv_line(line);

  const auto find_col = [&](const std::string& name) -> std::size_t {
    for (std::size_t j = 0; j < header.size(); ++j) {
      if (header[j] == name) return j;
    }
    throw DataError("missing column '" + name + "'", 1);
  };
  const std::size_t c_id = find_col(schema.id), c_start = find_col(schema.t_start), c_stop = find_col(schema.t_stop),
                    c_event = find_col(schema.event), c_risk = find_col(schema.at_risk),
                    c_a = find_col(schema.treatment), c_y = find_col(schema.outcome);
  const std::vector<std::size_t> fixed{c_id, c_start, c_stop, c_event, c_risk, c_a, c_y};

  std::vector<std::string> cov_names;
  std::vector<std::size_t> cov_cols;
  for (std::size_t j = 0; j < header.size(); ++j) {
    if (std::find(fixed.begin(), fixed.end(), j) == fixed.end()) {
      cov_names.emplace_back(header[j]);
      cov_cols.push_back(j);
    }
  }

  std::vector<PersonTimeRow> rows;
  std::vector<std::size_t> line_numbers;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (detail::trim(line).empty()) continue;
    const auto fields = detail::split_csv_line(line);
    if (fields.size() != header.size()) {
      throw DataError("expected " + std::to_string(header.size()) + " fields, found " + std::to_string(fields.size()),
                      line_no);
    }
    const auto real = [&](std::size_t col) {
      const auto v = detail::parse_real(fields[col]);
      if (!v) throw DataError("cannot parse '" + std::string(fields[col]) + "' in column '" +
                                  std::string(header[col]) + "'",
                              line_no);
      return *v;
    };
    const auto flag = [&](std::size_t col) {
      const double v = real(col);
      if (v != 0.0 && v != 1.0) {
        throw DataError("column '" + std::string(header[col]) + "' must be 0 or 1", line_no);
      }
      return v == 1.0;
    };

    PersonTimeRow r;
    r.subject_id = std::string(fields[c_id]);
    if (r.subject_id.empty()) throw DataError("empty subject id", line_no);
    r.t_start = real(c_start);
    r.t_stop = real(c_stop);
    r.event = flag(c_event);
    r.at_risk = flag(c_risk);
    r.treatment = flag(c_a) ? 1 : 0;
    if (!fields[c_y].empty()) r.outcome = real(c_y);
    r.covariates.reserve(cov_cols.size());
    for (const auto j : cov_cols) r.covariates.push_back(real(j));
    rows.push_back(std::move(r));
    line_numbers.push_back(line_no);
  }

  try {
    return LongitudinalDataset(std::move(cov_names), std::move(rows), tau);
  } catch (const DataError& e) {
    if (e.row() == 0 || e.row() > line_numbers.size()) throw;
    // Map the row position back to the file line.
    std::string msg = e.what();
    const auto colon = msg.find(": ");
    if (colon != std::string::npos) msg = msg.substr(colon + 2);
    throw DataError(msg, line_numbers[e.row() - 1]);
  }
}

inline LongitudinalDataset load_csv(const std::string& path, const CsvSchema& schema = {},
                                    std::optional<double> tau = {}) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open '" + path + "'");
  try {
    return read_csv(in, schema, tau);
  } catch (const DataError& e) {
    throw DataError(path + ": " + e.what());
  }
}

inline void write_csv(std::ostream& out, const LongitudinalDataset& data, const CsvSchema& schema = {}) {
  out << schema.id << ',' << schema.t_start << ',' << schema.t_stop << ',' << schema.event << ',' << schema.at_risk
      << ',' << schema.treatment << ',' << schema.outcome;
  for (const auto& name : data.covariate_names()) out << ',' << name;
  out << '\n';
  for (const auto& r : data.rows()) {
    out << r.subject_id << ',' << detail::format_real(r.t_start) << ',' << detail::format_real(r.t_stop) << ','
        << (r.event ? 1 : 0) << ',' << (r.at_risk ? 1 : 0) << ',' << r.treatment << ',';
    if (r.outcome) out << detail::format_real(*r.outcome);
    for (const double v : r.covariates) out << ',' << detail::format_real(v);
    out << '\n';
  }
}

inline void write_csv(const std::string& path, const LongitudinalDataset& data, const CsvSchema& schema = {}) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write '" + path + "'");
  write_csv(out, data, schema);
}

// Rows with an observed outcome, in dataset order.
inline AnalysisRows analysis_rows(const LongitudinalDataset& data) {
  AnalysisRows out;
  out.covariate_names = data.covariate_names();
  for (const auto& r : data.rows()) {
    if (r.event) out.rows.push_back(r);
  }
  return out;
}

struct PositivityReport {
  double min_propensity = 0.0;
  double max_propensity = 0.0;
  double lower_threshold = 0.01;
  double upper_threshold = 0.99;
  std::size_t below_lower = 0;
  std::size_t above_upper = 0;
  std::size_t treated = 0;
  std::size_t untreated = 0;

  bool flagged() const noexcept { return below_lower + above_upper > 0; }
};

// Summarizes P(A=1 | covariates) over the analysis rows; one propensity per row.
inline PositivityReport check_positivity(const AnalysisRows& rows, std::span<const double> propensities,
                                         double lower = 0.01, double upper = 0.99) {
  if (propensities.size() != rows.size()) {
    throw std::invalid_argument("check_positivity: " + std::to_string(propensities.size()) +
                                " propensities for " + std::to_string(rows.size()) + " analysis rows");
  }
  PositivityReport rep;
  rep.lower_threshold = lower;
  rep.upper_threshold = upper;
  rep.min_propensity = std::numeric_limits<double>::infinity();
  rep.max_propensity = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < propensities.size(); ++i) {
    const double p = propensities[i];
    rep.min_propensity = std::min(rep.min_propensity, p);
    rep.max_propensity = std::max(rep.max_propensity, p);
    if (p < lower) ++rep.below_lower;
    if (p > upper) ++rep.above_upper;
    (rows[i].treatment == 1 ? rep.treated : rep.untreated) += 1;
  }
  if (propensities.empty()) rep.min_propensity = rep.max_propensity = 0.0;
  return rep;
}

}  // namespace dwols
