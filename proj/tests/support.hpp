#pragma once

// Independent reference computations and small data builders shared by the
// unit tests and the acceptance runner. Nothing here calls the estimators it
// is meant to check.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <random>
#include <string>
#include <vector>

#include "dwols/data.hpp"

namespace testing_support {

using dwols::LongitudinalDataset;
using dwols::PersonTimeRow;

using Dense = std::vector<std::vector<double>>;

// Gaussian elimination with partial pivoting on a copy of (m | rhs).
inline std::vector<double> gauss_solve(Dense m, std::vector<double> rhs) {
  const std::size_t n = rhs.size();
  for (std::size_t col = 0; col < n; ++col) {
    std::size_t piv = col;
    for (std::size_t r = col + 1; r < n; ++r) {
      if (std::abs(m[r][col]) > std::abs(m[piv][col])) piv = r;
    }
    std::swap(m[col], m[piv]);
    std::swap(rhs[col], rhs[piv]);
    for (std::size_t r = col + 1; r < n; ++r) {
      const double f = m[r][col] / m[col][col];
      for (std::size_t c = col; c < n; ++c) m[r][c] -= f * m[col][c];
      rhs[r] -= f * rhs[col];
    }
  }
  std::vector<double> x(n);
  for (std::size_t i = n; i-- > 0;) {
    double s = rhs[i];
    for (std::size_t c = i + 1; c < n; ++c) s -= m[i][c] * x[c];
    x[i] = s / m[i][i];
  }
  return x;
}

// (X'WX)^{-1} X'Wy formed explicitly.
inline std::vector<double> normal_equations(const Dense& x, const std::vector<double>& y,
                                            const std::vector<double>& w) {
  const std::size_t p = x.front().size();
  Dense gram(p, std::vector<double>(p, 0.0));
  std::vector<double> rhs(p, 0.0);
  for (std::size_t i = 0; i < x.size(); ++i) {
    for (std::size_t a = 0; a < p; ++a) {
      rhs[a] += w[i] * x[i][a] * y[i];
      for (std::size_t b = 0; b < p; ++b) gram[a][b] += w[i] * x[i][a] * x[i][b];
    }
  }
  return gauss_solve(gram, rhs);
}

// One-covariate recurrent-event data in counting-process form.
struct ToyVisitData {
  std::vector<double> start, stop, x;
  std::vector<int> event, at_risk;
};

// Breslow log partial likelihood by brute force: for each event row, the risk
// set is every at-risk row whose interval contains the event time.
inline double breslow_loglik(const ToyVisitData& d, double gamma) {
  double ll = 0.0;
  for (std::size_t i = 0; i < d.x.size(); ++i) {
    if (!d.event[i] || !d.at_risk[i]) continue;
    const double t = d.stop[i];
    double denom = 0.0;
    for (std::size_t j = 0; j < d.x.size(); ++j) {
      if (d.at_risk[j] && d.start[j] < t && t <= d.stop[j]) denom += std::exp(gamma * d.x[j]);
    }
    ll += gamma * d.x[i] - std::log(denom);
  }
  return ll;
}

// Grid maximizer of a concave 1-D function: a 0.01 grid over [lo, hi], then a
// 1e-4 grid around the best coarse point.
template <class F>
double grid_argmax(F f, double lo, double hi) {
  double best = lo, best_val = f(lo);
  for (double g = lo; g <= hi + 1e-12; g += 0.01) {
    const double v = f(g);
    if (v > best_val) best_val = v, best = g;
  }
  const double c = best;
  for (int k = -200; k <= 200; ++k) {
    const double g = c + k * 1e-4;
    const double v = f(g);
    if (v > best_val) best_val = v, best = g;
  }
  return best;
}

// Random toy data: `subjects` subjects on a 0.1 grid over (0, 1], covariate
// redrawn per interval, visits more likely when x is large, and an at-risk gap
// for some subjects.
inline ToyVisitData random_toy_visits(std::mt19937_64& rng, int subjects, double true_gamma) {
  std::normal_distribution<double> z(0.0, 1.0);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  ToyVisitData d;
  for (int s = 0; s < subjects; ++s) {
    const bool gap = u(rng) < 0.3;
    for (int k = 0; k < 10; ++k) {
      const double x = z(rng);
      const bool risk = !(gap && (k == 4 || k == 5));
      const bool ev = risk && u(rng) < 0.25 * std::exp(true_gamma * x) / (1.0 + 0.25 * std::exp(true_gamma * x));
      d.start.push_back(k * 0.1);
      d.stop.push_back((k + 1) * 0.1);
      d.x.push_back(x);
      d.event.push_back(ev);
      d.at_risk.push_back(risk);
    }
  }
  return d;
}

inline LongitudinalDataset to_dataset(const ToyVisitData& d, int rows_per_subject = 10) {
  std::vector<PersonTimeRow> rows;
  for (std::size_t i = 0; i < d.x.size(); ++i) {
    PersonTimeRow r;
    r.subject_id = "s" + std::to_string(1000 + i / static_cast<std::size_t>(rows_per_subject));
    r.t_start = d.start[i];
    r.t_stop = d.stop[i];
    r.event = d.event[i];
    r.at_risk = d.at_risk[i];
    r.treatment = 0;
    if (r.event) r.outcome = 0.0;
    r.covariates = {d.x[i]};
    rows.push_back(std::move(r));
  }
  return LongitudinalDataset({"X"}, std::move(rows));
}

// One event row per subject on (0, 1]; convenient for outcome and treatment
// models, which only look at analysis rows.
inline LongitudinalDataset cross_sectional(const std::vector<std::string>& names,
                                           const std::vector<std::vector<double>>& covariates,
                                           const std::vector<int>& treatment, const std::vector<double>& outcome) {
  std::vector<PersonTimeRow> rows;
  for (std::size_t i = 0; i < treatment.size(); ++i) {
    PersonTimeRow r;
    r.subject_id = "p" + std::to_string(100000 + i);
    r.t_start = 0.0;
    r.t_stop = 1.0;
    r.event = true;
    r.at_risk = true;
    r.treatment = treatment[i];
    r.outcome = outcome[i];
    r.covariates = covariates[i];
    rows.push_back(std::move(r));
  }
  return LongitudinalDataset(names, std::move(rows));
}

// Central-difference derivative of f along coordinate j.
template <class F, class V>
double central_difference(F f, V x, std::size_t j, double h) {
  V up = x, down = x;
  up[static_cast<decltype(up.size())>(j)] += h;
  down[static_cast<decltype(up.size())>(j)] -= h;
  return (f(up) - f(down)) / (2.0 * h);
}

inline std::string sci(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3g", v);
  return buf;
}

inline bool relative_close(double a, double b, double rel, double abs_floor = 1e-8) {
  return std::abs(a - b) <= rel * std::max(std::abs(a), std::abs(b)) + abs_floor;
}

}  // namespace testing_support
