#pragma once

// Property suites comparing the estimators with independent oracles. Each
// returns the worst discrepancy seen and whether it is within tolerance; the
// unit tests and the acceptance runner both call them.

#include <algorithm>
#include <cmath>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "dwols/dwols.hpp"
#include "dwols/numerics.hpp"
#include "dwols/propensity.hpp"
#include "dwols/utility.hpp"
#include "dwols/visits.hpp"
#include "support.hpp"

namespace testing_support {

struct SuiteOutcome {
  bool passed = true;
  double worst = 0.0;
  std::string detail;
};

// solve_wls against explicit normal equations on random well-conditioned
// problems, to 1e-8 relative.
inline SuiteOutcome wls_oracle_suite(int problems = 100, std::uint64_t seed = 11) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> z(0.0, 1.0);
  std::uniform_real_distribution<double> u(0.1, 3.0);
  std::uniform_int_distribution<int> pick_p(1, 6);
  SuiteOutcome out;
  for (int k = 0; k < problems; ++k) {
    const int p = pick_p(rng);
    const int n = 10 * p + 20;
    Dense x(n, std::vector<double>(p));
    std::vector<double> y(n), w(n);
    dwols::Matrix xm(n, p);
    dwols::Vector ym(n), wm(n);
    for (int i = 0; i < n; ++i) {
      for (int j = 0; j < p; ++j) x[i][j] = xm(i, j) = (j == 0 ? 1.0 : z(rng));
      y[i] = ym[i] = z(rng) * 2.0 + x[i][p - 1];
      w[i] = wm[i] = u(rng);
    }
    const auto oracle = normal_equations(x, y, w);
    const auto sol = dwols::solve_wls(xm, ym, wm);
    for (int j = 0; j < p; ++j) {
      const double diff = std::abs(sol.coefficients[j] - oracle[j]) / std::max(1.0, std::abs(oracle[j]));
      out.worst = std::max(out.worst, diff);
    }
  }
  out.passed = out.worst <= 1e-8;
  out.detail = "max relative difference " + sci(out.worst) + " over " + std::to_string(problems) + " problems";
  return out;
}

// fit_andersen_gill against a 1e-4 grid search of a brute-force Breslow
// partial likelihood, to 1e-3.
inline SuiteOutcome andersen_gill_grid_suite(int datasets = 50, std::uint64_t seed = 23) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> pick_gamma(-1.0, 1.0);
  SuiteOutcome out;
  int used = 0;
  while (used < datasets) {
    const auto toy = random_toy_visits(rng, 6, pick_gamma(rng));
    int events = 0;
    for (const int e : toy.event) events += e;
    if (events < 3) continue;
    const auto data = to_dataset(toy);
    double fitted = 0.0;
    try {
      fitted = dwols::fit_andersen_gill(data, dwols::terms({"X"})).gamma[0];
    } catch (const dwols::MonotoneLikelihoodError&) {
      continue;  // no finite maximizer; the grid cannot check it either
    }
    const double grid = grid_argmax([&](double g) { return breslow_loglik(toy, g); }, -6.0, 6.0);
    if (std::abs(grid) > 5.9) continue;
    out.worst = std::max(out.worst, std::abs(fitted - grid));
    ++used;
  }
  out.passed = out.worst <= 1e-3;
  out.detail = "max |gamma - grid argmax| " + sci(out.worst) + " over " + std::to_string(datasets) +
               " datasets";
  return out;
}

// 2x2 table with cell counts (A=1,X=1)=30, (A=0,X=1)=10, (A=1,X=0)=10,
// (A=0,X=0)=30: the slope is the log odds ratio log 9.
inline SuiteOutcome logistic_two_by_two_suite() {
  std::vector<std::vector<double>> cov;
  std::vector<int> a;
  const auto add = [&](int treat, double x, int count) {
    for (int i = 0; i < count; ++i) {
      cov.push_back({x});
      a.push_back(treat);
    }
  };
  add(1, 1.0, 30);
  add(0, 1.0, 10);
  add(1, 0.0, 10);
  add(0, 0.0, 30);
  const auto data = cross_sectional({"X"}, cov, a, std::vector<double>(a.size(), 0.0));
  const auto fit = dwols::fit_logistic(dwols::analysis_rows(data), dwols::terms({"X"}));
  SuiteOutcome out;
  out.worst = std::max(std::abs(fit.kappa[1] - std::log(9.0)), std::abs(fit.kappa[0] - std::log(1.0 / 3.0)));
  out.passed = out.worst <= 1e-6;
  out.detail = "slope " + sci(fit.kappa[1]) + " vs log 9 = " + sci(std::log(9.0));
  return out;
}

// Analytic gradients of both likelihoods against central differences at random
// points, to 1e-5 relative.
inline SuiteOutcome finite_difference_suite(int points = 20, std::uint64_t seed = 31) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> z(0.0, 1.0);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  SuiteOutcome out;
  const auto record = [&](double analytic, double numeric) {
    const double scale = std::max({std::abs(analytic), std::abs(numeric), 1.0});
    out.worst = std::max(out.worst, std::abs(analytic - numeric) / scale);
  };

  for (int k = 0; k < points; ++k) {
    // Logistic log-likelihood.
    const int n = 60, p = 3;
    dwols::Matrix x(n, p);
    dwols::Vector a(n);
    for (int i = 0; i < n; ++i) {
      x(i, 0) = 1.0;
      for (int j = 1; j < p; ++j) x(i, j) = z(rng);
      a[i] = u(rng) < 0.5 ? 1.0 : 0.0;
    }
    dwols::Vector kappa(p);
    for (int j = 0; j < p; ++j) kappa[j] = 0.5 * z(rng);
    const auto ev = dwols::logistic_loglik(x, a, kappa);
    const auto f = [&](const dwols::Vector& kk) { return dwols::logistic_loglik(x, a, kk).value; };
    for (int j = 0; j < p; ++j) record(ev.gradient[j], central_difference(f, kappa, j, 1e-5));

    // Breslow partial likelihood with two covariates.
    std::vector<PersonTimeRow> rows;
    for (int s = 0; s < 8; ++s) {
      for (int t = 0; t < 6; ++t) {
        PersonTimeRow r;
        r.subject_id = "v" + std::to_string(10 + s);
        r.t_start = t * 0.5;
        r.t_stop = (t + 1) * 0.5;
        r.event = u(rng) < 0.3;
        r.at_risk = true;
        if (r.event) r.outcome = 0.0;
        r.covariates = {z(rng), u(rng) < 0.5 ? 1.0 : 0.0};
        rows.push_back(std::move(r));
      }
    }
    rows.front().event = true;
    rows.front().outcome = 0.0;
    const LongitudinalDataset data({"X1", "X2"}, std::move(rows));
    const dwols::AndersenGillLikelihood lik(data, dwols::terms({"X1", "X2"}));
    dwols::Vector g(2);
    g << 0.7 * z(rng), 0.7 * z(rng);
    const auto ag = lik(g);
    const auto fl = [&](const dwols::Vector& gg) { return lik(gg).value; };
    for (int j = 0; j < 2; ++j) record(ag.gradient[j], central_difference(fl, g, j, 1e-5));
  }
  out.passed = out.worst <= 1e-5;
  out.detail = "max relative gradient discrepancy " + sci(out.worst);
  return out;
}

// fit_dwols coefficients under weights w and c*w for random positive c, to
// 1e-8 relative.
inline SuiteOutcome weight_scale_suite(int problems = 25, std::uint64_t seed = 41) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> z(0.0, 1.0);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  SuiteOutcome out;
  dwols::ModelSpec spec;
  spec.treatment_free = dwols::terms({"K1", "K2"});
  spec.blip = {"Q", "K1"};
  for (int k = 0; k < problems; ++k) {
    const int n = 80;
    std::vector<std::vector<double>> cov;
    std::vector<int> a;
    std::vector<double> y;
    for (int i = 0; i < n; ++i) {
      const double k1 = z(rng), k2 = z(rng), q = u(rng) < 0.5 ? 1.0 : 0.0;
      const int t = u(rng) < 0.5 ? 1 : 0;
      cov.push_back({k1, k2, q});
      a.push_back(t);
      y.push_back(1.0 + k1 - k2 + t * (-2.0 + 0.5 * q - k1) + z(rng));
    }
    const auto rows = dwols::analysis_rows(cross_sectional({"K1", "K2", "Q"}, cov, a, y));
    dwols::Vector w(n);
    for (int i = 0; i < n; ++i) w[i] = 0.2 + 3.0 * u(rng);
    const double c = std::exp(6.0 * (u(rng) - 0.5));
    const auto f1 = dwols::fit_dwols(rows, w, spec);
    const auto f2 = dwols::fit_dwols(rows, (c * w).eval(), spec);
    for (Eigen::Index j = 0; j < f1.psi.size(); ++j) {
      out.worst = std::max(out.worst, std::abs(f1.psi[j] - f2.psi[j]) / std::max(1.0, std::abs(f1.psi[j])));
    }
    for (Eigen::Index j = 0; j < f1.beta.size(); ++j) {
      out.worst = std::max(out.worst, std::abs(f1.beta[j] - f2.beta[j]) / std::max(1.0, std::abs(f1.beta[j])));
    }
  }
  out.passed = out.worst <= 1e-8;
  out.detail = "max relative change " + sci(out.worst);
  return out;
}

// bmi_utility over a 0.5 grid of the valid box, restricted to pairs with at
// most a 50% change; every utility must lie in [45, 150].
inline SuiteOutcome utility_bound_scan() {
  SuiteOutcome out;
  double lo = 1e300, hi = -1e300;
  int points = 0;
  for (double b0 = dwols::kBmiValidMin; b0 <= dwols::kBmiValidMax + 1e-9; b0 += 0.5) {
    for (double bt = dwols::kBmiValidMin; bt <= dwols::kBmiValidMax + 1e-9; bt += 0.5) {
      if (std::abs(100.0 * (bt - b0) / b0) > 50.0) continue;
      const auto u = dwols::bmi_utility(b0, bt);
      if (!u) {
        out.passed = false;
        out.detail = "missing utility inside the valid box";
        return out;
      }
      lo = std::min(lo, *u);
      hi = std::max(hi, *u);
      ++points;
    }
  }
  out.passed = lo >= 45.0 && hi <= 150.0;
  out.worst = std::max(45.0 - lo, hi - 150.0);
  std::ostringstream d;
  d << points << " grid points, range [" << lo << ", " << hi << "]";
  out.detail = d.str();
  return out;
}

}  // namespace testing_support
