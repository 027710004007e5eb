#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

#include "dwols/data.hpp"
#include "dwols/model_spec.hpp"
#include "dwols/numerics.hpp"

namespace dwols {

inline double expit(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

inline double logit(double p) { return std::log(p / (1.0 - p)); }

class PositivityError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class SeparationError : public std::runtime_error {
 public:
  SeparationError() : std::runtime_error("perfect separation; propensity not identifiable") {}
};

// Logistic treatment model P(A=1 | x) = expit(kappa'x), intercept first.
struct PropensityFit {
  Vector kappa;
  std::vector<std::string> term_names;
  TermList terms;
  double marginal_p1 = 0.5;
  NewtonResult newton;

  // Fitted P(A=1) for each row.
  Vector probabilities(const AnalysisRows& rows) const;
};

namespace detail {

inline Matrix treatment_design(const AnalysisRows& rows, const TermList& terms) {
  const auto resolved = resolve(rows.covariate_names, terms);
  Matrix x(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(terms.size() + 1));
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto ii = static_cast<Eigen::Index>(i);
    x(ii, 0) = 1.0;
    for (std::size_t j = 0; j < resolved.size(); ++j) x(ii, static_cast<Eigen::Index>(j + 1)) = resolved[j](rows[i]);
  }
  return x;
}

inline std::vector<std::string> with_intercept(const TermList& terms) {
  std::vector<std::string> names{"(Intercept)"};
  for (const auto& t : terms) names.push_back(t.label());
  return names;
}

}  // namespace detail

// Bernoulli log-likelihood of A given the design, with gradient and Hessian.
inline Evaluation logistic_loglik(const Matrix& x, const Vector& a, const Vector& kappa) {
  const Vector eta = x * kappa;
  Evaluation e;
  e.value = 0.0;
  Vector resid(eta.size());
  Vector curvature(eta.size());
  for (Eigen::Index i = 0; i < eta.size(); ++i) {
    // log(1 + exp(eta)) computed without overflow
    const double softplus = eta[i] > 0.0 ? eta[i] + std::log1p(std::exp(-eta[i])) : std::log1p(std::exp(eta[i]));
    e.value += a[i] * eta[i] - softplus;
    const double p = expit(eta[i]);
    resid[i] = a[i] - p;
    curvature[i] = p * (1.0 - p);
  }
  e.gradient = x.transpose() * resid;
  e.hessian = -(x.transpose() * curvature.asDiagonal() * x);
  return e;
}

// Unweighted maximum-likelihood logistic fit of A on [1, terms] over the rows.
inline PropensityFit fit_logistic(const AnalysisRows& rows, const TermList& terms, const NewtonOptions& options = {}) {
  std::size_t treated = 0;
  for (const auto& r : rows.rows) treated += static_cast<std::size_t>(r.treatment);
  if (treated == 0 || treated == rows.size()) {
    throw std::invalid_argument("fit_logistic: all analysis rows are in one treatment arm");
  }

  PropensityFit fit;
  fit.terms = terms;
  fit.term_names = detail::with_intercept(terms);
  fit.marginal_p1 = static_cast<double>(treated) / static_cast<double>(rows.size());

  const Matrix x = detail::treatment_design(rows, terms);
  Vector a(x.rows());
  for (std::size_t i = 0; i < rows.size(); ++i) a[static_cast<Eigen::Index>(i)] = rows[i].treatment;

  // Full-rank check on the unweighted design before iterating.
  {
    const Vector ones = Vector::Ones(x.rows());
    (void)solve_wls(x, a, ones, fit.term_names);
  }

  Vector init = Vector::Zero(x.cols());
  init[0] = logit(fit.marginal_p1);
  try {
    fit.newton = newton_maximize([&](const Vector& k) { return logistic_loglik(x, a, k); }, init, options);
  } catch (const DivergenceError&) {
    throw SeparationError();
  }
  // Separated data drive the linear predictor towards +-infinity; the score
  // vanishes numerically before the parameters blow up.
  const double max_eta = (x * fit.newton.argmax).cwiseAbs().maxCoeff();
  if (max_eta > 30.0) throw SeparationError();
  fit.kappa = fit.newton.argmax;
  return fit;
}

inline Vector PropensityFit::probabilities(const AnalysisRows& rows) const {
  const Vector eta = detail::treatment_design(rows, terms) * kappa;
  return eta.unaryExpr([](double v) { return expit(v); });
}

struct IptOptions {
  // Optional symmetric percentile truncation, e.g. 0.01 clips at the 1st and
  // 99th percentiles. Zero disables truncation.
  double truncation = 0.0;
};

// Stabilized inverse-probability-of-treatment weights:
//   A = 1: P(A=1) / p_hat,   A = 0: P(A=0) / (1 - p_hat).
inline Vector ipt_weights(const PropensityFit& fit, const AnalysisRows& rows, const IptOptions& options = {}) {
  const Vector p = fit.probabilities(rows);
  Vector w(p.size());
  for (Eigen::Index i = 0; i < p.size(); ++i) {
    const double pi = p[i];
    if (!(pi > 0.0 && pi < 1.0) || pi < 1e-12 || pi > 1.0 - 1e-12) {
      throw PositivityError("fitted propensity numerically 0 or 1 at analysis row " + std::to_string(i + 1) +
                            "; see check_positivity");
    }
    w[i] = rows[static_cast<std::size_t>(i)].treatment == 1 ? fit.marginal_p1 / pi
                                                            : (1.0 - fit.marginal_p1) / (1.0 - pi);
  }
  if (options.truncation > 0.0 && w.size() > 0) {
    if (!(options.truncation < 0.5)) throw std::invalid_argument("ipt_weights: truncation must be below 0.5");
    std::vector<double> sorted(w.data(), w.data() + w.size());
    std::sort(sorted.begin(), sorted.end());
    const auto at = [&](double q) {
      const auto k = static_cast<std::size_t>(std::floor(q * static_cast<double>(sorted.size() - 1)));
      return sorted[std::min(k, sorted.size() - 1)];
    };
    const double lo = at(options.truncation);
    const double hi = at(1.0 - options.truncation);
    w = w.cwiseMax(lo).cwiseMin(hi);
  }
  return w;
}

}  // namespace dwols
