#pragma once

#include <cstddef>
#include <cstdio>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "dwols/data.hpp"
#include "dwols/model_spec.hpp"
#include "dwols/numerics.hpp"

namespace dwols {

using Covariates = std::map<std::string, double, std::less<>>;

struct Design {
  Matrix treatment_free;  // [1, transformed treatment-free terms]
  Matrix blip;            // A * [1, blip terms]
  Vector response;
  std::vector<std::string> treatment_free_names;
  std::vector<std::string> blip_names;

  Matrix stacked() const {
    Matrix x(treatment_free.rows(), treatment_free.cols() + blip.cols());
    x << treatment_free, blip;
    return x;
  }

  std::vector<std::string> stacked_names() const {
    auto names = treatment_free_names;
    names.insert(names.end(), blip_names.begin(), blip_names.end());
    return names;
  }
};

inline Design build_design(const AnalysisRows& rows, const ModelSpec& spec) {
  if (rows.empty()) throw std::invalid_argument("build_design: no analysis rows");
  spec.validate();
  const auto tf = resolve(rows.covariate_names, spec.treatment_free);
  std::vector<ResolvedTerm> bl;
  for (const auto& name : spec.blip) {
    if (name == "A") throw std::invalid_argument("blip term 'A' is implicit (the blip intercept)");
    bl.push_back(resolve(rows.covariate_names, Term{name, Transform::identity}));
  }

  const auto n = static_cast<Eigen::Index>(rows.size());
  Design d;
  d.treatment_free.resize(n, static_cast<Eigen::Index>(tf.size() + 1));
  d.blip.resize(n, static_cast<Eigen::Index>(bl.size() + 1));
  d.response.resize(n);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto& r = rows[i];
    const auto ii = static_cast<Eigen::Index>(i);
    if (!r.event || !r.outcome) {
      throw DataError("build_design: row without an observed outcome passed as an analysis row", i + 1);
    }
    d.treatment_free(ii, 0) = 1.0;
    for (std::size_t j = 0; j < tf.size(); ++j) d.treatment_free(ii, static_cast<Eigen::Index>(j + 1)) = tf[j](r);
    const double a = r.treatment;
    d.blip(ii, 0) = a;
    for (std::size_t j = 0; j < bl.size(); ++j) d.blip(ii, static_cast<Eigen::Index>(j + 1)) = a * bl[j](r);
    d.response[ii] = *r.outcome;
  }
  d.treatment_free_names.push_back("(Intercept)");
  for (const auto& t : spec.treatment_free) d.treatment_free_names.push_back(t.label());
  d.blip_names.push_back("A");
  for (const auto& b : spec.blip) d.blip_names.push_back("A:" + b);
  return d;
}

struct WeightSummary {
  double min = 1.0;
  double mean = 1.0;
  double max = 1.0;
};

inline WeightSummary summarize(const Vector& w) {
  if (w.size() == 0) return {};
  return {w.minCoeff(), w.mean(), w.maxCoeff()};
}

// Treatment-free coefficients beta and blip coefficients psi (blip intercept
// first, then one per blip term in spec order).
struct BlipFit {
  Vector beta;
  Vector psi;
  std::vector<std::string> beta_names;
  std::vector<std::string> psi_names;
  ModelSpec spec;
  WeightSummary weight_summary;

  double blip(const Covariates& x) const {
    double value = psi[0];
    for (std::size_t j = 0; j < spec.blip.size(); ++j) {
      const auto it = x.find(spec.blip[j]);
      if (it == x.end()) throw std::invalid_argument("blip: covariate '" + spec.blip[j] + "' not supplied");
      value += psi[static_cast<Eigen::Index>(j + 1)] * it->second;
    }
    return value;
  }

  // Treat (1) iff the blip is non-negative.
  int decide(const Covariates& x) const { return blip(x) >= 0.0 ? 1 : 0; }
};

inline double blip(const BlipFit& fit, const Covariates& x) { return fit.blip(x); }
inline int decide(const BlipFit& fit, const Covariates& x) { return fit.decide(x); }

// Joint weighted least squares of Y on [X_beta, A X_psi]; the normal equations
// of this fit are exactly the doubly-weighted estimating equations.
inline BlipFit fit_dwols(const AnalysisRows& rows, const Vector& weights, const ModelSpec& spec) {
  if (weights.size() != static_cast<Eigen::Index>(rows.size())) {
    throw std::invalid_argument("fit_dwols: " + std::to_string(weights.size()) + " weights for " +
                                std::to_string(rows.size()) + " rows");
  }
  for (Eigen::Index i = 0; i < weights.size(); ++i) {
    if (!(weights[i] > 0.0) || !std::isfinite(weights[i])) {
      throw std::invalid_argument("fit_dwols: weight " + std::to_string(i + 1) + " is not strictly positive");
    }
  }
  const Design d = build_design(rows, spec);
  const auto names = d.stacked_names();
  const WlsSolution sol = solve_wls(d.stacked(), d.response, weights, names);

  BlipFit fit;
  fit.spec = spec;
  fit.beta = sol.coefficients.head(d.treatment_free.cols());
  fit.psi = sol.coefficients.tail(d.blip.cols());
  fit.beta_names = d.treatment_free_names;
  fit.psi_names = d.blip_names;
  fit.weight_summary = summarize(weights);
  return fit;
}

// Human-readable rule, e.g. "Treat with A=1 if -2.000 + 0.500*Q - 1.000*K1 >= 0".
inline std::string describe_rule(const BlipFit& fit, const std::string& arm = "A=1", int precision = 3) {
  const auto num = [&](double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.*f", precision, v);
    return std::string(buf);
  };
  std::string s = "Treat with " + arm + " if " + num(fit.psi[0]);
  for (std::size_t j = 0; j < fit.spec.blip.size(); ++j) {
    const double c = fit.psi[static_cast<Eigen::Index>(j + 1)];
    s += (c < 0 ? " - " : " + ") + num(std::abs(c)) + "*" + fit.spec.blip[j];
  }
  return s + " >= 0";
}

}  // namespace dwols
