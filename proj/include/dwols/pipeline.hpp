#pragma once

#include <array>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "dwols/data.hpp"
#include "dwols/dwols.hpp"
#include "dwols/model_spec.hpp"
#include "dwols/propensity.hpp"
#include "dwols/visits.hpp"

namespace dwols {

// Estimator variants. DW1-DW4 use both weights (they differ only in their
// model specs), OLS none, IPT the treatment weight only and IIV the visit
// weight only.
enum class Variant { DW1, DW2, DW3, DW4, OLS, IPT, IIV };

inline constexpr std::array<Variant, 7> kAllVariants{Variant::DW1, Variant::DW2, Variant::DW3, Variant::DW4,
                                                     Variant::OLS, Variant::IPT, Variant::IIV};

inline std::string_view to_string(Variant v) {
  switch (v) {
    case Variant::DW1: return "DW1";
    case Variant::DW2: return "DW2";
    case Variant::DW3: return "DW3";
    case Variant::DW4: return "DW4";
    case Variant::OLS: return "OLS";
    case Variant::IPT: return "IPT";
    case Variant::IIV: return "IIV";
  }
  return "?";
}

inline Variant parse_variant(std::string_view s) {
  for (const auto v : kAllVariants) {
    if (to_string(v) == s) return v;
  }
  throw std::invalid_argument("unknown estimator variant '" + std::string(s) +
                              "' (expected DW1, DW2, DW3, DW4, OLS, IPT or IIV)");
}

struct Weighting {
  bool visit = false;
  bool treatment = false;
};

inline Weighting weighting(Variant v) {
  switch (v) {
    case Variant::OLS: return {false, false};
    case Variant::IPT: return {false, true};
    case Variant::IIV: return {true, false};
    default: return {true, true};
  }
}

struct PipelineOptions {
  NewtonOptions newton;
  IptOptions ipt;
  double positivity_lower = 0.01;
  double positivity_upper = 0.99;
};

struct PipelineFit {
  Variant variant = Variant::DW1;
  BlipFit blip;
  std::optional<VisitModelFit> visit;
  std::optional<PropensityFit> propensity;
  std::optional<PositivityReport> positivity;
  Vector weights;
};

// Fits several variants on one dataset, sharing nuisance-model fits whose
// term lists coincide. Not thread-safe; use one context per dataset and thread.
class PipelineContext {
 public:
  explicit PipelineContext(const LongitudinalDataset& data, PipelineOptions options = {})
      : data_(data), rows_(analysis_rows(data)), options_(std::move(options)) {}

  const AnalysisRows& rows() const noexcept { return rows_; }

  PipelineFit fit(const ModelSpec& spec, Variant variant) {
    if (rows_.empty()) throw std::invalid_argument("no analysis rows (no observed outcomes)");
    PipelineFit out;
    out.variant = variant;
    const Weighting w = weighting(variant);
    Vector weights = Vector::Ones(static_cast<Eigen::Index>(rows_.size()));

    if (w.visit) {
      const auto& visit = visit_fit(spec.visit);
      out.visit = visit.fit;
      weights = weights.cwiseProduct(visit.weights);
    }
    if (w.treatment) {
      const auto& prop = propensity_fit(spec.treatment);
      out.propensity = prop.fit;
      out.positivity = prop.report;
      weights = weights.cwiseProduct(prop.weights);
    }
    out.blip = fit_dwols(rows_, weights, spec);
    out.weights = std::move(weights);
    return out;
  }

 private:
  struct CachedVisit {
    VisitModelFit fit;
    Vector weights;
  };
  struct CachedPropensity {
    PropensityFit fit;
    PositivityReport report;
    Vector weights;
  };

  static std::string key(const TermList& terms) {
    std::string k;
    for (const auto& t : terms) k += t.label() + '\x1f';
    return k;
  }

  const CachedVisit& visit_fit(const TermList& terms) {
    const auto k = key(terms);
    if (auto it = visits_.find(k); it != visits_.end()) return it->second;
    CachedVisit c;
    c.fit = fit_andersen_gill(data_, terms, options_.newton);
    c.weights = iiv_weights(c.fit, rows_);
    return visits_.emplace(k, std::move(c)).first->second;
  }

  const CachedPropensity& propensity_fit(const TermList& terms) {
    const auto k = key(terms);
    if (auto it = propensities_.find(k); it != propensities_.end()) return it->second;
    CachedPropensity c;
    c.fit = fit_logistic(rows_, terms, options_.newton);
    if (!c.fit.newton.converged) {
      throw ConvergenceError("fit_logistic: no convergence after " + std::to_string(c.fit.newton.iterations) +
                             " iterations");
    }
    const Vector p = c.fit.probabilities(rows_);
    c.report = check_positivity(rows_, std::span<const double>(p.data(), static_cast<std::size_t>(p.size())),
                                options_.positivity_lower, options_.positivity_upper);
    c.weights = ipt_weights(c.fit, rows_, options_.ipt);
    return propensities_.emplace(k, std::move(c)).first->second;
  }

  const LongitudinalDataset& data_;
  AnalysisRows rows_;
  PipelineOptions options_;
  std::map<std::string, CachedVisit> visits_;
  std::map<std::string, CachedPropensity> propensities_;
};

inline PipelineFit fit_pipeline(const LongitudinalDataset& data, const ModelSpec& spec, Variant variant,
                                const PipelineOptions& options = {}) {
  PipelineContext ctx(data, options);
  return ctx.fit(spec, variant);
}

}  // namespace dwols
