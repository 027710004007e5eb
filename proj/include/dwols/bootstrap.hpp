#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "dwols/data.hpp"
#include "dwols/pipeline.hpp"
#include "dwols/random.hpp"
#include "dwols/sim.hpp"

namespace dwols {

// Two-stage cluster resample: draw subjects with replacement, then within each
// drawn subject redraw its outcome observations with replacement. The k-th
// event row of a subject receives the treatment, outcome and covariates of a
// uniformly drawn event row of the same subject and keeps its own interval, so
// the visit structure (and every dataset invariant) survives. Non-event rows
// are copied unchanged. Drawn subjects are renamed "<id>@<draw>".
inline LongitudinalDataset two_stage_resample(const LongitudinalDataset& data, Rng& rng) {
  const auto& subjects = data.subjects();
  if (subjects.empty()) throw std::invalid_argument("two_stage_resample: dataset has no subjects");
  std::uniform_int_distribution<std::size_t> pick_subject(0, subjects.size() - 1);

  std::vector<PersonTimeRow> rows;
  std::map<std::string, double> censoring;
  rows.reserve(data.size());
  for (std::size_t draw = 0; draw < subjects.size(); ++draw) {
    const auto& s = subjects[pick_subject(rng)];
    const std::string id = s.id + "@" + std::to_string(draw + 1);
    std::vector<std::size_t> events;
    for (std::size_t k = s.begin; k < s.end; ++k) {
      if (data.rows()[k].event) events.push_back(k);
    }
    std::vector<std::size_t> donors(events.size());
    if (!events.empty()) {
      std::uniform_int_distribution<std::size_t> pick_event(0, events.size() - 1);
      for (auto& d : donors) d = events[pick_event(rng)];
    }
    std::size_t next_event = 0;
    for (std::size_t k = s.begin; k < s.end; ++k) {
      PersonTimeRow r = data.rows()[k];
      r.subject_id = id;
      if (r.event) {
        const auto& donor = data.rows()[donors[next_event++]];
        r.treatment = donor.treatment;
        r.outcome = donor.outcome;
        r.covariates = donor.covariates;
      }
      rows.push_back(std::move(r));
    }
    censoring.emplace(id, data.censoring_time(s.id));
  }
  return LongitudinalDataset(data.covariate_names(), std::move(rows), data.tau(), std::move(censoring));
}

struct CoefficientInterval {
  std::string name;
  double estimate = 0.0;
  double lower = 0.0;
  double upper = 0.0;
};

struct BootstrapResult {
  int replicates = 0;
  int failed_replicates = 0;
  std::vector<CoefficientInterval> coefficients;
  // One row per successful replicate, columns in `coefficients` order.
  Matrix estimates;
};

namespace detail {

// Coefficients reported by the bootstrap: beta, psi, then visit-model gamma
// (the observation rate ratios on the log scale) when the variant fits one.
inline std::vector<std::pair<std::string, double>> coefficient_list(const PipelineFit& fit) {
  std::vector<std::pair<std::string, double>> out;
  for (std::size_t j = 0; j < fit.blip.beta_names.size(); ++j) {
    out.emplace_back("beta:" + fit.blip.beta_names[j], fit.blip.beta[static_cast<Eigen::Index>(j)]);
  }
  for (std::size_t j = 0; j < fit.blip.psi_names.size(); ++j) {
    out.emplace_back("psi:" + fit.blip.psi_names[j], fit.blip.psi[static_cast<Eigen::Index>(j)]);
  }
  if (fit.visit) {
    for (std::size_t j = 0; j < fit.visit->term_names.size(); ++j) {
      out.emplace_back("visit:" + fit.visit->term_names[j], fit.visit->gamma[static_cast<Eigen::Index>(j)]);
    }
  }
  return out;
}

}  // namespace detail

// Percentile bound as an order statistic: the ceil(q m)-th smallest of m
// values (1-based), clamped to [1, m].
inline double percentile_order_statistic(std::vector<double> values, double q) {
  if (values.empty()) throw std::invalid_argument("percentile of an empty sample");
  std::sort(values.begin(), values.end());
  const auto m = static_cast<double>(values.size());
  auto k = static_cast<std::size_t>(std::ceil(q * m - 1e-12));
  k = std::clamp<std::size_t>(k, 1, values.size());
  return values[k - 1];
}

struct BootstrapOptions {
  int replicates = 500;
  std::uint64_t seed = 1;
  int threads = 1;
  double max_failure_fraction = 0.2;
  PipelineOptions pipeline;
};

// Refits the whole pipeline of `variant` on B two-stage resamples and reports
// 2.5% / 97.5% percentile intervals. Replicate b draws from its own stream
// derived from (seed, b), so results do not depend on the thread count.
inline BootstrapResult bootstrap_ci(const LongitudinalDataset& data, const ModelSpec& spec, Variant variant,
                                    const BootstrapOptions& options = {}) {
  if (options.replicates < 1) throw std::invalid_argument("bootstrap_ci: B must be at least 1");
  const PipelineFit base = fit_pipeline(data, spec, variant, options.pipeline);
  const auto names = detail::coefficient_list(base);

  std::vector<std::optional<std::vector<double>>> draws(static_cast<std::size_t>(options.replicates));
  sim::parallel_for(options.replicates, options.threads, [&](int b) {
    Rng rng = substream(options.seed, kBootstrapStream, static_cast<std::uint64_t>(b));
    try {
      const auto resampled = two_stage_resample(data, rng);
      const auto fit = fit_pipeline(resampled, spec, variant, options.pipeline);
      const auto coefs = detail::coefficient_list(fit);
      if (coefs.size() != names.size()) return;
      std::vector<double> v;
      for (const auto& c : coefs) v.push_back(c.second);
      draws[static_cast<std::size_t>(b)] = std::move(v);
    } catch (const std::exception&) {
      // counted below
    }
  });

  BootstrapResult out;
  out.replicates = options.replicates;
  std::vector<std::vector<double>> ok;
  for (auto& d : draws) {
    if (d) ok.push_back(std::move(*d));
  }
  out.failed_replicates = options.replicates - static_cast<int>(ok.size());
  if (static_cast<double>(out.failed_replicates) > options.max_failure_fraction * options.replicates) {
    throw std::runtime_error("bootstrap: " + std::to_string(out.failed_replicates) + " of " +
                             std::to_string(options.replicates) +
                             " resamples failed to fit (non-convergence, separation or singular design)");
  }

  out.estimates.resize(static_cast<Eigen::Index>(ok.size()), static_cast<Eigen::Index>(names.size()));
  for (std::size_t b = 0; b < ok.size(); ++b) {
    for (std::size_t j = 0; j < names.size(); ++j) {
      out.estimates(static_cast<Eigen::Index>(b), static_cast<Eigen::Index>(j)) = ok[b][j];
    }
  }
  for (std::size_t j = 0; j < names.size(); ++j) {
    std::vector<double> column;
    column.reserve(ok.size());
    for (const auto& row : ok) column.push_back(row[j]);
    out.coefficients.push_back({names[j].first, names[j].second, percentile_order_statistic(column, 0.025),
                                percentile_order_statistic(column, 0.975)});
  }
  return out;
}

}  // namespace dwols
