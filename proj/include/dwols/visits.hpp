#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

#include "dwols/data.hpp"
#include "dwols/model_spec.hpp"
#include "dwols/numerics.hpp"

namespace dwols {

class ConvergenceError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class MonotoneLikelihoodError : public DivergenceError {
 public:
  MonotoneLikelihoodError()
      : DivergenceError("monotone partial likelihood: visit-model coefficients diverge to infinity") {}
};

// Andersen-Gill proportional rate model for visit times. Only the regression
// coefficients are estimated; the baseline rate cancels in the weights.
struct VisitModelFit {
  Vector gamma;
  std::vector<std::string> term_names;
  TermList terms;
  double log_partial_likelihood = 0.0;
  NewtonResult newton;
  std::size_t events = 0;
  // At-risk (row, event time) pairs whose fitted intensity exp(gamma'v) dL0(t)
  // exceeds 1, with dL0 the Breslow increment. Reported, never an error.
  std::size_t intensity_above_one = 0;
};

// Spread of the fitted linear predictor (a log rate ratio of e^20 between two
// rows) beyond which a stalled fit is reported as a monotone likelihood.
inline constexpr double kMonotoneSpread = 20.0;

// The Breslow log partial likelihood over counting-process rows, set up once
// so that it can be evaluated at many gamma values. Risk set at an event time
// t: at-risk rows with t_start < t <= t_stop. Subjects stay at risk after an
// event.
class AndersenGillLikelihood {
 public:
  AndersenGillLikelihood(const LongitudinalDataset& data, const TermList& terms) : terms_(terms) {
    const auto resolved = resolve(data.covariate_names(), terms);
    const auto p = static_cast<Eigen::Index>(terms.size());
    std::vector<std::size_t> used;
    for (std::size_t i = 0; i < data.size(); ++i) {
      if (data.rows()[i].at_risk) used.push_back(i);
    }
    const auto n = static_cast<Eigen::Index>(used.size());
    v_.resize(n, p);
    start_.resize(used.size());
    stop_.resize(used.size());
    event_.resize(used.size());
    for (Eigen::Index k = 0; k < n; ++k) {
      const auto& r = data.rows()[used[static_cast<std::size_t>(k)]];
      for (Eigen::Index j = 0; j < p; ++j) {
        const double x = resolved[static_cast<std::size_t>(j)](r);
        if (!std::isfinite(x)) {
          throw DataError("visit-model term '" + terms[static_cast<std::size_t>(j)].name + "' is not finite",
                          used[static_cast<std::size_t>(k)] + 1);
        }
        v_(k, j) = x;
      }
      start_[static_cast<std::size_t>(k)] = r.t_start;
      stop_[static_cast<std::size_t>(k)] = r.t_stop;
      event_[static_cast<std::size_t>(k)] = r.event;
    }
    raw_v_ = v_;
    // The partial likelihood is invariant to centering; centered values keep
    // the running risk-set sums well conditioned.
    if (n > 0) v_.rowwise() -= v_.colwise().mean();

    by_stop_.resize(used.size());
    std::iota(by_stop_.begin(), by_stop_.end(), std::size_t{0});
    std::stable_sort(by_stop_.begin(), by_stop_.end(), [&](auto a, auto b) { return stop_[a] > stop_[b]; });
    by_start_ = by_stop_;
    std::stable_sort(by_start_.begin(), by_start_.end(), [&](auto a, auto b) { return start_[a] > start_[b]; });

    for (const auto k : by_stop_) {
      if (!event_[k]) continue;
      ++events_;
      if (event_times_.empty() || event_times_.back() != stop_[k]) event_times_.push_back(stop_[k]);
    }
  }

  std::size_t events() const noexcept { return events_; }
  Eigen::Index dimension() const noexcept { return v_.cols(); }
  const Matrix& raw_covariates() const noexcept { return raw_v_; }

  Evaluation operator()(const Vector& gamma) const { return sweep(gamma, nullptr); }

  // Breslow baseline increments at each distinct event time, plus the count of
  // at-risk (row, time) pairs whose fitted intensity exceeds 1.
  std::size_t count_intensity_above_one(const Vector& gamma) const {
    std::size_t count = 0;
    sweep(gamma, &count);
    return count;
  }

 private:
  Evaluation sweep(const Vector& gamma, std::size_t* above_one) const {
    const Eigen::Index p = v_.cols();
    const Vector eta = v_ * gamma;
    const double shift = eta.size() ? eta.maxCoeff() : 0.0;
    const Vector risk = (eta.array() - shift).exp().matrix();

    Evaluation e;
    e.value = 0.0;
    e.gradient = Vector::Zero(p);
    e.hessian = Matrix::Zero(p, p);

    double s0 = 0.0;
    Vector s1 = Vector::Zero(p);
    Matrix s2 = Matrix::Zero(p, p);
    std::vector<char> active(v_.rows(), 0);
    std::size_t next_add = 0;
    std::size_t next_remove = 0;
    std::size_t next_event = 0;  // walks by_stop_ in step with the times

    for (const double t : event_times_) {
      while (next_add < by_stop_.size() && stop_[by_stop_[next_add]] >= t) {
        const auto k = by_stop_[next_add++];
        const auto kk = static_cast<Eigen::Index>(k);
        s0 += risk[kk];
        s1.noalias() += risk[kk] * v_.row(kk).transpose();
        s2.noalias() += risk[kk] * v_.row(kk).transpose() * v_.row(kk);
        active[k] = 1;
      }
      while (next_remove < by_start_.size() && start_[by_start_[next_remove]] >= t) {
        const auto k = by_start_[next_remove++];
        if (!active[k]) continue;
        const auto kk = static_cast<Eigen::Index>(k);
        s0 -= risk[kk];
        s1.noalias() -= risk[kk] * v_.row(kk).transpose();
        s2.noalias() -= risk[kk] * v_.row(kk).transpose() * v_.row(kk);
        active[k] = 0;
      }

      double d = 0.0;
      while (next_event < by_stop_.size() && stop_[by_stop_[next_event]] > t) ++next_event;
      for (std::size_t m = next_event; m < by_stop_.size() && stop_[by_stop_[m]] == t; ++m) {
        const auto k = by_stop_[m];
        if (!event_[k]) continue;
        const auto kk = static_cast<Eigen::Index>(k);
        d += 1.0;
        e.value += eta[kk] - shift;
        e.gradient += v_.row(kk).transpose();
      }
      const Vector mean = s1 / s0;
      e.value -= d * std::log(s0);
      e.gradient -= d * mean;
      e.hessian -= d * (s2 / s0 - mean * mean.transpose());

      if (above_one) {
        // Baseline increment on the unshifted scale is d / (s0 e^shift), and
        // each row's intensity is e^{eta} dL0 = risk * d / s0.
        for (std::size_t m = next_add; m-- > 0;) {
          const auto k = by_stop_[m];
          if (active[k] && risk[static_cast<Eigen::Index>(k)] * d / s0 > 1.0) ++*above_one;
        }
      }
    }
    return e;
  }

  TermList terms_;
  Matrix v_;
  Matrix raw_v_;
  std::vector<double> start_;
  std::vector<double> stop_;
  std::vector<bool> event_;
  std::vector<std::size_t> by_stop_;
  std::vector<std::size_t> by_start_;
  std::vector<double> event_times_;
  std::size_t events_ = 0;
};

inline VisitModelFit fit_andersen_gill(const LongitudinalDataset& data, const TermList& terms,
                                       const NewtonOptions& options = {}) {
  if (terms.empty()) throw std::invalid_argument("fit_andersen_gill: the visit model has no terms");
  const AndersenGillLikelihood lik(data, terms);
  if (lik.events() == 0) throw std::invalid_argument("fit_andersen_gill: no events among at-risk rows");

  VisitModelFit fit;
  fit.terms = terms;
  for (const auto& t : terms) fit.term_names.push_back(t.label());
  fit.events = lik.events();

  const Vector init = Vector::Zero(lik.dimension());
  {
    // Information at zero; a term constant within every risk set has a zero row.
    const Matrix info = -lik(init).hessian;
    Eigen::SelfAdjointEigenSolver<Matrix> eig(info);
    const double top = eig.eigenvalues().maxCoeff();
    const double bottom = eig.eigenvalues().minCoeff();
    if (!(top > 0.0) || bottom <= top / kSingularConditionLimit) {
      std::vector<std::string> bad;
      const Vector null_dir = eig.eigenvectors().col(0);
      for (Eigen::Index j = 0; j < info.rows(); ++j) {
        if (info(j, j) <= top / kSingularConditionLimit || std::abs(null_dir[j]) > 0.1) {
          bad.push_back(fit.term_names[static_cast<std::size_t>(j)]);
        }
      }
      throw SingularDesignError("visit model is not identifiable: terms constant within every risk set or "
                                "collinear: " + detail::join(bad),
                                std::move(bad));
    }
  }

  try {
    fit.newton = newton_maximize(lik, init, options);
  } catch (const DivergenceError&) {
    throw MonotoneLikelihoodError();
  }
  if (!fit.newton.converged) {
    // A monotone likelihood stalls once further gains drop below rounding; the
    // fitted rate ratios between rows are then astronomically large.
    const Vector eta = lik.raw_covariates() * fit.newton.argmax;
    if (eta.size() && eta.maxCoeff() - eta.minCoeff() > kMonotoneSpread) throw MonotoneLikelihoodError();
    throw ConvergenceError("fit_andersen_gill: no convergence after " + std::to_string(fit.newton.iterations) +
                           " iterations (gradient norm " + std::to_string(fit.newton.final_gradient_norm) + ")");
  }
  fit.gamma = fit.newton.argmax;
  fit.log_partial_likelihood = fit.newton.objective_at_argmax;
  fit.intensity_above_one = lik.count_intensity_above_one(fit.gamma);
  return fit;
}

// Inverse-intensity-of-visit weights exp(-gamma'v) for at-risk analysis rows.
inline Vector iiv_weights(const VisitModelFit& fit, const AnalysisRows& rows) {
  const auto resolved = resolve(rows.covariate_names, fit.terms);
  Vector w(static_cast<Eigen::Index>(rows.size()));
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (!rows[i].at_risk) {
      throw std::invalid_argument("iiv_weights: analysis row " + std::to_string(i + 1) +
                                  " is not at risk; its visit weight is undefined");
    }
    double lp = 0.0;
    for (std::size_t j = 0; j < resolved.size(); ++j) lp += fit.gamma[static_cast<Eigen::Index>(j)] * resolved[j](rows[i]);
    w[static_cast<Eigen::Index>(i)] = std::exp(-lp);
    if (!std::isfinite(w[static_cast<Eigen::Index>(i)]) || w[static_cast<Eigen::Index>(i)] <= 0.0) {
      throw std::domain_error("iiv_weights: weight at analysis row " + std::to_string(i + 1) + " is not finite");
    }
  }
  return w;
}

}  // namespace dwols
