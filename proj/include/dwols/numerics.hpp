#pragma once

#include <cmath>
#include <cstddef>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

namespace dwols {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

// Raised when a design (or information matrix) is numerically rank deficient.
// `columns` lists the offending column names, or their indices when unnamed.
class SingularDesignError : public std::runtime_error {
 public:
  SingularDesignError(const std::string& what, std::vector<std::string> columns)
      : std::runtime_error(what), columns_(std::move(columns)) {}

  const std::vector<std::string>& columns() const noexcept { return columns_; }

 private:
  std::vector<std::string> columns_;
};

class DivergenceError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Condition estimates above this are treated as singular.
inline constexpr double kSingularConditionLimit = 1e12;

struct WlsSolution {
  Vector coefficients;
  Vector residuals;
  double gram_condition_estimate = 1.0;
};

namespace detail {

inline std::string column_label(std::span<const std::string> names, Eigen::Index j) {
  if (static_cast<std::size_t>(j) < names.size()) return names[static_cast<std::size_t>(j)];
  return "column " + std::to_string(j);
}

inline std::string join(const std::vector<std::string>& items) {
  std::string out;
  for (std::size_t i = 0; i < items.size(); ++i) {
    if (i) out += ", ";
    out += items[i];
  }
  return out;
}

}  // namespace detail

// Minimizes sum_i w_i (y_i - x_i'b)^2 through a column-pivoted QR of the
// sqrt(W)-scaled design. The condition estimate is (max|R_jj| / min|R_jj|)^2,
// i.e. an estimate for the Gram matrix X'WX.
inline WlsSolution solve_wls(const Matrix& design, const Vector& response, const Vector& weights,
                             std::span<const std::string> column_names = {}) {
  const Eigen::Index n = design.rows();
  const Eigen::Index p = design.cols();
  if (response.size() != n || weights.size() != n) {
    throw std::invalid_argument("solve_wls: design has " + std::to_string(n) + " rows but response has " +
                                std::to_string(response.size()) + " and weights " +
                                std::to_string(weights.size()));
  }
  if (p == 0) throw std::invalid_argument("solve_wls: design has no columns");
  Eigen::Index positive = 0;
  for (Eigen::Index i = 0; i < n; ++i) {
    if (!(weights[i] >= 0.0) || !std::isfinite(weights[i])) {
      throw std::invalid_argument("solve_wls: weight " + std::to_string(i) + " is negative or not finite");
    }
    if (weights[i] > 0.0) ++positive;
  }
  if (positive == 0) throw std::invalid_argument("solve_wls: all weights are zero");
  if (p > positive) {
    throw std::invalid_argument("solve_wls: " + std::to_string(p) + " columns but only " +
                                std::to_string(positive) + " positively weighted rows");
  }

  const Vector root_w = weights.cwiseSqrt();
  const Matrix scaled = root_w.asDiagonal() * design;
  const Vector scaled_y = root_w.cwiseProduct(response);

  Eigen::ColPivHouseholderQR<Matrix> qr(scaled);
  const auto r_diag = qr.matrixQR().diagonal().cwiseAbs();
  const double r_max = r_diag.maxCoeff();
  const double r_min = r_diag.minCoeff();
  const double condition = r_min > 0.0 ? (r_max / r_min) * (r_max / r_min)
                                        : std::numeric_limits<double>::infinity();
  if (!(condition <= kSingularConditionLimit)) {
    // Pivoted columns whose diagonal falls below the Gram limit are the dependent ones.
    std::vector<std::string> bad;
    const auto& perm = qr.colsPermutation().indices();
    for (Eigen::Index k = 0; k < p; ++k) {
      const double rk = r_diag[k];
      if (rk == 0.0 || (r_max / rk) * (r_max / rk) > kSingularConditionLimit) {
        bad.push_back(detail::column_label(column_names, perm[k]));
      }
    }
    throw SingularDesignError("weighted design is rank deficient (Gram condition estimate " +
                                  std::to_string(condition) + "); dependent columns: " + detail::join(bad),
                              std::move(bad));
  }

  WlsSolution out;
  out.coefficients = qr.solve(scaled_y);
  out.residuals = response - design * out.coefficients;
  out.gram_condition_estimate = std::max(1.0, condition);
  return out;
}

// Value, gradient and Hessian of an objective at one point.
struct Evaluation {
  double value = 0.0;
  Vector gradient;
  Matrix hessian;
};

struct NewtonOptions {
  double tolerance = 1e-8;
  int max_iter = 50;
  int max_halvings = 30;
  double divergence_limit = 1e6;
};

struct NewtonResult {
  Vector argmax;
  double objective_at_argmax = 0.0;
  int iterations = 0;
  bool converged = false;
  double final_gradient_norm = 0.0;
};

namespace detail {

inline bool all_finite(const Evaluation& e) {
  return std::isfinite(e.value) && e.gradient.allFinite() && e.hessian.allFinite();
}

}  // namespace detail

// Damped Newton ascent. `objective` maps a parameter vector to an Evaluation.
// Each step is halved (at most `max_halvings` times) until the objective
// increases; iteration stops once the gradient sup-norm is within tolerance.
template <class Objective>
NewtonResult newton_maximize(Objective&& objective, Vector init, const NewtonOptions& options = {}) {
  if (!(options.tolerance > 0.0)) throw std::invalid_argument("newton_maximize: tolerance must be positive");

  NewtonResult result;
  result.argmax = std::move(init);
  Evaluation current = objective(result.argmax);
  if (!detail::all_finite(current)) {
    throw std::domain_error("newton_maximize: objective or derivatives not finite at the initial point");
  }
  result.objective_at_argmax = current.value;
  result.final_gradient_norm = current.gradient.size() ? current.gradient.template lpNorm<Eigen::Infinity>() : 0.0;

  while (result.final_gradient_norm > options.tolerance && result.iterations < options.max_iter) {
    Vector step;
    Eigen::LDLT<Matrix> ldlt(-current.hessian);
    if (ldlt.info() == Eigen::Success && ldlt.isPositive() && (ldlt.vectorD().array() > 0.0).all()) {
      step = ldlt.solve(current.gradient);
    } else {
      // Not concave here: fall back to a gradient step.
      step = current.gradient;
    }

    // Near the optimum the objective only changes at rounding level; a step
    // that ties within rounding but shrinks the gradient is accepted.
    const double rounding = 1e-10 * (1.0 + std::abs(current.value));
    double scale = 1.0;
    Vector candidate;
    Evaluation next;
    bool improved = false;
    for (int h = 0; h <= options.max_halvings; ++h) {
      candidate = result.argmax + scale * step;
      next = objective(candidate);
      if (detail::all_finite(next) &&
          (next.value > current.value ||
           (next.value >= current.value - rounding &&
            next.gradient.template lpNorm<Eigen::Infinity>() < result.final_gradient_norm))) {
        improved = true;
        break;
      }
      scale *= 0.5;
    }
    ++result.iterations;
    if (!improved) break;

    result.argmax = std::move(candidate);
    current = std::move(next);
    result.objective_at_argmax = current.value;
    result.final_gradient_norm = current.gradient.template lpNorm<Eigen::Infinity>();
    if (result.argmax.template lpNorm<Eigen::Infinity>() > options.divergence_limit) {
      throw DivergenceError("newton_maximize: parameters diverged (sup-norm above " +
                            std::to_string(options.divergence_limit) + ")");
    }
  }
  result.converged = result.final_gradient_norm <= options.tolerance;
  return result;
}

}  // namespace dwols
