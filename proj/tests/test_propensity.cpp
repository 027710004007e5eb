#include <gtest/gtest.h>

#include <algorithm>
#include <random>
#include <vector>

#include "dwols/pipeline.hpp"
#include "dwols/propensity.hpp"
#include "dwols/sim.hpp"
#include "oracle_suites.hpp"

using namespace dwols;
using testing_support::cross_sectional;

TEST(FitLogistic, InterceptOnlyMatchesMarginal) {
  std::vector<int> a{1, 1, 1, 1, 1, 1, 0, 0, 0, 0};
  const auto data = cross_sectional({}, std::vector<std::vector<double>>(10), a, std::vector<double>(10, 0.0));
  const auto fit = fit_logistic(analysis_rows(data), {});
  ASSERT_EQ(fit.kappa.size(), 1);
  EXPECT_NEAR(fit.kappa[0], logit(0.6), 1e-8);
  EXPECT_DOUBLE_EQ(fit.marginal_p1, 0.6);
  EXPECT_EQ(fit.term_names.front(), "(Intercept)");
}

TEST(FitLogistic, TwoByTwoLogOddsRatio) {
  const auto r = testing_support::logistic_two_by_two_suite();
  EXPECT_TRUE(r.passed) << r.detail;
}

TEST(FitLogistic, IndependentCovariateHasNearZeroSlope) {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> z(0.0, 1.0);
  const int n = 10000;
  std::vector<std::vector<double>> cov;
  std::vector<int> a;
  for (int i = 0; i < n; ++i) {
    a.push_back(i % 3 == 0);
    cov.push_back({z(rng)});
  }
  std::shuffle(cov.begin(), cov.end(), rng);
  const auto fit = fit_logistic(analysis_rows(cross_sectional({"X"}, cov, a, std::vector<double>(n, 0.0))),
                                terms({"X"}));
  // Standard error of the slope is about 1 / sqrt(n p (1-p)) ~ 0.021.
  EXPECT_LT(std::abs(fit.kappa[1]), 4.0 * 0.0213);
}

TEST(FitLogistic, ScoreVanishesAndSaturatedCellsReproduced) {
  // Three-level categorical covariate coded as two dummies: fitted
  // probabilities equal the arm frequency in each cell.
  std::vector<std::vector<double>> cov;
  std::vector<int> a;
  const int treated[3] = {3, 8, 11}, total[3] = {10, 12, 14};
  for (int c = 0; c < 3; ++c) {
    for (int i = 0; i < total[c]; ++i) {
      cov.push_back({c == 1 ? 1.0 : 0.0, c == 2 ? 1.0 : 0.0});
      a.push_back(i < treated[c]);
    }
  }
  const auto rows = analysis_rows(cross_sectional({"C1", "C2"}, cov, a, std::vector<double>(a.size(), 0.0)));
  const auto fit = fit_logistic(rows, terms({"C1", "C2"}));
  const Vector p = fit.probabilities(rows);
  std::size_t i = 0;
  for (int c = 0; c < 3; ++c) {
    for (int k = 0; k < total[c]; ++k, ++i) EXPECT_NEAR(p[static_cast<Eigen::Index>(i)], double(treated[c]) / total[c], 1e-8);
  }
  EXPECT_LE(fit.newton.final_gradient_norm, 1e-8);
  EXPECT_TRUE((p.array() > 0.0).all() && (p.array() < 1.0).all());
}

TEST(FitLogistic, SingleArmAndSeparationErrors) {
  const auto single = cross_sectional({"X"}, {{0.0}, {1.0}, {2.0}}, {1, 1, 1}, {0, 0, 0});
  EXPECT_THROW(fit_logistic(analysis_rows(single), terms({"X"})), std::invalid_argument);

  std::vector<std::vector<double>> cov;
  std::vector<int> a;
  for (int i = 0; i < 20; ++i) {
    cov.push_back({double(i)});
    a.push_back(i >= 10);
  }
  const auto sep = cross_sectional({"X"}, cov, a, std::vector<double>(20, 0.0));
  try {
    fit_logistic(analysis_rows(sep), terms({"X"}));
    FAIL() << "expected SeparationError";
  } catch (const SeparationError& e) {
    EXPECT_NE(std::string(e.what()).find("perfect separation; propensity not identifiable"), std::string::npos);
  }
}

TEST(FitLogistic, CollinearDesignIsSingular) {
  const auto d = cross_sectional({"X", "Y2"}, {{1, 2}, {2, 4}, {3, 6}, {4, 8}}, {1, 0, 1, 0}, {0, 0, 0, 0});
  EXPECT_THROW(fit_logistic(analysis_rows(d), terms({"X", "Y2"})), SingularDesignError);
}

TEST(IptWeights, FormulaAndNullConfounding) {
  PropensityFit fit;
  fit.kappa = Vector::Constant(1, logit(0.8));
  fit.terms = {};
  fit.marginal_p1 = 0.6;
  const auto rows = analysis_rows(cross_sectional({}, {{}, {}}, {1, 0}, {0, 0}));
  const Vector w = ipt_weights(fit, rows);
  EXPECT_NEAR(w[0], 0.75, 1e-12);
  EXPECT_NEAR(w[1], 0.4 / 0.2, 1e-12);

  fit.kappa = Vector::Constant(1, logit(0.6));
  const Vector w1 = ipt_weights(fit, rows);
  EXPECT_NEAR(w1[0], 1.0, 1e-12);
  EXPECT_NEAR(w1[1], 1.0, 1e-12);
}

TEST(IptWeights, DegeneratePropensityIsAPositivityError) {
  PropensityFit fit;
  fit.kappa = Vector::Constant(1, 60.0);
  fit.marginal_p1 = 0.5;
  const auto rows = analysis_rows(cross_sectional({}, {{}, {}}, {1, 0}, {0, 0}));
  EXPECT_THROW(ipt_weights(fit, rows), PositivityError);
}

TEST(IptWeights, PointwiseSoInvariantToRowOrder) {
  const auto data = cross_sectional({"X"}, {{0.1}, {1.3}, {-0.7}, {2.0}, {0.4}}, {1, 0, 0, 1, 1}, {0, 0, 0, 0, 0});
  const auto rows = analysis_rows(data);
  const auto fit = fit_logistic(rows, terms({"X"}));
  const Vector w = ipt_weights(fit, rows);
  AnalysisRows reversed = rows;
  std::reverse(reversed.rows.begin(), reversed.rows.end());
  const Vector wr = ipt_weights(fit, reversed);
  for (Eigen::Index i = 0; i < w.size(); ++i) EXPECT_DOUBLE_EQ(w[i], wr[w.size() - 1 - i]);
}

TEST(IptWeights, BalanceConfoundersOnSimulatedData) {
  auto cfg = sim::ScenarioConfig::preset(4);
  cfg.n = 500;
  const auto data = sim::simulate_cohort(cfg, 0);
  const auto rows = analysis_rows(data);
  ASSERT_GT(rows.size(), 4000u);
  const auto fit = fit_logistic(rows, terms({"K1", "K2", "K3"}));
  const Vector w = ipt_weights(fit, rows);

  double mean_w[2] = {0, 0}, count[2] = {0, 0};
  for (std::size_t i = 0; i < rows.size(); ++i) {
    mean_w[rows[i].treatment] += w[static_cast<Eigen::Index>(i)];
    count[rows[i].treatment] += 1;
  }
  for (int arm = 0; arm < 2; ++arm) EXPECT_NEAR(mean_w[arm] / count[arm], 1.0, 0.05);

  for (const char* name : {"K1", "K3"}) {
    const auto j = *rows.covariate_index(name);
    double raw[2] = {0, 0}, weighted[2] = {0, 0}, wsum[2] = {0, 0};
    for (std::size_t i = 0; i < rows.size(); ++i) {
      const int t = rows[i].treatment;
      const double x = rows[i].covariates[j];
      raw[t] += x;
      weighted[t] += w[static_cast<Eigen::Index>(i)] * x;
      wsum[t] += w[static_cast<Eigen::Index>(i)];
    }
    const double before = std::abs(raw[1] / count[1] - raw[0] / count[0]);
    const double after = std::abs(weighted[1] / wsum[1] - weighted[0] / wsum[0]);
    EXPECT_GT(before, 0.2) << name;
    EXPECT_LT(after, 0.05) << name;
  }
}

TEST(LogisticLikelihood, GradientsMatchFiniteDifferences) {
  const auto r = testing_support::finite_difference_suite(10);
  EXPECT_TRUE(r.passed) << r.detail;
}
