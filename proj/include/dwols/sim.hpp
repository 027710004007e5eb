#pragma once

#include <algorithm>
#include <array>
#include <atomic>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <exception>
#include <fstream>
#include <functional>
#include <mutex>
#include <optional>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "dwols/data.hpp"
#include "dwols/dwols.hpp"
#include "dwols/pipeline.hpp"
#include "dwols/propensity.hpp"
#include "dwols/random.hpp"

namespace dwols::sim {

// True blip coefficients (intercept, Q, K1).
inline constexpr std::array<double, 3> kTruePsi{-2.0, 0.5, -1.0};

inline double true_blip(double q, double k1) { return kTruePsi[0] + kTruePsi[1] * q + kTruePsi[2] * k1; }

// Visit-intensity coefficients on (A, Z, K2, K3) for the four reference scenarios.
inline std::array<double, 4> scenario_gamma(int scenario) {
  switch (scenario) {
    case 1: return {-2.0, -0.3, 0.2, -1.2};
    case 2: return {0.3, -0.6, -0.4, -0.3};
    case 3: return {0.4, -0.8, 1.0, 0.6};
    case 4: return {0.0, 0.0, 0.0, 0.0};
    default: throw std::invalid_argument("unknown scenario " + std::to_string(scenario) + " (expected 1-4)");
  }
}

struct ScenarioConfig {
  int scenario = 4;  // label for reports; 0 for a custom gamma
  std::array<double, 4> gamma{0.0, 0.0, 0.0, 0.0};
  double base_rate = 0.1;
  int n = 500;
  int replications = 200;
  double dt = 0.01;
  double tau = 1.0;
  std::uint64_t seed = 1;
  std::vector<Variant> variants{Variant::DW1, Variant::DW2, Variant::DW3,
                                Variant::DW4, Variant::OLS, Variant::IPT};
  int value_population = 25000;  // 0 skips the value function
  int threads = 1;

  static ScenarioConfig preset(int scenario) {
    ScenarioConfig c;
    c.scenario = scenario;
    c.gamma = scenario_gamma(scenario);
    return c;
  }

  int steps() const {
    const double k = tau / dt;
    const double rounded = std::round(k);
    if (!(dt > 0.0) || !(tau > 0.0) || std::abs(k - rounded) * dt > 1e-9 || rounded < 1) {
      throw std::invalid_argument("dt must divide tau");
    }
    return static_cast<int>(rounded);
  }

  void validate() const {
    (void)steps();
    if (n < 1) throw std::invalid_argument("n must be at least 1");
    if (replications < 1) throw std::invalid_argument("replications must be at least 1");
    if (!(base_rate > 0.0)) throw std::invalid_argument("base_rate must be positive");
    if (variants.empty()) throw std::invalid_argument("no estimator variants requested");
    if (value_population < 0) throw std::invalid_argument("value_population must be non-negative");
  }
};

inline void to_json(nlohmann::json& j, const ScenarioConfig& c) {
  std::vector<std::string> names;
  for (const auto v : c.variants) names.emplace_back(to_string(v));
  j = nlohmann::json{{"scenario", c.scenario},         {"gamma", c.gamma},
                     {"base_rate", c.base_rate},       {"n", c.n},
                     {"replications", c.replications}, {"dt", c.dt},
                     {"tau", c.tau},                   {"seed", c.seed},
                     {"variants", names},              {"value_population", c.value_population},
                     {"threads", c.threads}};
}

inline void from_json(const nlohmann::json& j, ScenarioConfig& c) {
  c = ScenarioConfig{};
  if (j.contains("scenario")) {
    c.scenario = j.at("scenario").get<int>();
    if (c.scenario != 0) c.gamma = scenario_gamma(c.scenario);
  }
  if (j.contains("gamma")) c.gamma = j.at("gamma").get<std::array<double, 4>>();
  c.base_rate = j.value("base_rate", c.base_rate);
  c.n = j.value("n", c.n);
  c.replications = j.value("replications", c.replications);
  c.dt = j.value("dt", c.dt);
  c.tau = j.value("tau", c.tau);
  c.seed = j.value("seed", c.seed);
  c.value_population = j.value("value_population", c.value_population);
  c.threads = j.value("threads", c.threads);
  if (j.contains("variants")) {
    c.variants.clear();
    for (const auto& name : j.at("variants")) c.variants.push_back(parse_variant(name.get<std::string>()));
  }
  c.validate();
}

inline ScenarioConfig load_scenario_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open scenario config '" + path + "'");
  try {
    return nlohmann::json::parse(in).get<ScenarioConfig>();
  } catch (const std::exception& e) {
    throw std::runtime_error(path + ": " + e.what());
  }
}

// Covariate columns of simulated cohorts.
inline const std::vector<std::string>& cohort_covariates() {
  static const std::vector<std::string> names{"K1", "K2", "K3", "Z", "Q"};
  return names;
}

// Working models of each variant. The blip is always {Q, K1}; Z is a mediator.
inline ModelSpec variant_spec(Variant v) {
  ModelSpec s;
  s.treatment = terms({"K1", "K2", "K3"});
  s.visit = terms({"A", "Z", "K2", "K3"});
  s.treatment_free = terms({"K1", "K2", "K3"});
  s.blip = {"Q", "K1"};
  s.mediators = {"Z"};
  switch (v) {
    case Variant::DW2:
      s.visit = terms({"A", "Z"});
      s.treatment_free = terms({"K1", "K3"});
      break;
    case Variant::DW3:
      s.visit = terms({"A", "Z"});
      s.treatment = {{"K1", Transform::square}, {"K2", Transform::identity}, {"K3", Transform::square}};
      break;
    case Variant::DW4:
      s.visit = terms({"A", "K2"});
      break;
    default:
      break;
  }
  return s;
}

struct CohortStats {
  std::size_t clamped_draws = 0;
};

namespace detail {

// Z | A=1 ~ N(2, 1) and Z | A=0 ~ N(4, 2), second argument a variance.
inline constexpr double kMediatorMean[2] = {4.0, 2.0};
inline const double kMediatorSd[2] = {std::sqrt(2.0), 1.0};

inline double bernoulli(Rng& rng, double p) {
  return std::uniform_real_distribution<double>(0.0, 1.0)(rng) < p ? 1.0 : 0.0;
}

inline std::string subject_label(int i, int n) {
  std::string s = std::to_string(i + 1);
  const std::size_t width = std::to_string(n).size();
  if (s.size() < width) s.insert(0, width - s.size(), '0');
  return s;
}

}  // namespace detail

// One simulated cohort on the tau/dt grid. Each subject contributes one row
// (t - dt, t] per grid point t, carrying that point's A, Z and Q; the event
// flag is a Bernoulli draw with probability min(1, base_rate exp(gamma'v)).
inline LongitudinalDataset simulate_cohort(const ScenarioConfig& config, int replicate, CohortStats* stats = nullptr) {
  config.validate();
  const int steps = config.steps();
  Rng rng = substream(config.seed, kCohortStream, static_cast<std::uint64_t>(replicate));
  std::normal_distribution<double> std_normal(0.0, 1.0);
  const auto& g = config.gamma;

  std::vector<PersonTimeRow> rows;
  rows.reserve(static_cast<std::size_t>(config.n) * static_cast<std::size_t>(steps));
  std::size_t clamped = 0;
  for (int i = 0; i < config.n; ++i) {
    const std::string id = detail::subject_label(i, config.n);
    const double k1 = 1.0 + std_normal(rng);
    const double k2 = detail::bernoulli(rng, 0.55);
    const double k3 = std_normal(rng);
    const double phi = 0.2 * std_normal(rng);
    const double p_treat = expit(0.5 + 0.55 * k1 - 0.2 * k2 - 1.0 * k3);
    for (int k = 1; k <= steps; ++k) {
      const double t = k * config.dt;
      const int a = static_cast<int>(detail::bernoulli(rng, p_treat));
      const double z = detail::kMediatorMean[a] + detail::kMediatorSd[a] * std_normal(rng);
      const double q = detail::bernoulli(rng, 0.5);
      const double eps = phi + 0.1 * std_normal(rng);
      const double y = std::sqrt(t / 100.0) - 2.0 * a + 2.5 * (z - detail::kMediatorMean[a]) + 0.4 * k1 +
                       0.05 * k2 - 0.6 * k3 + 0.5 * a * q - 1.0 * a * k1 + eps;
      double p_visit = config.base_rate * std::exp(g[0] * a + g[1] * z + g[2] * k2 + g[3] * k3);
      if (p_visit > 1.0) {
        p_visit = 1.0;
        ++clamped;
      }
      const bool event = detail::bernoulli(rng, p_visit) == 1.0;

      PersonTimeRow r;
      r.subject_id = id;
      r.t_start = (k - 1) * config.dt;
      r.t_stop = t;
      r.event = event;
      r.at_risk = true;
      r.treatment = a;
      if (event) r.outcome = y;
      r.covariates = {k1, k2, k3, z, q};
      rows.push_back(std::move(r));
    }
  }
  if (stats) stats->clamped_draws += clamped;
  return LongitudinalDataset(cohort_covariates(), std::move(rows), steps * config.dt);
}

// Blip evaluation point: a (Q, K1) pair.
struct EvalPoint {
  double q = 0.0;
  double k1 = 0.0;
};

inline std::vector<EvalPoint> eval_points(const AnalysisRows& rows) {
  const auto q = rows.covariate_index("Q");
  const auto k1 = rows.covariate_index("K1");
  if (!q || !k1) throw std::invalid_argument("eval_points: rows lack Q or K1");
  std::vector<EvalPoint> out;
  out.reserve(rows.size());
  for (const auto& r : rows.rows) out.push_back({r.covariates[*q], r.covariates[*k1]});
  return out;
}

inline double estimated_blip(const Vector& psi, const EvalPoint& x) { return psi[0] + psi[1] * x.q + psi[2] * x.k1; }

struct MseDecomposition {
  double mse = 0.0;      // mean over replications of the per-replication mean squared error
  double bias_sq = 0.0;  // square of the mean error
  double variance = 0.0; // mse - bias_sq
};

namespace detail {

inline void check_metric_inputs(std::span<const Vector> psi_hats, std::span<const std::vector<EvalPoint>> points) {
  if (psi_hats.size() != points.size()) throw std::invalid_argument("one set of eval points per replication required");
  if (psi_hats.empty()) throw std::invalid_argument("no replications");
  for (const auto& p : points) {
    if (p.empty()) throw std::invalid_argument("empty eval points");
  }
}

}  // namespace detail

// Errors are true blip minus estimated blip at each replication's own points.
inline MseDecomposition mse_blip(std::span<const Vector> psi_hats, std::span<const std::vector<EvalPoint>> points) {
  detail::check_metric_inputs(psi_hats, points);
  double sum_mse = 0.0;
  double sum_mean = 0.0;
  for (std::size_t r = 0; r < psi_hats.size(); ++r) {
    double s = 0.0, s2 = 0.0;
    for (const auto& x : points[r]) {
      const double e = true_blip(x.q, x.k1) - estimated_blip(psi_hats[r], x);
      s += e;
      s2 += e * e;
    }
    const double m = static_cast<double>(points[r].size());
    sum_mse += s2 / m;
    sum_mean += s / m;
  }
  const double reps = static_cast<double>(psi_hats.size());
  MseDecomposition out;
  out.mse = sum_mse / reps;
  out.bias_sq = (sum_mean / reps) * (sum_mean / reps);
  out.variance = std::max(0.0, out.mse - out.bias_sq);
  return out;
}

// Fraction of (replication, point) pairs where the estimated rule and the true
// rule disagree.
inline double error_rate(std::span<const Vector> psi_hats, std::span<const std::vector<EvalPoint>> points) {
  detail::check_metric_inputs(psi_hats, points);
  std::size_t wrong = 0, total = 0;
  for (std::size_t r = 0; r < psi_hats.size(); ++r) {
    for (const auto& x : points[r]) {
      const bool est = estimated_blip(psi_hats[r], x) >= 0.0;
      const bool truth = true_blip(x.q, x.k1) >= 0.0;
      wrong += est != truth;
      ++total;
    }
  }
  return static_cast<double>(wrong) / static_cast<double>(total);
}

// Mean absolute blip error, averaged over points and then replications.
inline double blip_abs_bias(std::span<const Vector> psi_hats, std::span<const std::vector<EvalPoint>> points) {
  detail::check_metric_inputs(psi_hats, points);
  double sum = 0.0;
  for (std::size_t r = 0; r < psi_hats.size(); ++r) {
    double s = 0.0;
    for (const auto& x : points[r]) s += std::abs(true_blip(x.q, x.k1) - estimated_blip(psi_hats[r], x));
    sum += s / static_cast<double>(points[r].size());
  }
  return sum / static_cast<double>(psi_hats.size());
}

using Rule = std::function<int(double q, double k1)>;

inline Rule true_rule() {
  return [](double q, double k1) { return true_blip(q, k1) >= 0.0 ? 1 : 0; };
}

inline Rule linear_rule(const Vector& psi) {
  return [psi](double q, double k1) { return estimated_blip(psi, {q, k1}) >= 0.0 ? 1 : 0; };
}

// Rule induced by a fit whose blip terms are {Q, K1} in either order.
inline Rule rule_of(const BlipFit& fit) {
  const auto& b = fit.spec.blip;
  if (b.size() != 2) throw std::invalid_argument("rule_of: blip terms must be Q and K1");
  Vector psi(3);
  psi[0] = fit.psi[0];
  if (b[0] == "Q" && b[1] == "K1") {
    psi[1] = fit.psi[1];
    psi[2] = fit.psi[2];
  } else if (b[0] == "K1" && b[1] == "Q") {
    psi[1] = fit.psi[2];
    psi[2] = fit.psi[1];
  } else {
    throw std::invalid_argument("rule_of: blip terms must be Q and K1");
  }
  return linear_rule(psi);
}

// A fresh population under the data-generating mechanism with treatment left
// open, so that any rule can be evaluated on the same draws. The outcome at a
// grid point under treatment a is
//   base + a * true_blip(q, k1) + 2.5 * sd(Z | a) * u,
// where u is the point's standardized mediator draw.
class EvaluationPopulation {
 public:
  EvaluationPopulation(const ScenarioConfig& config, int subjects, std::uint64_t seed) {
    const int steps = config.steps();
    Rng rng = substream(seed, kValueStream, 0);
    std::normal_distribution<double> std_normal(0.0, 1.0);
    const std::size_t total = static_cast<std::size_t>(subjects) * static_cast<std::size_t>(steps);
    base_.reserve(total);
    mediator_.reserve(total);
    k1_.reserve(total);
    q_.reserve(total);
    for (int i = 0; i < subjects; ++i) {
      const double k1 = 1.0 + std_normal(rng);
      const double k2 = detail::bernoulli(rng, 0.55);
      const double k3 = std_normal(rng);
      const double phi = 0.2 * std_normal(rng);
      for (int k = 1; k <= steps; ++k) {
        const double t = k * config.dt;
        const double u = std_normal(rng);
        const double q = detail::bernoulli(rng, 0.5);
        const double eps = phi + 0.1 * std_normal(rng);
        base_.push_back(std::sqrt(t / 100.0) + 0.4 * k1 + 0.05 * k2 - 0.6 * k3 + eps);
        mediator_.push_back(u);
        k1_.push_back(k1);
        q_.push_back(static_cast<unsigned char>(q));
      }
    }
  }

  std::size_t size() const noexcept { return base_.size(); }

  // Average outcome over all person-time grid points when A follows `rule`.
  double value(const Rule& rule) const {
    double sum = 0.0;
    for (std::size_t i = 0; i < base_.size(); ++i) {
      const int a = rule(q_[i], k1_[i]);
      sum += base_[i] + a * true_blip(q_[i], k1_[i]) + 2.5 * detail::kMediatorSd[a] * mediator_[i];
    }
    return base_.empty() ? 0.0 : sum / static_cast<double>(base_.size());
  }

  // Same, for a rule given by blip coefficients (intercept, Q, K1).
  double value(const Vector& psi) const {
    double sum = 0.0;
    for (std::size_t i = 0; i < base_.size(); ++i) {
      const int a = psi[0] + psi[1] * q_[i] + psi[2] * k1_[i] >= 0.0 ? 1 : 0;
      sum += base_[i] + a * true_blip(q_[i], k1_[i]) + 2.5 * detail::kMediatorSd[a] * mediator_[i];
    }
    return base_.empty() ? 0.0 : sum / static_cast<double>(base_.size());
  }

 private:
  std::vector<double> base_;
  std::vector<double> mediator_;
  std::vector<double> k1_;
  std::vector<unsigned char> q_;
};

inline double value_function(const Rule& rule, int n_eval, const ScenarioConfig& config, std::uint64_t seed) {
  return EvaluationPopulation(config, n_eval, seed).value(rule);
}

inline double value_function(const BlipFit& fit, int n_eval, const ScenarioConfig& config, std::uint64_t seed) {
  return value_function(rule_of(fit), n_eval, config, seed);
}

struct VariantMetrics {
  Variant variant = Variant::DW1;
  double mse_blip = 0.0;
  double mse_bias_sq = 0.0;
  double mse_variance = 0.0;
  double error_rate = 0.0;
  std::array<double, 3> abs_bias{};  // intercept, K1, Q
  Vector mean_psi;                   // intercept, Q, K1
  double blip_abs_bias = 0.0;
  std::optional<double> value;
  int fitted = 0;
  int failed = 0;
};

struct SimMetrics {
  ScenarioConfig config;
  std::vector<VariantMetrics> variants;
  double events_mean = 0.0;
  double events_q25 = 0.0;
  double events_q75 = 0.0;
  std::size_t clamped_draws = 0;
  std::optional<double> optimal_value;

  const VariantMetrics& at(Variant v) const {
    for (const auto& m : variants) {
      if (m.variant == v) return m;
    }
    throw std::out_of_range("variant " + std::string(to_string(v)) + " not in metrics");
  }
};

// Type-7 (linear interpolation) sample quantile of sorted data.
inline double quantile_sorted(const std::vector<double>& sorted, double prob) {
  if (sorted.empty()) return 0.0;
  const double h = prob * static_cast<double>(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const auto hi = std::min(lo + 1, sorted.size() - 1);
  return sorted[lo] + (h - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
}

// Runs `task(i)` for i in [0, count) on up to `threads` workers. Results must
// be written to per-index slots; the first exception is rethrown.
inline void parallel_for(int count, int threads, const std::function<void(int)>& task) {
  threads = std::max(1, std::min(threads, count));
  if (threads == 1) {
    for (int i = 0; i < count; ++i) task(i);
    return;
  }
  std::atomic<int> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  {
    std::vector<std::jthread> pool;
    for (int w = 0; w < threads; ++w) {
      pool.emplace_back([&] {
        for (int i = next++; i < count; i = next++) {
          try {
            task(i);
          } catch (...) {
            std::lock_guard lock(error_mutex);
            if (!error) error = std::current_exception();
          }
        }
      });
    }
  }
  if (error) std::rethrow_exception(error);
}

namespace detail {

struct ReplicationResult {
  std::vector<EvalPoint> points;
  std::vector<int> event_counts;
  std::vector<std::optional<Vector>> psi;  // per requested variant
  std::vector<std::string> failures;
  std::size_t clamped = 0;
};

}  // namespace detail

inline SimMetrics run_scenario(const ScenarioConfig& config) {
  config.validate();
  const std::size_t nv = config.variants.size();
  std::vector<ModelSpec> specs;
  for (const auto v : config.variants) specs.push_back(variant_spec(v));

  std::vector<detail::ReplicationResult> results(static_cast<std::size_t>(config.replications));
  parallel_for(config.replications, config.threads, [&](int rep) {
    auto& out = results[static_cast<std::size_t>(rep)];
    CohortStats stats;
    const LongitudinalDataset data = simulate_cohort(config, rep, &stats);
    out.clamped = stats.clamped_draws;
    for (const auto& s : data.subjects()) {
      int events = 0;
      for (std::size_t k = s.begin; k < s.end; ++k) events += data.rows()[k].event;
      out.event_counts.push_back(events);
    }
    PipelineContext ctx(data);
    out.points = eval_points(ctx.rows());
    out.psi.resize(nv);
    for (std::size_t v = 0; v < nv; ++v) {
      try {
        out.psi[v] = ctx.fit(specs[v], config.variants[v]).blip.psi;
      } catch (const std::exception& e) {
        out.failures.push_back(std::string(to_string(config.variants[v])) + ": " + e.what());
      }
    }
  });

  SimMetrics metrics;
  metrics.config = config;
  std::vector<double> counts;
  for (const auto& r : results) {
    metrics.clamped_draws += r.clamped;
    for (const int c : r.event_counts) counts.push_back(c);
  }
  std::sort(counts.begin(), counts.end());
  double total = 0.0;
  for (const double c : counts) total += c;
  metrics.events_mean = counts.empty() ? 0.0 : total / static_cast<double>(counts.size());
  metrics.events_q25 = quantile_sorted(counts, 0.25);
  metrics.events_q75 = quantile_sorted(counts, 0.75);

  std::optional<EvaluationPopulation> population;
  if (config.value_population > 0) {
    population.emplace(config, config.value_population, config.seed);
    metrics.optimal_value = population->value(true_rule());
  }

  for (std::size_t v = 0; v < nv; ++v) {
    std::vector<Vector> psi;
    std::vector<std::vector<EvalPoint>> points;
    for (const auto& r : results) {
      if (!r.psi[v]) continue;
      psi.push_back(*r.psi[v]);
      points.push_back(r.points);
    }
    VariantMetrics m;
    m.variant = config.variants[v];
    m.fitted = static_cast<int>(psi.size());
    m.failed = config.replications - m.fitted;
    if (m.failed * 10 > config.replications) {
      std::string first;
      for (const auto& r : results) {
        if (!r.failures.empty()) {
          first = r.failures.front();
          break;
        }
      }
      throw std::runtime_error("variant " + std::string(to_string(m.variant)) + " failed in " +
                               std::to_string(m.failed) + " of " + std::to_string(config.replications) +
                               " replications (first failure: " + first + ")");
    }
    const auto decomposition = mse_blip(psi, points);
    m.mse_blip = decomposition.mse;
    m.mse_bias_sq = decomposition.bias_sq;
    m.mse_variance = decomposition.variance;
    m.error_rate = error_rate(psi, points);
    m.blip_abs_bias = blip_abs_bias(psi, points);
    m.mean_psi = Vector::Zero(3);
    for (const auto& p : psi) m.mean_psi += p;
    m.mean_psi /= static_cast<double>(psi.size());
    m.abs_bias = {std::abs(m.mean_psi[0] - kTruePsi[0]), std::abs(m.mean_psi[2] - kTruePsi[2]),
                  std::abs(m.mean_psi[1] - kTruePsi[1])};
    if (population) {
      std::vector<double> values(psi.size());
      parallel_for(static_cast<int>(psi.size()), config.threads,
                   [&](int r) { values[static_cast<std::size_t>(r)] = population->value(psi[static_cast<std::size_t>(r)]); });
      double s = 0.0;
      for (const double x : values) s += x;
      m.value = s / static_cast<double>(values.size());
    }
    metrics.variants.push_back(std::move(m));
  }
  return metrics;
}

}  // namespace dwols::sim
