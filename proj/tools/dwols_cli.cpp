// dwols: simulation study, end-to-end analysis, BMI utility transform and
// report tables for doubly-weighted treatment rules.

#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "dwols/bootstrap.hpp"
#include "dwols/data.hpp"
#include "dwols/model_spec.hpp"
#include "dwols/pipeline.hpp"
#include "dwols/report.hpp"
#include "dwols/sim.hpp"
#include "dwols/utility.hpp"

namespace {

using nlohmann::ordered_json;
using namespace dwols;

std::vector<Variant> parse_variant_list(const std::string& list) {
  std::vector<Variant> out;
  std::stringstream in(list);
  std::string item;
  while (std::getline(in, item, ',')) {
    if (!item.empty()) out.push_back(parse_variant(item));
  }
  if (out.empty()) throw std::invalid_argument("empty variant list");
  return out;
}

std::string fmt(double v, int precision = 6) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", precision, v);
  return buf;
}

// Writes `text` to `path`, or to stdout when the path is empty or "-".
void emit(const std::string& path, const std::string& text) {
  if (path.empty() || path == "-") {
    std::cout << text;
    return;
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write '" + path + "'");
  out << text;
}

// ---- simulate ---------------------------------------------------------------

struct SimulateArgs {
  std::string config;
  std::optional<int> scenario;
  std::optional<int> n;
  std::optional<int> reps;
  std::optional<std::uint64_t> seed;
  std::string variants;
  std::optional<int> threads;
  std::optional<int> value_population;
  std::string out;
  std::string summary;
};

int cmd_simulate(const SimulateArgs& a) {
  sim::ScenarioConfig c = a.config.empty() ? sim::ScenarioConfig::preset(a.scenario.value_or(4))
                                           : sim::load_scenario_config(a.config);
  if (a.scenario && !a.config.empty()) {
    c.scenario = *a.scenario;
    c.gamma = sim::scenario_gamma(*a.scenario);
  }
  if (a.n) c.n = *a.n;
  if (a.reps) c.replications = *a.reps;
  if (a.seed) c.seed = *a.seed;
  if (a.threads) c.threads = *a.threads;
  if (a.value_population) c.value_population = *a.value_population;
  if (!a.variants.empty()) c.variants = parse_variant_list(a.variants);
  c.validate();

  const auto metrics = sim::run_scenario(c);
  std::ostringstream csv;
  report::write_metrics_csv(csv, report::metrics_rows(metrics));
  emit(a.out, csv.str());

  std::ostringstream summary;
  report::write_summary(summary, metrics);
  if (!a.summary.empty()) {
    emit(a.summary, summary.str());
  } else {
    std::cerr << summary.str();
  }
  return 0;
}

// ---- cohort -----------------------------------------------------------------

struct CohortArgs {
  int scenario = 4;
  int n = 500;
  std::uint64_t seed = 1;
  int replicate = 0;
  std::string out;
};

int cmd_cohort(const CohortArgs& a) {
  auto c = sim::ScenarioConfig::preset(a.scenario);
  c.n = a.n;
  c.seed = a.seed;
  sim::CohortStats stats;
  const auto data = sim::simulate_cohort(c, a.replicate, &stats);
  std::ostringstream csv;
  write_csv(csv, data);
  emit(a.out, csv.str());
  std::cerr << "cohort: " << data.subject_count() << " subjects, " << data.size() << " rows, "
            << analysis_rows(data).size() << " outcomes, " << stats.clamped_draws << " clamped draws\n";
  return 0;
}

// ---- analyze ----------------------------------------------------------------

struct AnalyzeArgs {
  std::string data;
  std::string spec;
  std::string variants = "DW1";
  int bootstrap = 0;
  std::uint64_t seed = 1;
  int threads = 1;
  std::optional<double> tau;
  std::string arm = "A=1";
  std::string out;
};

ordered_json named_values(const std::vector<std::string>& names, const Vector& values) {
  ordered_json j = ordered_json::object();
  for (std::size_t i = 0; i < names.size(); ++i) j[names[i]] = values[static_cast<Eigen::Index>(i)];
  return j;
}

int cmd_analyze(const AnalyzeArgs& a) {
  if (a.bootstrap < 0) throw std::invalid_argument("--bootstrap must be >= 0");
  const auto variants = parse_variant_list(a.variants);
  const auto data = load_csv(a.data, {}, a.tau);
  ModelSpec spec;
  try {
    spec = load_model_spec(a.spec);
  } catch (const std::exception& e) {
    throw std::runtime_error(std::string("model spec: ") + e.what());
  }

  std::ostringstream text;
  ordered_json doc;
  doc["data"] = {{"path", a.data},
                 {"subjects", data.subject_count()},
                 {"rows", data.size()},
                 {"outcomes", analysis_rows(data).size()}};
  doc["fits"] = ordered_json::array();
  text << "data: " << a.data << " (" << data.subject_count() << " subjects, " << data.size() << " rows, "
       << analysis_rows(data).size() << " outcomes)\n";

  PipelineContext ctx(data);
  for (const auto v : variants) {
    PipelineFit fit;
    try {
      fit = ctx.fit(spec, v);
    } catch (const std::exception& e) {
      throw std::runtime_error("variant " + std::string(to_string(v)) + ": " + e.what());
    }
    ordered_json j;
    j["variant"] = to_string(v);
    j["rule"] = describe_rule(fit.blip, a.arm);
    j["beta"] = named_values(fit.blip.beta_names, fit.blip.beta);
    j["psi"] = named_values(fit.blip.psi_names, fit.blip.psi);
    const auto& ws = fit.blip.weight_summary;
    j["weights"] = {{"min", ws.min}, {"mean", ws.mean}, {"max", ws.max}};

    text << "\n[" << to_string(v) << "]\n" << describe_rule(fit.blip, a.arm) << "\n";
    for (std::size_t k = 0; k < fit.blip.psi_names.size(); ++k) {
      text << "  psi " << fit.blip.psi_names[k] << " = " << fmt(fit.blip.psi[static_cast<Eigen::Index>(k)]) << "\n";
    }
    for (std::size_t k = 0; k < fit.blip.beta_names.size(); ++k) {
      text << "  beta " << fit.blip.beta_names[k] << " = " << fmt(fit.blip.beta[static_cast<Eigen::Index>(k)])
           << "\n";
    }
    text << "  weights: min " << fmt(ws.min) << ", mean " << fmt(ws.mean) << ", max " << fmt(ws.max) << "\n";

    if (fit.visit) {
      const auto& vf = *fit.visit;
      j["visit_model"] = {{"gamma", named_values(vf.term_names, vf.gamma)},
                          {"events", vf.events},
                          {"log_partial_likelihood", vf.log_partial_likelihood},
                          {"iterations", vf.newton.iterations},
                          {"intensity_above_one", vf.intensity_above_one}};
      text << "  visit model (" << vf.events << " events):";
      for (std::size_t k = 0; k < vf.term_names.size(); ++k) {
        text << " " << vf.term_names[k] << "=" << fmt(vf.gamma[static_cast<Eigen::Index>(k)]);
      }
      text << "\n";
      if (vf.intensity_above_one > 0) {
        text << "  note: " << vf.intensity_above_one << " fitted interval intensities exceed 1\n";
      }
    }
    if (fit.propensity) {
      const auto& pf = *fit.propensity;
      j["propensity_model"] = {{"coefficients", named_values(pf.term_names, pf.kappa)},
                               {"marginal_p1", pf.marginal_p1},
                               {"iterations", pf.newton.iterations}};
      const auto& pr = *fit.positivity;
      j["positivity"] = {{"min_propensity", pr.min_propensity}, {"max_propensity", pr.max_propensity},
                         {"lower_threshold", pr.lower_threshold}, {"upper_threshold", pr.upper_threshold},
                         {"below_lower", pr.below_lower},         {"above_upper", pr.above_upper},
                         {"treated", pr.treated},                 {"untreated", pr.untreated}};
      text << "  positivity: propensity range [" << fmt(pr.min_propensity) << ", " << fmt(pr.max_propensity)
           << "], " << pr.below_lower << " below " << pr.lower_threshold << ", " << pr.above_upper << " above "
           << pr.upper_threshold << "; arms A=1: " << pr.treated << ", A=0: " << pr.untreated << "\n";
    }

    if (a.bootstrap > 0) {
      BootstrapOptions opts;
      opts.replicates = a.bootstrap;
      opts.seed = a.seed;
      opts.threads = a.threads;
      const auto boot = bootstrap_ci(data, spec, v, opts);
      ordered_json ci = ordered_json::array();
      text << "  bootstrap (B = " << boot.replicates << ", failed " << boot.failed_replicates
           << "): 95% percentile intervals\n";
      for (const auto& c : boot.coefficients) {
        ci.push_back({{"name", c.name}, {"estimate", c.estimate}, {"lower", c.lower}, {"upper", c.upper}});
        text << "    " << c.name << "  " << fmt(c.estimate) << "  [" << fmt(c.lower) << ", " << fmt(c.upper)
             << "]\n";
      }
      j["bootstrap"] = {{"replicates", boot.replicates},
                        {"failed_replicates", boot.failed_replicates},
                        {"seed", a.seed},
                        {"intervals", ci}};
    }
    doc["fits"].push_back(std::move(j));
  }

  std::cout << text.str();
  if (!a.out.empty()) emit(a.out, doc.dump(2) + "\n");
  return 0;
}

// ---- utility ----------------------------------------------------------------

struct UtilityArgs {
  std::optional<double> bmi0;
  std::optional<double> bmi;
  std::string data;
  std::string baseline_column = "bmi0";
  std::string bmi_column = "bmi";
  std::string out;
};

// Replaces Y on event rows by the BMI utility. Event rows whose utility is
// missing are turned into non-event rows so they drop out of the analysis.
int utility_file(const UtilityArgs& a) {
  std::ifstream in(a.data);
  if (!in) throw std::runtime_error("cannot open '" + a.data + "'");
  std::string line;
  if (!std::getline(in, line)) throw std::runtime_error(a.data + ": empty file");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  std::vector<std::string> header;
  for (const auto f : dwols::detail::split_csv_line(line)) header.emplace_back(f);
  const auto col = [&](const std::string& name) {
    for (std::size_t j = 0; j < header.size(); ++j) {
      if (header[j] == name) return j;
    }
    throw std::runtime_error(a.data + ": missing column '" + name + "'");
  };
  const std::size_t c_event = col("event"), c_y = col("Y"), c_b0 = col(a.baseline_column),
                    c_b = col(a.bmi_column);

  std::ostringstream out;
  out << line << '\n';
  std::size_t line_no = 1, outcomes = 0, dropped = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (dwols::detail::trim(line).empty()) continue;
    std::vector<std::string> f;
    for (const auto x : dwols::detail::split_csv_line(line)) f.emplace_back(x);
    if (f.size() != header.size()) {
      throw std::runtime_error(a.data + ":" + std::to_string(line_no) + ": expected " +
                               std::to_string(header.size()) + " fields, found " + std::to_string(f.size()));
    }
    if (f[c_event] == "1") {
      const auto b0 = dwols::detail::parse_real(f[c_b0]);
      const auto bt = dwols::detail::parse_real(f[c_b]);
      const auto u = (b0 && bt) ? bmi_utility(*b0, *bt) : std::nullopt;
      if (u) {
        f[c_y] = dwols::detail::format_real(*u);
        ++outcomes;
      } else {
        f[c_event] = "0";
        f[c_y].clear();
        ++dropped;
      }
    } else {
      f[c_y].clear();
    }
    for (std::size_t j = 0; j < f.size(); ++j) out << (j ? "," : "") << f[j];
    out << '\n';
  }
  emit(a.out, out.str());
  std::cerr << "utility: " << outcomes << " outcomes computed, " << dropped
            << " event rows dropped (BMI missing or outside [" << kBmiValidMin << ", " << kBmiValidMax << "])\n";
  return 0;
}

int cmd_utility(const UtilityArgs& a) {
  if (!a.data.empty()) return utility_file(a);
  if (!a.bmi0 || !a.bmi) throw std::invalid_argument("utility: give --bmi0 and --bmi, or --data");
  const auto u = bmi_utility(*a.bmi0, *a.bmi);
  std::cout << (u ? fmt(*u, 4) : std::string("NA")) << '\n';
  return 0;
}

// ---- report -----------------------------------------------------------------

int cmd_report(const std::vector<std::string>& paths, const std::string& out) {
  std::vector<std::vector<report::MetricsRow>> inputs;
  for (const auto& p : paths) inputs.push_back(report::load_metrics_csv(p));
  emit(out, report::render_report(inputs));
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Doubly-weighted estimation of individualized treatment rules with irregular visits"};
  app.require_subcommand(1);

  SimulateArgs sa;
  auto* simulate = app.add_subcommand("simulate", "Run a simulation scenario and write the metrics CSV");
  simulate->add_option("--config", sa.config, "Scenario config (JSON)")->check(CLI::ExistingFile);
  simulate->add_option("--scenario", sa.scenario, "Reference scenario 1-4")->check(CLI::Range(1, 4));
  simulate->add_option("--n", sa.n, "Subjects per cohort");
  simulate->add_option("--reps", sa.reps, "Replications M");
  simulate->add_option("--seed", sa.seed, "Root seed");
  simulate->add_option("--variants", sa.variants, "Comma-separated subset of DW1,DW2,DW3,DW4,OLS,IPT,IIV");
  simulate->add_option("--threads", sa.threads, "Worker threads");
  simulate->add_option("--value-population", sa.value_population, "Evaluation population size (0 skips)");
  simulate->add_option("--out", sa.out, "Metrics CSV path (default stdout)");
  simulate->add_option("--summary", sa.summary, "Summary text path (default stderr)");

  CohortArgs ca;
  auto* cohort = app.add_subcommand("cohort", "Write one simulated cohort as a long-format CSV");
  cohort->add_option("--scenario", ca.scenario, "Reference scenario 1-4")->check(CLI::Range(1, 4));
  cohort->add_option("--n", ca.n, "Subjects");
  cohort->add_option("--seed", ca.seed, "Root seed");
  cohort->add_option("--replicate", ca.replicate, "Replicate index");
  cohort->add_option("--out", ca.out, "CSV path (default stdout)");

  AnalyzeArgs aa;
  auto* analyze = app.add_subcommand("analyze", "Fit a treatment rule to a long-format CSV");
  analyze->add_option("--data", aa.data, "Long-format CSV")->required()->check(CLI::ExistingFile);
  analyze->add_option("--spec", aa.spec, "Model spec (JSON)")->required()->check(CLI::ExistingFile);
  analyze->add_option("--variants,--variant", aa.variants, "Estimator variant(s), comma-separated");
  analyze->add_option("--bootstrap", aa.bootstrap, "Bootstrap resamples B (0 disables)");
  analyze->add_option("--seed", aa.seed, "Bootstrap seed");
  analyze->add_option("--threads", aa.threads, "Bootstrap worker threads");
  analyze->add_option("--tau", aa.tau, "End of follow-up (default: last stop time)");
  analyze->add_option("--arm", aa.arm, "Label of the treated arm in the printed rule");
  analyze->add_option("--out", aa.out, "JSON result path");

  UtilityArgs ua;
  auto* utility = app.add_subcommand("utility", "BMI-change utility, for one pair or a whole CSV");
  utility->add_option("--bmi0", ua.bmi0, "Baseline BMI");
  utility->add_option("--bmi", ua.bmi, "BMI at the visit");
  utility->add_option("--data", ua.data, "Long-format CSV with baseline and visit BMI columns")
      ->check(CLI::ExistingFile);
  utility->add_option("--baseline-column", ua.baseline_column, "Baseline BMI column");
  utility->add_option("--bmi-column", ua.bmi_column, "Visit BMI column");
  utility->add_option("--out", ua.out, "Output CSV path (default stdout)");

  std::vector<std::string> report_paths;
  std::string report_out;
  auto* rep = app.add_subcommand("report", "Render metrics CSVs as comparison tables");
  rep->add_option("csv", report_paths, "Metrics CSV files")->required();
  rep->add_option("--out", report_out, "Markdown path (default stdout)");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*simulate) return cmd_simulate(sa);
    if (*cohort) return cmd_cohort(ca);
    if (*analyze) return cmd_analyze(aa);
    if (*utility) return cmd_utility(ua);
    if (*rep) return cmd_report(report_paths, report_out);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
