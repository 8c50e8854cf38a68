// Acceptance suite: one PASS/FAIL line per criterion.
//
// Exit status is 0 when every criterion lands on its expected outcome. A few
// criteria are known to be red (see kExpectedRed and the README); those are
// reported as FAIL and do not break the run, but an unexpected PASS or FAIL
// does. Set TRUNCOUNT_ACCEPTANCE_STRICT=1 to fail on any red line.

#include <fmt/format.h>

#include <chrono>
#include <cmath>
#include <cstdlib>
#include <functional>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "cli.hpp"
#include "json.hpp"
#include "report.hpp"
#include "truncount/dataset.hpp"
#include "truncount/error.hpp"
#include "truncount/estimators.hpp"
#include "truncount/glm.hpp"
#include "truncount/simulation.hpp"

using namespace truncount;
using Eigen::VectorXd;
using nlohmann::json;

namespace {

const std::string kData = TRUNCOUNT_DATA_DIR;
const std::string kConfigs = TRUNCOUNT_CONFIG_DIR;

// Criteria that do not pass with this implementation; each is analysed in
// the README.
const std::set<int> kExpectedRed = {1, 3, 5, 6};

// Comparisons against tolerance edges allow for rounding in the last place.
constexpr double kEdge = 1e-9;

bool within(double x, double target, double tol) { return std::abs(x - target) <= tol + kEdge; }

struct Outcome {
  bool pass = false;
  std::string detail;
};

struct Criterion {
  int id;
  std::string name;
  double budget_s;  // runtime target, 0 for none
  std::function<Outcome()> check;
};

json run_json(std::vector<std::string> args) {
  args.push_back("--json");
  std::ostringstream out, err;
  int code = cli::run(args, out, err);
  if (code != cli::kExitOk) throw std::runtime_error("truncount exited " + std::to_string(code) + ": " + err.str());
  return json::parse(out.str());
}

const json& by_estimator(const json& list, const std::string& name) {
  for (const auto& e : list)
    if (e["estimator"] == name) return e;
  throw std::runtime_error("no " + name + " estimate");
}

// ---------------------------------------------------------------------------

Outcome model_table() {
  json tables = run_json({"select", "--data", kData + "/case_study.csv"})["results"]["tables"];
  // reference values: loglik, BIC per family and predictor (one decimal)
  const double ref[3][5][2] = {
      {{-23.7, 50.7}, {-23.4, 53.4}, {-23.0, 52.6}, {-23.0, 55.9}, {-22.7, 58.6}},
      {{-23.7, 54.0}, {-23.4, 56.7}, {-23.0, 55.9}, {-23.0, 59.2}, {-23.7, 61.9}},
      {{-7.8, 18.6}, {-7.0, 20.2}, {-7.8, 21.6}, {-7.0, 23.2}, {-5.7, 23.5}}};
  int ok = 0, total = 0;
  std::string misses;
  for (int f = 0; f < 3; ++f)
    for (int s = 0; s < 5; ++s) {
      const json& row = tables[f]["rows"][s];
      double got[2] = {row["loglik"].get<double>(), row["bic"].get<double>()};
      for (int k = 0; k < 2; ++k) {
        ++total;
        if (within(got[k], ref[f][s][k], 0.05)) {
          ++ok;
        } else {
          misses += fmt::format("; {} predictor {} {} {:.2f} vs {:.1f}", tables[f]["family"].get<std::string>(),
                                s + 1, k == 0 ? "loglik" : "BIC", got[k], ref[f][s][k]);
        }
      }
    }
  return {ok == total, fmt::format("{}/{} cells within 0.05{}", ok, total, misses)};
}

Outcome case_study_estimates() {
  json est = run_json({"estimate", "--data", kData + "/case_study.csv"})["results"]["estimates"];
  struct Ref {
    const char* name;
    double n, var, lo, hi;
  };
  const Ref refs[] = {{"horvitz-thompson", 134, 1677, 51, 214},
                      {"generalised-chao", 173, 12707, 27, 394},
                      {"generalised-zelterman", 175, 13425, 27, 402}};
  bool pass = true;
  std::string detail;
  for (const auto& r : refs) {
    const json& e = by_estimator(est, r.name);
    double n = e["n_hat"], v = e["variance"], lo = e["ci_lower"], hi = e["ci_upper"];
    bool ok = within(std::round(n), r.n, 1) && within(v, r.var, 0.05 * r.var) && within(lo, r.lo, 3) &&
              within(hi, r.hi, 3);
    pass = pass && ok;
    detail += fmt::format("{}{} {:.0f} var {:.0f} ({:.0f}, {:.0f})", detail.empty() ? "" : "; ",
                          short_name(parse_estimator(r.name)), n, v, lo, hi);
  }
  return {pass, detail};
}

Outcome outlier_case_study() {
  json est = run_json({"estimate", "--data", kData + "/case_study.csv", "--append",
                       kData + "/case_study_outliers.csv"})["results"]["estimates"];
  const json& ht = by_estimator(est, "horvitz-thompson");
  double gc = by_estimator(est, "generalised-chao")["n_hat"];
  double gz = by_estimator(est, "generalised-zelterman")["n_hat"];
  double n = ht["n_hat"], upper = ht["ci_upper"];
  bool ok_gc = within(std::round(gc), 176, 2), ok_gz = within(std::round(gz), 180, 2);
  bool ok_ht = n >= 1e5 && n <= 5e6 && upper >= 1e7;
  return {ok_gc && ok_gz && ok_ht,
          fmt::format("gc {:.0f} (176 +/- 2) {}; gz {:.0f} (180 +/- 2) {}; ht {:.0f} [{}] upper {:.3g} [{}]", gc,
                      ok_gc ? "ok" : "off", gz, ok_gz ? "ok" : "off", n, ht["model"]["family"].get<std::string>(),
                      upper, ok_ht ? "ok" : "off")};
}

// Shared Monte Carlo runs.
struct Sweeps {
  std::vector<SweepColumn> n1000;
  std::vector<SweepColumn> n500;
};

Sweeps& sweeps() {
  static Sweeps s;
  return s;
}

const EstimatorPerformance& perf(const SweepColumn& c, std::size_t k) { return c.result->report.estimators[k]; }

const SweepColumn& column(const std::vector<SweepColumn>& cols, double p) {
  for (const auto& c : cols)
    if (std::abs(c.proportion - p) < 1e-12) return c;
  throw std::runtime_error(fmt::format("no sweep column for proportion {}", p));
}

struct PerfRef {
  double acc, acc_tol, prec, prec_tol, cov, cov_tol;
};

bool check_perf(const EstimatorPerformance& p, const PerfRef& r, std::string& detail) {
  bool ok = within(p.accuracy, r.acc, r.acc_tol) && within(p.precision, r.prec, r.prec_tol) &&
            within(p.coverage, r.cov, r.cov_tol);
  detail += fmt::format("{}{} {:.1f}/{:.1f}/{:.1f}%{}", detail.empty() ? "" : "; ", short_name(p.estimator),
                        p.accuracy, p.precision, p.coverage, ok ? "" : " (off)");
  return ok;
}

Outcome sweep_no_outliers() {
  SimConfig cfg = load_sim_config(kConfigs + "/sweep_n1000.json");
  sweeps().n1000 = robustness_sweep(cfg, cfg.sweep_proportions);
  const SweepColumn& c = column(sweeps().n1000, 0.0);
  const PerfRef refs[3] = {{16, 5, 95, 10, 95.5, 2}, {25, 6, 162, 15, 96.4, 2}, {29, 7, 181, 15, 95.7, 2}};
  std::string detail;
  bool pass = true;
  for (std::size_t k = 0; k < 3; ++k) pass = check_perf(perf(c, k), refs[k], detail) && pass;
  return {pass, "S = " + std::to_string(cfg.replicates) + ": " + detail};
}

Outcome robustness_pattern() {
  const auto& cols = sweeps().n1000;
  const SweepColumn &c0 = column(cols, 0.0), &c5 = column(cols, 0.005), &c20 = column(cols, 0.02);
  bool ht_cov = perf(c5, 0).coverage < 20;
  bool others_cov = perf(c5, 1).coverage >= 93 - kEdge && perf(c5, 2).coverage >= 93 - kEdge;
  bool ht_acc = perf(c20, 0).accuracy >= 1e4;
  bool gc_acc = within(perf(c20, 1).accuracy, perf(c0, 1).accuracy, 6);
  return {ht_cov && others_cov && ht_acc && gc_acc,
          fmt::format("0.5%: ht coverage {:.1f}% (< 20) {}, gc/gz {:.1f}/{:.1f}% {}; 2%: ht accuracy {:.4g} "
                      "(>= 1e4) {}, gc accuracy {:.1f} vs {:.1f} {}",
                      perf(c5, 0).coverage, ht_cov ? "ok" : "off", perf(c5, 1).coverage, perf(c5, 2).coverage,
                      others_cov ? "ok" : "off", perf(c20, 0).accuracy, ht_acc ? "ok" : "off",
                      perf(c20, 1).accuracy, perf(c0, 1).accuracy, gc_acc ? "ok" : "off")};
}

Outcome small_population() {
  SimConfig cfg = load_sim_config(kConfigs + "/sweep_n500.json");
  sweeps().n500 = robustness_sweep(cfg, {0.0, 0.01});
  std::string detail;
  bool base = check_perf(perf(sweeps().n500[0], 0), {11, 4, 67, 8, 94.8, 2}, detail);
  double cov = perf(sweeps().n500[1], 0).coverage;
  bool outl = cov < 30;
  return {base && outl, fmt::format("0%: {}; 1%: ht coverage {:.1f}% (< 30) {}", detail, cov, outl ? "ok" : "off")};
}

Outcome analytic_reductions() {
  std::mt19937_64 rng(424242);
  std::uniform_int_distribution<int> size(4, 40), big(3, 9);
  std::bernoulli_distribution coin(0.5);
  double worst_abs = 0.0;
  int done = 0;
  while (done < 100) {
    int n = size(rng);
    std::vector<StudyRecord> r;
    long long f1 = 0, f2 = 0;
    for (int i = 0; i < n; ++i) {
      int c = coin(rng) ? (coin(rng) ? 2 : big(rng)) : 1;
      f1 += c == 1;
      f2 += c == 2;
      r.push_back(StudyRecord{"s" + std::to_string(i), c, 1.0, 0.5, false});
    }
    if (f1 == 0 || f2 == 0) continue;
    Dataset d(r);
    Dataset sample = ones_and_twos(d);
    FittedModel m = fit_truncated_binomial(build_design(sample, PredictorSpec(1)), sample.counts());
    double chao = n + double(f1) * f1 / (2.0 * f2);
    double zelt = n / (1.0 - std::exp(-2.0 * f2 / f1));
    worst_abs = std::max({worst_abs, std::abs(generalised_chao(d, m).n_hat - chao),
                          std::abs(generalised_zelterman(d, m).n_hat - zelt)});
    ++done;
  }
  return {worst_abs <= 1e-9, fmt::format("{} datasets; largest absolute difference {:.2e} (<= 1e-9)", done, worst_abs)};
}

VectorXd fd_gradient(const std::function<double(const VectorXd&)>& f, const VectorXd& x, double h = 1e-5) {
  VectorXd g(x.size());
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    VectorXd a = x, b = x;
    a(i) += h;
    b(i) -= h;
    g(i) = (f(a) - f(b)) / (2 * h);
  }
  return g;
}

double rel_err(const VectorXd& a, const VectorXd& b) {
  return (a - b).lpNorm<Eigen::Infinity>() / std::max(1.0, b.lpNorm<Eigen::Infinity>());
}

VectorXd theta_of(const FittedModel& m) {
  VectorXd t = m.beta;
  if (m.dispersion) {
    t.conservativeResize(t.size() + 1);
    t(t.size() - 1) = std::log(*m.dispersion);
  }
  return t;
}

FittedModel with_theta(FittedModel m, const VectorXd& t) {
  m.beta = t.head(m.beta.size());
  if (m.dispersion) m.dispersion = std::exp(t(t.size() - 1));
  return m;
}

Outcome gradient_suite() {
  Dataset d = impute_missing_proportion(load_csv(kData + "/case_study.csv"));
  double worst = 0.0;
  int checks = 0;
  std::string worst_at;
  auto note = [&](double e, const std::string& what) {
    ++checks;
    if (e > worst) worst = e, worst_at = what;
  };
  for (Family f : {Family::ZtPoisson, Family::ZtNegBin, Family::TruncBinomial}) {
    Dataset sample = fitting_sample(d, f);
    FittedModel m = select_model(d, f);
    DesignMatrix x = build_design(sample, m.spec);
    VectorXd t = theta_of(m);
    auto counts = sample.counts();
    auto value = [&](const VectorXd& th) { return evaluate_likelihood(f, x, counts, th, false).value; };
    note(rel_err(evaluate_likelihood(f, x, counts, t).gradient, fd_gradient(value, t)),
         std::string(to_string(f)) + " score");
  }
  FittedModel pois = select_model(d, Family::ZtPoisson);
  FittedModel bin = select_model(d, Family::TruncBinomial);
  for (auto [e, m] : {std::pair{Estimator::HorvitzThompson, pois}, std::pair{Estimator::GeneralisedChao, bin},
                      std::pair{Estimator::GeneralisedZelterman, bin}}) {
    auto n_of = [&, e = e, m = m](const VectorXd& th) { return estimate_at(e, d, with_theta(m, th)); };
    note(rel_err(delta_gradient(e, d, m), fd_gradient(n_of, theta_of(m))),
         std::string(short_name(e)) + " gradient");
  }
  return {worst <= 1e-4, fmt::format("{} checks on the selected fits; worst relative error {:.1e} ({})", checks,
                                     worst, worst_at)};
}

Outcome imputation() {
  Dataset raw = load_csv(kData + "/case_study.csv");
  Dataset filled = impute_missing_proportion(raw);
  for (std::size_t i = 0; i < raw.size(); ++i)
    if (!raw[i].prop_women) {
      double v = *filled[i].prop_women;
      return {within(v, 0.823, 0.001), fmt::format("{} imputed to {:.6f} (0.823 +/- 0.001)", raw[i].id, v)};
    }
  return {false, "no record with a missing proportion"};
}

std::string study_bytes(const StudyResult& r) {
  std::vector<SweepColumn> cols(1);
  cols[0].proportion = r.config.outlier_proportion;
  cols[0].result = r;
  std::ostringstream s;
  cli::write_performance_csv(s, cols);
  cli::write_replicates(s, cols);
  s << cli::performance_json(cols).dump(2);
  return s.str();
}

Outcome determinism() {
  SimConfig cfg = load_sim_config(kConfigs + "/sweep_n1000.json");
  cfg.outlier_proportion = 0.0;
  std::string one = study_bytes(run_study(cfg, 1));
  std::string four = study_bytes(run_study(cfg, 4));
  std::string sweep = study_bytes(*column(sweeps().n1000, 0.0).result);
  bool ok = one == four && one == sweep;
  return {ok, fmt::format("1 thread vs 4 threads vs sweep run: {} bytes, {}", one.size(),
                          ok ? "identical" : "different")};
}

}  // namespace

int main() {
  const std::vector<Criterion> criteria = {
      {1, "model-selection table", 1, model_table},
      {2, "case-study estimates", 1, case_study_estimates},
      {3, "outlier-augmented case study", 0, outlier_case_study},
      {4, "N = 1000 sweep, no outliers", 300, sweep_no_outliers},
      {5, "N = 1000 robustness pattern", 0, robustness_pattern},
      {6, "N = 500 spot check", 0, small_population},
      {7, "analytic reductions", 0, analytic_reductions},
      {8, "gradient suite", 0, gradient_suite},
      {9, "imputation", 0, imputation},
      {10, "determinism across thread counts", 0, determinism},
  };
  const char* strict_env = std::getenv("TRUNCOUNT_ACCEPTANCE_STRICT");
  const bool strict = strict_env && std::string(strict_env) == "1";

  int passed = 0, unexpected = 0;
  for (const auto& c : criteria) {
    auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.check();
    } catch (const std::exception& e) {
      o = {false, std::string("error: ") + e.what()};
    }
    double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (c.budget_s > 0 && secs > c.budget_s) {
      o.pass = false;
      o.detail += fmt::format("; runtime {:.1f} s over the {:.0f} s target", secs, c.budget_s);
    }
    bool expected_red = kExpectedRed.count(c.id) > 0;
    std::string tag;
    if (o.pass && expected_red) tag = "  [unexpected pass: update the expected-red list]";
    if (!o.pass && expected_red) tag = "  [expected]";
    if (!o.pass && !expected_red) tag = "  [unexpected]";
    fmt::print("{} {:>2} {}: {} ({:.2f} s){}\n", o.pass ? "PASS" : "FAIL", c.id, c.name, o.detail, secs, tag);
    std::fflush(stdout);
    passed += o.pass;
    if (o.pass == expected_red) ++unexpected;
  }
  fmt::print("{}/{} criteria pass; {} expected red; {} unexpected outcome(s)\n", passed, criteria.size(),
             kExpectedRed.size(), unexpected);
  if (unexpected > 0) return 1;
  if (strict && passed != static_cast<int>(criteria.size())) return 1;
  return 0;
}
