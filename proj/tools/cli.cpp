#include "cli.hpp"

#include <fmt/format.h>

#include <fstream>
#include <initializer_list>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "plot.hpp"
#include "report.hpp"
#include "truncount/error.hpp"

namespace truncount::cli {

namespace {

struct Options {
  std::string data;
  std::string config;
  std::string out;
  std::optional<std::uint64_t> seed;
  bool json = false;

  // estimate / select
  std::string append;
  std::string estimator = "all";
  std::string family = "auto";
  std::string predictor = "auto";
  double level = 0.95;
  bool no_floor = false;

  // simulate
  std::optional<int> replicates;
  unsigned threads = 0;
};

// Tracks the pipeline stage so error messages can name it.
struct Stage {
  std::string name = "setup";
};

void emit(const Options& o, std::ostream& out, const json& doc, const std::string& text) {
  std::string dumped = doc.dump(2) + "\n";
  if (!o.out.empty()) write_text(o.out, dumped);
  out << (o.json ? dumped : text);
}

std::vector<InputFile> digests(std::initializer_list<std::string> paths) {
  std::vector<InputFile> v;
  for (const auto& p : paths)
    if (!p.empty()) v.push_back(digest(p));
  return v;
}

Dataset load_input(const Options& o, Stage& st, std::ostream& err, json* imputed, bool impute = true) {
  if (o.data.empty()) throw ValidationError("--data is required");
  st.name = "load";
  Dataset d = load_csv(o.data);
  if (impute && d.has_missing_covariates()) {
    st.name = "impute";
    Dataset filled = impute_missing_proportion(d);
    for (std::size_t i = 0; i < d.size(); ++i) {
      if (d[i].prop_women) continue;
      err << fmt::format("note: imputed prop_women for '{}' = {:.6g}\n", d[i].id, *filled[i].prop_women);
      if (imputed) imputed->push_back({{"id", d[i].id}, {"prop_women", *filled[i].prop_women}});
    }
    d = std::move(filled);
  }
  if (!o.append.empty()) {
    st.name = "load";
    Dataset extra = load_csv(o.append);
    if (impute && extra.has_missing_covariates())
      throw ValidationError("appended records must have every covariate");
    d = append_outlier_records(d, extra.records());
  }
  return d;
}

std::optional<PredictorSpec> parse_predictor(const std::string& s) {
  if (s == "auto") return std::nullopt;
  if (s.size() == 1 && s[0] >= '1' && s[0] <= '5') return PredictorSpec(s[0] - '0');
  throw ValidationError("--predictor must be auto or 1-5");
}

FittedModel fit_family(const Dataset& d, Family f, const std::optional<PredictorSpec>& spec) {
  if (!spec) return select_model(d, f);
  Dataset sample = fitting_sample(d, f);
  FittedModel m = fit(f, build_design(sample, *spec), sample.counts());
  if (!m.converged)
    throw ConvergenceError(fmt::format("{} fit with predictor {} did not converge", to_string(f), spec->index()));
  return m;
}

FittedModel fit_ht(const Dataset& d, const std::string& family, const std::optional<PredictorSpec>& spec) {
  if (family == "poisson" || family == "zt-poisson") return fit_family(d, Family::ZtPoisson, spec);
  if (family == "negbin" || family == "zt-negbin") return fit_family(d, Family::ZtNegBin, spec);
  if (family != "auto") throw ValidationError("--family must be auto, poisson or negbin");
  std::optional<FittedModel> best;
  std::string why;
  for (Family f : {Family::ZtPoisson, Family::ZtNegBin}) {
    try {
      FittedModel m = fit_family(d, f, spec);
      if (!best || m.bic < best->bic) best = std::move(m);
    } catch (const NumericalError& e) {
      why = e.what();
    }
  }
  if (!best) throw ConvergenceError("no count model converged: " + why);
  return *best;
}

json model_json(const FittedModel& m) {
  json beta = json::array();
  for (Eigen::Index i = 0; i < m.beta.size(); ++i) beta.push_back(m.beta(i));
  return {{"family", std::string(to_string(m.family))},
          {"predictor", m.spec.index()},
          {"beta", beta},
          {"dispersion", m.dispersion ? number(*m.dispersion) : json(nullptr)},
          {"at_boundary", m.at_boundary},
          {"loglik", m.loglik},
          {"bic", m.bic},
          {"n_used", m.n_used},
          {"converged", m.converged},
          {"iterations", m.iterations}};
}

int cmd_estimate(const Options& o, Stage& st, std::ostream& out, std::ostream& err) {
  json imputed = json::array();
  Dataset d = load_input(o, st, err, &imputed);
  auto spec = parse_predictor(o.predictor);
  if (!(o.level > 0.0 && o.level < 1.0)) throw ValidationError("--level must lie in (0, 1)");

  std::vector<Estimator> wanted;
  if (o.estimator == "all")
    wanted.assign(kStudyEstimators.begin(), kStudyEstimators.end());
  else
    wanted.push_back(parse_estimator(o.estimator));
  for (Estimator e : wanted)
    if (e != Estimator::HorvitzThompson && e != Estimator::GeneralisedChao &&
        e != Estimator::GeneralisedZelterman)
      throw ValidationError("--estimator must be ht, gc, gz or all");

  std::optional<FittedModel> count_model, binomial_model;
  std::vector<PopulationEstimate> rows;
  for (Estimator e : wanted) {
    st.name = "fit";
    PopulationEstimate est;
    if (e == Estimator::HorvitzThompson) {
      if (!count_model) count_model = fit_ht(d, o.family, spec);
      st.name = "estimate";
      est = horvitz_thompson(d, *count_model);
    } else {
      if (!binomial_model) binomial_model = fit_family(d, Family::TruncBinomial, spec);
      st.name = "estimate";
      est = e == Estimator::GeneralisedChao ? generalised_chao(d, *binomial_model)
                                            : generalised_zelterman(d, *binomial_model);
    }
    if (est.variance) est = wald_ci(est, o.level, !o.no_floor);
    rows.push_back(est);
  }

  st.name = "report";
  json doc = report_header("estimate", o.seed, digests({o.data, o.append}));
  json res;
  res["n_observed"] = d.size();
  res["level"] = o.level;
  res["floor_at_observed"] = !o.no_floor;
  res["imputed"] = imputed;
  res["estimates"] = json::array();
  std::string text = fmt::format("{:<22} {:<15} {:>4} {:>5} {:>10} {:>14} {:>10} {:>12}\n", "estimator",
                                 "family", "spec", "n", "N_hat", "variance", "ci_lower", "ci_upper");
  for (const auto& e : rows) {
    const FittedModel& m = *e.model;
    res["estimates"].push_back({{"estimator", std::string(to_string(e.estimator))},
                                {"n_hat", number(e.n_hat)},
                                {"variance", e.variance ? number(*e.variance) : json(nullptr)},
                                {"ci_lower", e.ci_lower ? number(*e.ci_lower) : json(nullptr)},
                                {"ci_upper", e.ci_upper ? number(*e.ci_upper) : json(nullptr)},
                                {"n_observed", e.n_observed},
                                {"model", model_json(m)}});
    text += fmt::format("{:<22} {:<15} {:>4} {:>5} {:>10} {:>14} {:>10} {:>12}\n", to_string(e.estimator),
                        to_string(m.family), m.spec.index(), e.n_observed, show_int(e.n_hat),
                        e.variance ? show_int(*e.variance) : "n/a", e.ci_lower ? show_int(*e.ci_lower) : "n/a",
                        e.ci_upper ? show_int(*e.ci_upper) : "n/a");
  }
  text += fmt::format("{:.0f}% Wald intervals{}\n", o.level * 100.0,
                      o.no_floor ? "" : "; lower limits floored at the observed n");
  for (const auto& e : rows)
    if (e.model->at_boundary)
      text += fmt::format("note: {} dispersion at its bound ({:g})\n", to_string(e.estimator),
                          e.model->dispersion.value_or(0.0));
  doc["results"] = res;
  emit(o, out, doc, text);
  return kExitOk;
}

int cmd_select(const Options& o, Stage& st, std::ostream& out, std::ostream& err) {
  Dataset d = load_input(o, st, err, nullptr);
  std::vector<Family> families;
  if (o.family == "auto" || o.family == "all")
    families = {Family::ZtPoisson, Family::ZtNegBin, Family::TruncBinomial};
  else
    families = {parse_family(o.family)};

  st.name = "fit";
  json doc = report_header("select", o.seed, digests({o.data, o.append}));
  json tables = json::array();
  std::string text = fmt::format("{:<15} {:>4} {:>9} {:>9} {:>6} {:>4}  {}\n", "family", "spec", "loglik",
                                 "BIC", "n", "k", "selected");
  for (Family f : families) {
    auto fits = fit_all_specs(d, f);
    int best = -1;
    for (std::size_t i = 0; i < fits.size(); ++i)
      if (fits[i] && fits[i]->converged && (best < 0 || fits[i]->bic < fits[best]->bic))
        best = static_cast<int>(i);
    if (best < 0)
      throw ConvergenceError(fmt::format("no {} model converged on {} records", to_string(f),
                                         fitting_sample(d, f).size()));
    json rows = json::array();
    for (std::size_t i = 0; i < fits.size(); ++i) {
      int index = static_cast<int>(i) + 1;
      if (!fits[i]) {
        rows.push_back({{"predictor", index}, {"converged", false}});
        text += fmt::format("{:<15} {:>4} {:>9} {:>9}\n", to_string(f), index, "failed", "-");
        continue;
      }
      const FittedModel& m = *fits[i];
      json r = model_json(m);
      r["parameters"] = m.n_parameters();
      r["selected"] = static_cast<int>(i) == best;
      rows.push_back(r);
      text += fmt::format("{:<15} {:>4} {:>9} {:>9} {:>6} {:>4}  {}\n", to_string(f), index, show_1dp(m.loglik),
                          show_1dp(m.bic), m.n_used, m.n_parameters(), static_cast<int>(i) == best ? "*" : "");
    }
    tables.push_back({{"family", std::string(to_string(f))}, {"rows", rows}});
  }
  doc["results"] = {{"tables", tables}};
  emit(o, out, doc, text);
  return kExitOk;
}

int cmd_impute(const Options& o, Stage& st, std::ostream& out, std::ostream& err) {
  if (o.data.empty()) throw ValidationError("--data is required");
  st.name = "load";
  Dataset d = load_csv(o.data);
  if (!d.has_missing_covariates()) {
    err << "note: no missing prop_women values; nothing to impute\n";
    return kExitOk;
  }
  st.name = "impute";
  Dataset filled = impute_missing_proportion(d);
  std::string text;
  for (std::size_t i = 0; i < d.size(); ++i)
    if (!d[i].prop_women) text += fmt::format("{}: prop_women = {:.3f}\n", d[i].id, *filled[i].prop_women);
  st.name = "write";
  if (o.out.empty()) {
    write_csv(out, filled);
  } else {
    write_csv(std::filesystem::path(o.out), filled);
    out << text;
  }
  return kExitOk;
}

int cmd_outlier_bounds(const Options& o, Stage& st, std::ostream& out, std::ostream& err) {
  Dataset d = load_input(o, st, err, nullptr, false);
  st.name = "bounds";
  OutlierBounds b = outlier_bounds(d);
  json doc = report_header("outlier-bounds", o.seed, digests({o.data, o.append}));
  doc["results"] = {{"lower", b.lower}, {"upper", b.upper}, {"ratio", b.upper / b.lower}};
  std::string text = fmt::format("lower {:.6g}\nupper {:.6g}\nratio {:.6g}\n", b.lower, b.upper, b.upper / b.lower);
  emit(o, out, doc, text);
  return kExitOk;
}

int cmd_simulate(const Options& o, Stage& st, std::ostream& out, std::ostream&) {
  st.name = "config";
  SimConfig cfg = o.config.empty() ? SimConfig{} : load_sim_config(o.config);
  if (o.seed) cfg.seed = *o.seed;
  if (o.replicates) cfg.replicates = *o.replicates;
  std::vector<double> proportions = cfg.sweep_proportions;
  if (proportions.empty()) proportions.push_back(cfg.outlier_proportion);
  validate(cfg);
  if (o.out.empty()) throw ValidationError("--out (output directory) is required");

  st.name = "simulate";
  auto columns = robustness_sweep(cfg, proportions, resolve_threads(o.threads));

  st.name = "write";
  std::filesystem::path dir(o.out);
  std::filesystem::create_directories(dir);
  std::ostringstream csv, reps;
  write_performance_csv(csv, columns);
  write_replicates(reps, columns);
  write_text(dir / "performance.csv", csv.str());
  write_text(dir / "replicates.csv", reps.str());

  json doc = report_header("simulate", cfg.seed, digests({o.config}));
  doc["config"] = json::parse(sim_config_to_json(cfg));
  doc["results"] = {{"columns", performance_json(columns)}};
  std::string dumped = doc.dump(2) + "\n";
  write_text(dir / "performance.json", dumped);

  std::string text = performance_table(columns);
  for (const auto& c : columns)
    if (!c.result) text += "note: " + c.notice + "\n";
  out << (o.json ? dumped : text);
  return kExitOk;
}

int cmd_plot(const Options& o, Stage& st, std::ostream& out, std::ostream&) {
  if (o.data.empty()) throw ValidationError("--data (replicates CSV) is required");
  if (o.out.empty()) throw ValidationError("--out (output directory) is required");
  st.name = "load";
  std::ifstream in(o.data);
  if (!in) throw ValidationError("cannot open '" + o.data + "'");
  auto rows = read_replicates(in);
  st.name = "plot";
  auto files = write_figures(rows, o.out);
  json doc = report_header("plot", o.seed, digests({o.data}));
  json list = json::array();
  for (const auto& f : files) list.push_back(f.string());
  doc["results"] = {{"figures", list}};
  std::string text;
  for (const auto& f : files) text += "wrote " + f.string() + "\n";
  out << (o.json ? doc.dump(2) + "\n" : text);
  return kExitOk;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Population size estimation for zero-truncated meta-analytic count data", "truncount"};
  app.set_version_flag("--version", TRUNCOUNT_VERSION);
  app.require_subcommand(1);
  app.fallthrough();

  Options o;
  std::optional<std::uint64_t> seed;
  app.add_option("--data", o.data, "Input CSV (id,count,exposure,prop_women,origin_flag) or replicates CSV");
  app.add_option("--config", o.config, "Simulation config (JSON)");
  app.add_option("--out", o.out, "Output file (JSON report or CSV) or directory (simulate, plot)");
  app.add_option("--seed", seed, "Base seed for simulate");
  app.add_flag("--json", o.json, "Print the JSON report instead of the table");

  auto* est = app.add_subcommand("estimate", "Population size estimates with Wald intervals");
  est->add_option("--estimator", o.estimator, "ht, gc, gz or all")->capture_default_str();
  est->add_option("--family", o.family, "Horvitz-Thompson count model: auto, poisson or negbin")
      ->capture_default_str();
  est->add_option("--predictor", o.predictor, "Linear predictor 1-5, or auto for minimum BIC")
      ->capture_default_str();
  est->add_option("--level", o.level, "Confidence level")->capture_default_str();
  est->add_option("--append", o.append, "CSV of extra (outlier) records appended after the data");
  est->add_flag("--no-floor", o.no_floor, "Do not raise interval lower limits to the observed n");

  auto* sel = app.add_subcommand("select", "Log-likelihood and BIC for the five linear predictors");
  sel->add_option("--family", o.family, "poisson, negbin, binomial or all")->capture_default_str();
  sel->add_option("--append", o.append, "CSV of extra records appended after the data");

  app.add_subcommand("impute", "Fill missing prop_women values");
  auto* ob = app.add_subcommand("outlier-bounds", "Outlier-rate band from the observed rates");
  ob->add_option("--append", o.append, "CSV of extra records appended after the data");

  auto* sim = app.add_subcommand("simulate", "Monte Carlo robustness sweep");
  sim->add_option("--replicates", o.replicates, "Override the number of replicates");
  sim->add_option("--threads", o.threads, "Worker threads (0: TRUNCOUNT_THREADS or hardware)");

  app.add_subcommand("plot", "Boxplot SVGs from a replicates CSV");

  std::vector<std::string> argv(args.rbegin(), args.rend());
  try {
    app.parse(argv);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForVersion&) {
    out << TRUNCOUNT_VERSION << "\n";
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "truncount: " << e.what() << "\n";
    return kExitInput;
  }
  o.seed = seed;

  auto* sub = app.get_subcommands().front();
  const std::string name = sub->get_name();
  Stage st;
  try {
    if (name == "estimate") return cmd_estimate(o, st, out, err);
    if (name == "select") return cmd_select(o, st, out, err);
    if (name == "impute") return cmd_impute(o, st, out, err);
    if (name == "outlier-bounds") return cmd_outlier_bounds(o, st, out, err);
    if (name == "simulate") return cmd_simulate(o, st, out, err);
    if (name == "plot") return cmd_plot(o, st, out, err);
  } catch (const NumericalError& e) {
    err << "truncount " << name << ": " << st.name << ": " << e.what() << "\n";
    return kExitNumerical;
  } catch (const ValidationError& e) {
    err << "truncount " << name << ": " << st.name << ": " << e.what() << "\n";
    return kExitInput;
  } catch (const std::filesystem::filesystem_error& e) {
    err << "truncount " << name << ": " << st.name << ": " << e.what() << "\n";
    return kExitInput;
  }
  err << "truncount: unknown command '" << name << "'\n";
  return kExitInput;
}

}  // namespace truncount::cli
