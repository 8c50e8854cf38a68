#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "truncount/dataset.hpp"
#include "truncount/error.hpp"
#include "truncount/estimators.hpp"
#include "truncount/glm.hpp"
#include "truncount/simulation.hpp"

namespace py = pybind11;
using namespace truncount;

namespace {

FittedModel fit_named(const Dataset& d, const std::string& family, std::optional<int> predictor) {
  Family f = parse_family(family);
  if (!predictor) return select_model(d, f);
  Dataset sample = fitting_sample(d, f);
  DesignMatrix x = build_design(sample, PredictorSpec(*predictor));
  return fit(f, x, sample.counts());
}

PopulationEstimate estimate(const Dataset& d, const std::string& estimator, const std::string& family,
                            std::optional<int> predictor, double level, bool floor_at_observed) {
  Estimator e = parse_estimator(estimator);
  PopulationEstimate est;
  switch (e) {
    case Estimator::HorvitzThompson: est = horvitz_thompson(d, fit_named(d, family, predictor)); break;
    case Estimator::GeneralisedChao:
      est = generalised_chao(d, fit_named(d, "trunc-binomial", predictor));
      break;
    case Estimator::GeneralisedZelterman:
      est = generalised_zelterman(d, fit_named(d, "trunc-binomial", predictor));
      break;
    default: throw ValidationError("estimate() takes ht, gc or gz");
  }
  return est.variance ? wald_ci(est, level, floor_at_observed) : est;
}

py::dict outcome_dict(const EstimatorOutcome& o) {
  py::dict r;
  r["estimator"] = std::string(to_string(o.estimator));
  r["ok"] = o.ok;
  r["n_hat"] = o.n_hat;
  r["variance"] = o.variance;
  r["ci_lower"] = o.ci_lower;
  r["ci_upper"] = o.ci_upper;
  r["failure"] = o.failure;
  return r;
}

}  // namespace

PYBIND11_MODULE(_truncount, m) {
  m.doc() = "Population size estimators for zero-truncated count data";

  auto validation = py::register_exception<ValidationError>(m, "ValidationError", PyExc_ValueError);
  py::register_exception<NumericalError>(m, "NumericalError", PyExc_ArithmeticError);
  (void)validation;

  py::class_<StudyRecord>(m, "StudyRecord")
      .def(py::init([](std::string id, int count, double exposure, std::optional<double> prop_women,
                       bool origin_flag) { return StudyRecord{std::move(id), count, exposure, prop_women, origin_flag}; }),
           py::arg("id"), py::arg("count"), py::arg("exposure"), py::arg("prop_women") = py::none(),
           py::arg("origin_flag") = false)
      .def_readonly("id", &StudyRecord::id)
      .def_readonly("count", &StudyRecord::count)
      .def_readonly("exposure", &StudyRecord::exposure)
      .def_readonly("prop_women", &StudyRecord::prop_women)
      .def_readonly("origin_flag", &StudyRecord::origin_flag)
      .def("__repr__", [](const StudyRecord& r) { return "<StudyRecord " + r.id + " count=" + std::to_string(r.count) + ">"; });

  py::class_<Dataset>(m, "Dataset")
      .def(py::init<std::vector<StudyRecord>, bool>(), py::arg("records"), py::arg("truncated") = true)
      .def("__len__", &Dataset::size)
      .def("__getitem__",
           [](const Dataset& d, std::size_t i) {
             if (i >= d.size()) throw py::index_error();
             return d[i];
           })
      .def_property_readonly("records", &Dataset::records)
      .def_property_readonly("truncated", &Dataset::truncated)
      .def_property_readonly("counts", &Dataset::counts)
      .def_property_readonly("exposures", &Dataset::exposures)
      .def("has_missing_covariates", &Dataset::has_missing_covariates);

  m.def("load_csv", [](const std::filesystem::path& p, bool truncated) { return load_csv(p, truncated); },
        py::arg("path"), py::arg("truncated") = true);
  m.def("impute_missing_proportion", &impute_missing_proportion);
  m.def("zero_truncate", &zero_truncate);
  m.def("append", [](const Dataset& d, const Dataset& extra) { return append_outlier_records(d, extra.records()); });
  m.def("outlier_bounds", [](const Dataset& d) {
    OutlierBounds b = outlier_bounds(d);
    return std::pair{b.lower, b.upper};
  });

  py::class_<FittedModel>(m, "FittedModel")
      .def_property_readonly("family", [](const FittedModel& f) { return std::string(to_string(f.family)); })
      .def_property_readonly("predictor", [](const FittedModel& f) { return f.spec.index(); })
      .def_readonly("beta", &FittedModel::beta)
      .def_readonly("cov_beta", &FittedModel::cov_beta)
      .def_readonly("dispersion", &FittedModel::dispersion)
      .def_readonly("at_boundary", &FittedModel::at_boundary)
      .def_readonly("loglik", &FittedModel::loglik)
      .def_readonly("bic", &FittedModel::bic)
      .def_readonly("n_used", &FittedModel::n_used)
      .def_readonly("converged", &FittedModel::converged)
      .def_readonly("iterations", &FittedModel::iterations);

  m.def("fit", &fit_named, py::arg("data"), py::arg("family"), py::arg("predictor") = py::none(),
        "Fit one family; without a predictor the minimum-BIC one of 1-5 is chosen.");
  m.def(
      "select",
      [](const Dataset& d, const std::string& family) { return fit_all_specs(d, parse_family(family)); },
      py::arg("data"), py::arg("family"), "Fits for predictors 1-5 (None where a fit is impossible).");

  py::class_<PopulationEstimate>(m, "PopulationEstimate")
      .def_property_readonly("estimator", [](const PopulationEstimate& e) { return std::string(to_string(e.estimator)); })
      .def_readonly("n_hat", &PopulationEstimate::n_hat)
      .def_readonly("variance", &PopulationEstimate::variance)
      .def_readonly("ci_lower", &PopulationEstimate::ci_lower)
      .def_readonly("ci_upper", &PopulationEstimate::ci_upper)
      .def_readonly("level", &PopulationEstimate::level)
      .def_readonly("n_observed", &PopulationEstimate::n_observed)
      .def_property_readonly("model", [](const PopulationEstimate& e) -> std::optional<FittedModel> {
        if (!e.model) return std::nullopt;
        return *e.model;
      });

  m.def("estimate", &estimate, py::arg("data"), py::arg("estimator"), py::arg("family") = "zt-poisson",
        py::arg("predictor") = py::none(), py::arg("level") = 0.95, py::arg("floor_at_observed") = true);

  py::class_<SimConfig>(m, "SimConfig")
      .def(py::init<>())
      .def_readwrite("n_total", &SimConfig::n_total)
      .def_readwrite("replicates", &SimConfig::replicates)
      .def_readwrite("mean_participants", &SimConfig::mean_participants)
      .def_readwrite("log_mean_period", &SimConfig::log_mean_period)
      .def_readwrite("log_sd_period", &SimConfig::log_sd_period)
      .def_readwrite("event_rate", &SimConfig::event_rate)
      .def_readwrite("outlier_rate_lower", &SimConfig::outlier_rate_lower)
      .def_readwrite("outlier_rate_upper", &SimConfig::outlier_rate_upper)
      .def_readwrite("beta_a", &SimConfig::beta_a)
      .def_readwrite("beta_b", &SimConfig::beta_b)
      .def_readwrite("bernoulli_p", &SimConfig::bernoulli_p)
      .def_readwrite("outlier_proportion", &SimConfig::outlier_proportion)
      .def_readwrite("seed", &SimConfig::seed)
      .def_readwrite("ci_level", &SimConfig::ci_level)
      .def_property(
          "predictor", [](const SimConfig& c) { return c.predictor.index(); },
          [](SimConfig& c, int i) { c.predictor = PredictorSpec(i); })
      .def_readwrite("ht_family", &SimConfig::ht_family)
      .def_readwrite("sweep_proportions", &SimConfig::sweep_proportions)
      .def("to_json", &sim_config_to_json);

  m.def("load_sim_config", &load_sim_config);

  m.def(
      "simulate",
      [](const SimConfig& cfg, unsigned threads) {
        StudyResult r;
        {
          py::gil_scoped_release release;
          r = run_study(cfg, threads);
        }
        py::list perf, reps;
        for (const auto& p : r.report.estimators) {
          py::dict e;
          e["estimator"] = std::string(to_string(p.estimator));
          e["accuracy"] = p.accuracy;
          e["precision"] = p.precision;
          e["coverage"] = p.coverage;
          e["used"] = p.used;
          e["failures"] = p.failures;
          e["unreliable"] = p.unreliable;
          perf.append(e);
        }
        for (const auto& rep : r.replicates) {
          py::dict d;
          d["replicate"] = rep.replicate;
          d["n_observed"] = rep.n_observed;
          py::list outs;
          for (const auto& o : rep.outcomes) outs.append(outcome_dict(o));
          d["outcomes"] = outs;
          reps.append(d);
        }
        py::dict out;
        out["performance"] = perf;
        out["replicates"] = reps;
        return out;
      },
      py::arg("config"), py::arg("threads") = 0,
      "Run one Monte Carlo study; returns performance measures and per-replicate outcomes.");
}
