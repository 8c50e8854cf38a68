#include "truncount/simulation.hpp"

#include <boost/random/bernoulli_distribution.hpp>
#include <boost/random/beta_distribution.hpp>
#include <boost/random/binomial_distribution.hpp>
#include <boost/random/lognormal_distribution.hpp>
#include <boost/random/poisson_distribution.hpp>
#include <boost/random/uniform_real_distribution.hpp>
#include "json.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <thread>

#include "truncount/error.hpp"

namespace truncount {

using json = nlohmann::json;

int SimConfig::n_outliers() const {
  if (!outliers_integral())
    throw ValidationError("outlier_proportion * n_total must be an integer");
  return static_cast<int>(std::llround(outlier_proportion * n_total));
}

bool SimConfig::outliers_integral() const {
  double k = outlier_proportion * n_total;
  return std::abs(k - std::round(k)) < 1e-9;
}

void validate(const SimConfig& c) {
  auto bad = [](const std::string& key, const std::string& why) {
    throw ValidationError("config key '" + key + "': " + why);
  };
  if (c.n_total < 1) bad("n_total", "must be positive");
  if (c.replicates < 1) bad("replicates", "must be positive");
  if (!(c.mean_participants > 0.0)) bad("mean_participants", "must be positive");
  if (!std::isfinite(c.log_mean_period)) bad("log_mean_period", "must be finite");
  if (!(c.log_sd_period > 0.0)) bad("log_sd_period", "must be positive");
  if (!(c.event_rate >= 0.0 && c.event_rate < 1.0)) bad("event_rate", "must lie in [0, 1)");
  if (!(c.outlier_rate_lower > 0.0)) bad("outlier_rate_lower", "must be positive");
  if (!(c.outlier_rate_upper >= c.outlier_rate_lower))
    bad("outlier_rate_upper", "must not be below outlier_rate_lower");
  if (!(c.beta_a > 0.0)) bad("beta_a", "must be positive");
  if (!(c.beta_b > 0.0)) bad("beta_b", "must be positive");
  if (!(c.bernoulli_p >= 0.0 && c.bernoulli_p <= 1.0)) bad("bernoulli_p", "must lie in [0, 1]");
  if (!(c.outlier_proportion >= 0.0 && c.outlier_proportion < 1.0))
    bad("outlier_proportion", "must lie in [0, 1)");
  if (!c.outliers_integral()) bad("outlier_proportion", "outlier_proportion * n_total must be an integer");
  if (!(c.ci_level > 0.0 && c.ci_level < 1.0)) bad("ci_level", "must lie in (0, 1)");
  if (c.ht_family != "poisson" && c.ht_family != "negbin" && c.ht_family != "auto")
    bad("ht_family", "must be poisson, negbin or auto");
  for (double p : c.sweep_proportions)
    if (!(p >= 0.0 && p < 1.0)) bad("sweep_proportions", "entries must lie in [0, 1)");
}

namespace {

template <typename T>
T get_as(const json& v, const std::string& key) {
  try {
    return v.get<T>();
  } catch (const json::exception&) {
    throw ValidationError("config key '" + key + "': wrong type");
  }
}

}  // namespace

SimConfig parse_sim_config(std::istream& in) {
  json j;
  try {
    j = json::parse(in, nullptr, true, true);
  } catch (const json::parse_error& e) {
    throw ValidationError(std::string("config is not valid JSON: ") + e.what());
  }
  if (!j.is_object()) throw ValidationError("config must be a JSON object");
  SimConfig c;
  for (const auto& [key, v] : j.items()) {
    if (key == "n_total") c.n_total = get_as<int>(v, key);
    else if (key == "replicates") c.replicates = get_as<int>(v, key);
    else if (key == "mean_participants") c.mean_participants = get_as<double>(v, key);
    else if (key == "log_mean_period") c.log_mean_period = get_as<double>(v, key);
    else if (key == "log_sd_period") c.log_sd_period = get_as<double>(v, key);
    else if (key == "event_rate") c.event_rate = get_as<double>(v, key);
    else if (key == "outlier_rate_lower") c.outlier_rate_lower = get_as<double>(v, key);
    else if (key == "outlier_rate_upper") c.outlier_rate_upper = get_as<double>(v, key);
    else if (key == "beta_a") c.beta_a = get_as<double>(v, key);
    else if (key == "beta_b") c.beta_b = get_as<double>(v, key);
    else if (key == "bernoulli_p") c.bernoulli_p = get_as<double>(v, key);
    else if (key == "outlier_proportion") c.outlier_proportion = get_as<double>(v, key);
    else if (key == "seed") c.seed = get_as<std::uint64_t>(v, key);
    else if (key == "ci_level") c.ci_level = get_as<double>(v, key);
    else if (key == "predictor") c.predictor = PredictorSpec(get_as<int>(v, key));
    else if (key == "ht_family") c.ht_family = get_as<std::string>(v, key);
    else if (key == "sweep_proportions") c.sweep_proportions = get_as<std::vector<double>>(v, key);
    else throw ValidationError("unknown config key '" + key + "'");
  }
  validate(c);
  return c;
}

SimConfig load_sim_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open config '" + path.string() + "'");
  return parse_sim_config(in);
}

std::string sim_config_to_json(const SimConfig& c) {
  json j = {{"n_total", c.n_total},
            {"replicates", c.replicates},
            {"mean_participants", c.mean_participants},
            {"log_mean_period", c.log_mean_period},
            {"log_sd_period", c.log_sd_period},
            {"event_rate", c.event_rate},
            {"outlier_rate_lower", c.outlier_rate_lower},
            {"outlier_rate_upper", c.outlier_rate_upper},
            {"beta_a", c.beta_a},
            {"beta_b", c.beta_b},
            {"bernoulli_p", c.bernoulli_p},
            {"outlier_proportion", c.outlier_proportion},
            {"seed", c.seed},
            {"ci_level", c.ci_level},
            {"predictor", c.predictor.index()},
            {"ht_family", c.ht_family},
            {"sweep_proportions", c.sweep_proportions}};
  return j.dump(2);
}

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// t ~ Poisson(t_bar) redrawn while zero, O ~ lognormal(gamma, sigma).
double draw_person_years(const SimConfig& c, RandomStream& rng) {
  boost::random::poisson_distribution<int, double> participants(c.mean_participants);
  boost::random::lognormal_distribution<double> period(c.log_mean_period, c.log_sd_period);
  int t = 0;
  do {
    t = participants(rng);
  } while (t == 0);
  return t * period(rng);
}

void draw_covariates(const SimConfig& c, RandomStream& rng, StudyRecord& r) {
  boost::random::beta_distribution<double> prop(c.beta_a, c.beta_b);
  boost::random::bernoulli_distribution<double> origin(c.bernoulli_p);
  r.prop_women = prop(rng);
  r.origin_flag = origin(rng);
}

}  // namespace

RandomStream replicate_stream(std::uint64_t seed, std::uint64_t s) {
  std::uint64_t k = splitmix64(splitmix64(seed) ^ splitmix64(s + 0x632be59bd9b4e019ULL));
  std::seed_seq seq{static_cast<std::uint32_t>(k), static_cast<std::uint32_t>(k >> 32),
                    static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(s)};
  return RandomStream(seq);
}

Dataset generate_population(const SimConfig& cfg, RandomStream& rng) {
  int regular = cfg.n_total - cfg.n_outliers();
  std::vector<StudyRecord> records;
  records.reserve(static_cast<std::size_t>(cfg.n_total));
  for (int i = 0; i < regular; ++i) {
    StudyRecord r;
    r.id = "s" + std::to_string(i + 1);
    r.exposure = draw_person_years(cfg, rng);
    auto trials = static_cast<long long>(std::llround(r.exposure));
    r.count = cfg.event_rate > 0.0 && trials > 0
                  ? static_cast<int>(boost::random::binomial_distribution<long long, double>(
                        trials, cfg.event_rate)(rng))
                  : 0;
    draw_covariates(cfg, rng, r);
    records.push_back(std::move(r));
  }
  return Dataset(std::move(records), false);
}

std::vector<StudyRecord> generate_outliers(const SimConfig& cfg, int count, RandomStream& rng) {
  if (count < 0) throw ValidationError("outlier count must be nonnegative");
  boost::random::uniform_real_distribution<double> rate(cfg.outlier_rate_lower, cfg.outlier_rate_upper);
  std::vector<StudyRecord> out;
  out.reserve(static_cast<std::size_t>(count));
  for (int i = 0; i < count; ++i) {
    StudyRecord r;
    r.id = "o" + std::to_string(i + 1);
    r.exposure = draw_person_years(cfg, rng);
    double lam = cfg.outlier_rate_lower < cfg.outlier_rate_upper ? rate(rng) : cfg.outlier_rate_lower;
    r.count = static_cast<int>(std::max(1.0, std::round(r.exposure * lam)));
    draw_covariates(cfg, rng, r);
    out.push_back(std::move(r));
  }
  return out;
}

namespace {

EstimatorOutcome failed(Estimator e, const std::string& why) {
  EstimatorOutcome o;
  o.estimator = e;
  o.failure = why;
  return o;
}

EstimatorOutcome outcome(const PopulationEstimate& est, double level) {
  EstimatorOutcome o;
  o.estimator = est.estimator;
  if (!est.variance) return failed(est.estimator, "no variance");
  PopulationEstimate ci = wald_ci(est, level);
  o.ok = std::isfinite(ci.n_hat) && std::isfinite(*ci.ci_upper);
  o.n_hat = ci.n_hat;
  o.variance = *ci.variance;
  o.ci_lower = *ci.ci_lower;
  o.ci_upper = *ci.ci_upper;
  if (!o.ok) o.failure = "non-finite estimate";
  return o;
}

FittedModel fit_ht_model(const SimConfig& cfg, const Dataset& observed) {
  DesignMatrix design = build_design(observed, cfg.predictor);
  auto counts = observed.counts();
  if (cfg.ht_family == "poisson") return fit_zt_poisson(design, counts);
  if (cfg.ht_family == "negbin") return fit_zt_negbin(design, counts);
  FittedModel pois = fit_zt_poisson(design, counts);
  FittedModel nb = fit_zt_negbin(design, counts);
  if (!nb.converged || (pois.converged && pois.bic <= nb.bic)) return pois;
  return nb;
}

}  // namespace

ReplicateResult estimate_replicate(const SimConfig& cfg, const Dataset& observed, int s) {
  ReplicateResult res;
  res.replicate = s;
  res.n_observed = static_cast<long long>(observed.size());
  auto& ht = res.outcomes[0];
  auto& gc = res.outcomes[1];
  auto& gz = res.outcomes[2];
  try {
    FittedModel m = fit_ht_model(cfg, observed);
    if (!m.converged) throw ConvergenceError("fit did not converge");
    ht = outcome(horvitz_thompson(observed, m), cfg.ci_level);
  } catch (const std::exception& e) {
    ht = failed(Estimator::HorvitzThompson, e.what());
  }
  try {
    Dataset sample = ones_and_twos(observed);
    FittedModel m = fit_truncated_binomial(build_design(sample, cfg.predictor), sample.counts());
    if (!m.converged) throw ConvergenceError("binomial fit did not converge");
    try {
      gc = outcome(generalised_chao(observed, m), cfg.ci_level);
    } catch (const std::exception& e) {
      gc = failed(Estimator::GeneralisedChao, e.what());
    }
    try {
      gz = outcome(generalised_zelterman(observed, m), cfg.ci_level);
    } catch (const std::exception& e) {
      gz = failed(Estimator::GeneralisedZelterman, e.what());
    }
  } catch (const std::exception& e) {
    gc = failed(Estimator::GeneralisedChao, e.what());
    gz = failed(Estimator::GeneralisedZelterman, e.what());
  }
  return res;
}

ReplicateResult run_replicate(const SimConfig& cfg, int s) {
  if (s < 0 || s >= cfg.replicates) throw ValidationError("replicate index out of range");
  RandomStream rng = replicate_stream(cfg.seed, static_cast<std::uint64_t>(s));
  Dataset population = generate_population(cfg, rng);
  auto outliers = generate_outliers(cfg, cfg.n_outliers(), rng);
  Dataset full = append_outlier_records(population, outliers);
  return estimate_replicate(cfg, zero_truncate(full), s);
}

double median(std::vector<double> values) {
  if (values.empty()) return std::numeric_limits<double>::quiet_NaN();
  std::sort(values.begin(), values.end());
  std::size_t n = values.size();
  return n % 2 == 1 ? values[n / 2] : 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

PerformanceReport summarize(int n_total, double outlier_proportion,
                            const std::vector<ReplicateResult>& results) {
  PerformanceReport rep;
  rep.n_total = n_total;
  rep.outlier_proportion = outlier_proportion;
  rep.replicates = static_cast<int>(results.size());
  const double truth = n_total;
  for (std::size_t k = 0; k < kStudyEstimators.size(); ++k) {
    EstimatorPerformance& perf = rep.estimators[k];
    perf.estimator = kStudyEstimators[k];
    std::vector<double> err, width;
    int covered = 0;
    for (const auto& r : results) {
      const auto& o = r.outcomes[k];
      if (!o.ok) {
        ++perf.failures;
        continue;
      }
      err.push_back(std::abs(o.n_hat - truth));
      width.push_back(o.ci_upper - o.ci_lower);
      if (o.ci_lower <= truth && truth <= o.ci_upper) ++covered;
    }
    perf.used = static_cast<int>(err.size());
    perf.accuracy = median(err);
    perf.precision = median(width);
    perf.coverage = perf.used > 0 ? 100.0 * covered / perf.used
                                  : std::numeric_limits<double>::quiet_NaN();
    perf.unreliable = perf.failures * 10 > rep.replicates;
  }
  return rep;
}

unsigned resolve_threads(unsigned requested) {
  if (requested > 0) return requested;
  if (const char* env = std::getenv("TRUNCOUNT_THREADS")) {
    char* end = nullptr;
    long v = std::strtol(env, &end, 10);
    if (end != env && *end == '\0' && v > 0) return static_cast<unsigned>(v);
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

StudyResult run_study(const SimConfig& cfg, unsigned threads) {
  validate(cfg);
  StudyResult out;
  out.config = cfg;
  out.replicates.resize(static_cast<std::size_t>(cfg.replicates));
  unsigned nthreads = std::min<unsigned>(resolve_threads(threads), static_cast<unsigned>(cfg.replicates));
  std::atomic<int> next{0};
  auto worker = [&] {
    for (int s = next++; s < cfg.replicates; s = next++)
      out.replicates[static_cast<std::size_t>(s)] = run_replicate(cfg, s);
  };
  if (nthreads <= 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (unsigned t = 0; t < nthreads; ++t) pool.emplace_back(worker);
  }
  out.report = summarize(cfg.n_total, cfg.outlier_proportion, out.replicates);
  return out;
}

std::vector<SweepColumn> robustness_sweep(const SimConfig& base, const std::vector<double>& proportions,
                                          unsigned threads) {
  std::vector<SweepColumn> cols;
  for (double p : proportions) {
    SweepColumn col;
    col.proportion = p;
    SimConfig cfg = base;
    cfg.outlier_proportion = p;
    if (!cfg.outliers_integral()) {
      std::ostringstream msg;
      msg << "outlier proportion " << p << " of N = " << base.n_total
          << " is not an integer number of studies; skipped";
      col.notice = msg.str();
    } else {
      col.result = run_study(cfg, threads);
    }
    cols.push_back(std::move(col));
  }
  return cols;
}

}  // namespace truncount
