#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "truncount/dataset.hpp"
#include "truncount/estimators.hpp"
#include "truncount/glm.hpp"

namespace truncount {

/// Generator and estimator settings for one Monte Carlo study. Defaults are
/// the N = 1000 sweep settings.
struct SimConfig {
  int n_total = 1000;
  int replicates = 1000;
  double mean_participants = 900.0;
  double log_mean_period = 1.5;
  double log_sd_period = 0.8;
  double event_rate = 0.0004;
  double outlier_rate_lower = 0.007;
  double outlier_rate_upper = 0.009;
  double beta_a = 36.0;
  double beta_b = 8.5;
  double bernoulli_p = 0.4;
  double outlier_proportion = 0.0;
  std::uint64_t seed = 20240601;
  double ci_level = 0.95;
  PredictorSpec predictor{1};
  // Family of the Horvitz-Thompson regression. "auto" takes the lower-BIC of
  // the Poisson and negative-binomial fits.
  std::string ht_family = "poisson";
  // Columns of a robustness sweep; empty means just outlier_proportion.
  std::vector<double> sweep_proportions;

  /// Number of outlier studies; throws unless proportion * N is an integer.
  int n_outliers() const;
  bool outliers_integral() const;
};

void validate(const SimConfig& cfg);

/// Reads a JSON object whose keys are the SimConfig field names. Unknown
/// keys are rejected with a ValidationError naming the key.
SimConfig load_sim_config(const std::filesystem::path& path);
SimConfig parse_sim_config(std::istream& in);
std::string sim_config_to_json(const SimConfig& cfg);

using RandomStream = std::mt19937_64;

/// Independent stream for replicate `s`: the engine is seeded with a
/// SplitMix64 mix of (seed, s), so streams do not depend on scheduling.
RandomStream replicate_stream(std::uint64_t seed, std::uint64_t s);

/// Regular studies (N minus the outlier count). Counts may be zero.
Dataset generate_population(const SimConfig& cfg, RandomStream& rng);

/// Outlier studies with rates drawn uniformly from the outlier band; counts
/// are floored at 1.
std::vector<StudyRecord> generate_outliers(const SimConfig& cfg, int count, RandomStream& rng);

struct EstimatorOutcome {
  Estimator estimator = Estimator::HorvitzThompson;
  bool ok = false;
  double n_hat = 0.0;
  double variance = 0.0;
  double ci_lower = 0.0;
  double ci_upper = 0.0;
  std::string failure;
};

inline constexpr std::array<Estimator, 3> kStudyEstimators = {
    Estimator::HorvitzThompson, Estimator::GeneralisedChao, Estimator::GeneralisedZelterman};

struct ReplicateResult {
  int replicate = 0;
  long long n_observed = 0;
  std::array<EstimatorOutcome, 3> outcomes;
};

/// Generates, truncates and estimates one replicate. Fit failures are
/// recorded in the outcomes, never thrown.
ReplicateResult run_replicate(const SimConfig& cfg, int s);

/// Same as run_replicate but on a caller-supplied zero-truncated dataset.
ReplicateResult estimate_replicate(const SimConfig& cfg, const Dataset& observed, int s);

struct EstimatorPerformance {
  Estimator estimator = Estimator::HorvitzThompson;
  double accuracy = 0.0;   // median |N_hat - N|
  double precision = 0.0;  // median CI width
  double coverage = 0.0;   // percent of intervals containing N
  int used = 0;
  int failures = 0;
  bool unreliable = false;  // more than 10% failures
};

struct PerformanceReport {
  int n_total = 0;
  double outlier_proportion = 0.0;
  int replicates = 0;
  std::array<EstimatorPerformance, 3> estimators;
};

double median(std::vector<double> values);

/// Aggregates replicate outcomes over the successful fits of each estimator.
PerformanceReport summarize(int n_total, double outlier_proportion,
                            const std::vector<ReplicateResult>& results);

struct StudyResult {
  SimConfig config;
  std::vector<ReplicateResult> replicates;
  PerformanceReport report;
};

/// Thread count from TRUNCOUNT_THREADS (0 or unset = hardware concurrency)
/// when `requested` is 0.
unsigned resolve_threads(unsigned requested = 0);

/// Runs all replicates (possibly in parallel) and aggregates. The output is
/// identical for every thread count.
StudyResult run_study(const SimConfig& cfg, unsigned threads = 0);

struct SweepColumn {
  double proportion = 0.0;
  std::optional<StudyResult> result;  // empty when the outlier count is not integral
  std::string notice;
};

std::vector<SweepColumn> robustness_sweep(const SimConfig& base, const std::vector<double>& proportions,
                                          unsigned threads = 0);

}  // namespace truncount
