#pragma once

#include <Eigen/Dense>

#include <memory>
#include <optional>
#include <string_view>

#include "truncount/dataset.hpp"
#include "truncount/glm.hpp"

namespace truncount {

enum class Estimator {
  HorvitzThompson,
  GeneralisedChao,
  GeneralisedZelterman,
  ConventionalChao,
  ConventionalZelterman,
};

std::string_view to_string(Estimator e);
/// Short tag used in CSV files: ht, gc, gz, chao, zelterman.
std::string_view short_name(Estimator e);
Estimator parse_estimator(std::string_view name);

struct PopulationEstimate {
  Estimator estimator = Estimator::HorvitzThompson;
  double n_hat = 0.0;
  std::optional<double> variance;
  std::optional<double> ci_lower;
  std::optional<double> ci_upper;
  double level = 0.95;
  long long n_observed = 0;
  std::shared_ptr<const FittedModel> model;  // empty for the conventional estimators
};

/// N = sum 1 / (1 - P(Y = 0 | mu_i)) over the observed studies, with the
/// zero probability taken from the model's family. The variance is attached.
PopulationEstimate horvitz_thompson(const Dataset& d, const FittedModel& model);

/// Delta-method term plus the conditional binomial term. For the Poisson
/// family the gradient runs over beta; for the negative binomial it runs over
/// (beta, log alpha) using the joint covariance.
double ht_variance(const Dataset& d, const FittedModel& model);

/// n + sum over the ones and twos of 1 / (mu_i + mu_i^2 / 2), with mu_i from
/// the truncated binomial fit.
PopulationEstimate generalised_chao(const Dataset& d, const FittedModel& model);
double gc_variance(const Dataset& d, const FittedModel& model);

/// sum over all observed studies of 1 / (1 - exp(-mu_i)), mu_i = 2 e_i exp(h' beta)
/// from the truncated binomial fit.
PopulationEstimate generalised_zelterman(const Dataset& d, const FittedModel& model);
double gz_variance(const Dataset& d, const FittedModel& model);

/// Sum over the relevant studies of dG/dtheta, the vector entering the
/// delta-method quadratic form. Exposed for verification.
Eigen::VectorXd delta_gradient(Estimator e, const Dataset& d, const FittedModel& model);

/// Point estimate as a function of the model parameters, holding the data
/// fixed. Exposed for finite-difference checks of delta_gradient.
double estimate_at(Estimator e, const Dataset& d, const FittedModel& model);

/// N +/- z sqrt(Var). With `floor_at_observed` the lower bound is raised to n
/// when it falls below it.
PopulationEstimate wald_ci(PopulationEstimate est, double level, bool floor_at_observed = true);

double normal_quantile(double p);

/// n + f1^2 / (2 f2).
PopulationEstimate conventional_chao(const FrequencyTable& ft);
/// n / (1 - exp(-2 f2 / f1)).
PopulationEstimate conventional_zelterman(const FrequencyTable& ft, long long n);

}  // namespace truncount
