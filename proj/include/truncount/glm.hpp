#pragma once

#include <Eigen/Dense>

#include <array>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "truncount/dataset.hpp"

namespace truncount {

enum class Family { ZtPoisson, ZtNegBin, TruncBinomial };

std::string_view to_string(Family f);
Family parse_family(std::string_view name);

/// One of the five linear predictors h_1..h_5:
///   1: (1)   2: (1, x1)   3: (1, x2)   4: (1, x1, x2)   5: (1, x1, x2, x1 x2)
class PredictorSpec {
 public:
  constexpr PredictorSpec() = default;
  explicit PredictorSpec(int index);

  int index() const { return index_; }
  int columns() const;
  bool uses_proportion() const { return index_ == 2 || index_ == 4 || index_ == 5; }
  bool uses_origin() const { return index_ >= 3; }
  bool uses_interaction() const { return index_ == 5; }

  static std::array<PredictorSpec, 5> all();

  bool operator==(const PredictorSpec&) const = default;

 private:
  int index_ = 1;
};

/// Rows follow dataset order. The intercept column is always first and the
/// offset is log(exposure).
struct DesignMatrix {
  PredictorSpec spec;
  Eigen::MatrixXd x;
  Eigen::VectorXd offset;

  Eigen::Index rows() const { return x.rows(); }
  Eigen::Index cols() const { return x.cols(); }
};

DesignMatrix build_design(const Dataset& d, PredictorSpec spec);

// Dispersion range for the negative-binomial shape α, parameterised as log α.
// The upper end is the Poisson limit; the lower end caps the approach to the
// logarithmic-series limit where the zero probability tends to one.
inline constexpr double kDispersionMax = 1e8;
inline constexpr double kDispersionMin = 1e-4;

struct FitOptions {
  double tolerance = 1e-8;  // max-norm of the score on free parameters
  int max_iterations = 100;
  // Pins α for the negative-binomial family.
  std::optional<double> fixed_dispersion;
};

struct FittedModel {
  Family family = Family::ZtPoisson;
  PredictorSpec spec;
  // For the binomial family this is the logistic coefficient vector, so the
  // expected count is 2 e exp(h' beta) and the Poisson-scale intercept is
  // beta_0 + log 2.
  Eigen::VectorXd beta;
  Eigen::MatrixXd cov_beta;
  // Covariance of (beta, log alpha) for the negative binomial; equals
  // cov_beta for the other families. When the joint information is not
  // positive definite the log-alpha row and column are zero and cov_beta is
  // conditional on alpha.
  Eigen::MatrixXd cov_full;
  std::optional<double> dispersion;
  bool at_boundary = false;
  double loglik = 0.0;
  double bic = 0.0;
  int n_used = 0;
  bool converged = false;
  int iterations = 0;
  double score_norm = 0.0;

  int n_parameters() const;
  double poisson_intercept() const;
};

/// Log-likelihood with gradient and Hessian in the fitted parameterisation:
/// beta for Poisson and binomial, (beta, log alpha) for negative binomial.
struct LikelihoodEval {
  double value = 0.0;
  Eigen::VectorXd gradient;
  Eigen::MatrixXd hessian;
};

LikelihoodEval evaluate_likelihood(Family f, const DesignMatrix& design, std::span<const int> counts,
                                   const Eigen::VectorXd& theta, bool with_hessian = true);

FittedModel fit_zt_poisson(const DesignMatrix& design, std::span<const int> counts,
                           const FitOptions& opts = {});
FittedModel fit_zt_negbin(const DesignMatrix& design, std::span<const int> counts,
                          const FitOptions& opts = {});
/// Logistic regression of 1{y = 2} on h(x) with offset log(e); counts must
/// all be 1 or 2.
FittedModel fit_truncated_binomial(const DesignMatrix& design, std::span<const int> counts,
                                   const FitOptions& opts = {});

FittedModel fit(Family f, const DesignMatrix& design, std::span<const int> counts,
                const FitOptions& opts = {});

/// Fitted probabilities of a count of two (binomial family only).
Eigen::VectorXd fitted_q(const FittedModel& model, const DesignMatrix& design);

/// Expected counts. Poisson and negative binomial: e exp(h' beta). Binomial:
/// 2q/(1-q).
Eigen::VectorXd mu_hat(const FittedModel& model, const DesignMatrix& design);

/// The sample a family is fitted on: the whole dataset, or the ones and twos
/// for the binomial family.
Dataset fitting_sample(const Dataset& d, Family f);

/// Fits of specs 1..5 in order; entries are empty where the fit threw.
std::vector<std::optional<FittedModel>> fit_all_specs(const Dataset& d, Family f);

/// Minimum-BIC converged fit over specs 1..5, ties to the smaller index.
FittedModel select_model(const Dataset& d, Family f);

}  // namespace truncount
