#include "truncount/estimators.hpp"

#include <boost/math/distributions/normal.hpp>

#include <cmath>

#include "truncount/error.hpp"

namespace truncount {

using Eigen::Index;
using Eigen::VectorXd;

std::string_view to_string(Estimator e) {
  switch (e) {
    case Estimator::HorvitzThompson: return "horvitz-thompson";
    case Estimator::GeneralisedChao: return "generalised-chao";
    case Estimator::GeneralisedZelterman: return "generalised-zelterman";
    case Estimator::ConventionalChao: return "conventional-chao";
    case Estimator::ConventionalZelterman: return "conventional-zelterman";
  }
  return "?";
}

std::string_view short_name(Estimator e) {
  switch (e) {
    case Estimator::HorvitzThompson: return "ht";
    case Estimator::GeneralisedChao: return "gc";
    case Estimator::GeneralisedZelterman: return "gz";
    case Estimator::ConventionalChao: return "chao";
    case Estimator::ConventionalZelterman: return "zelterman";
  }
  return "?";
}

Estimator parse_estimator(std::string_view name) {
  for (Estimator e : {Estimator::HorvitzThompson, Estimator::GeneralisedChao,
                      Estimator::GeneralisedZelterman, Estimator::ConventionalChao,
                      Estimator::ConventionalZelterman}) {
    if (name == to_string(e) || name == short_name(e)) return e;
  }
  throw ValidationError("unknown estimator '" + std::string(name) + "'");
}

namespace {

long long observed_count(const Dataset& d) {
  long long n = 0;
  for (const auto& r : d.records())
    if (r.count > 0) ++n;
  return n;
}

void require_family(const FittedModel& m, bool binomial, const char* who) {
  bool ok = binomial ? m.family == Family::TruncBinomial : m.family != Family::TruncBinomial;
  if (!ok)
    throw ValidationError(std::string(who) + " cannot use a " + std::string(to_string(m.family)) +
                          " model");
  if (!m.converged)
    throw ConvergenceError(std::string(who) + ": the " + std::string(to_string(m.family)) +
                           " fit did not converge");
}

// Zero probability and d log p0 / d(eta, log alpha) for the count models.
struct ZeroProb {
  double p0;
  double d_eta;
  double d_phi;
};

ZeroProb zero_probability(const FittedModel& m, double mu) {
  if (m.family == Family::ZtNegBin) {
    double a = *m.dispersion;
    double log_r = -std::log1p(mu / a);
    double s = mu / (mu + a);
    return {std::exp(a * log_r), -a * s, a * (log_r + s)};
  }
  return {std::exp(-mu), -mu, 0.0};
}

void check_zero_prob(double p0, Index row) {
  if (!(p0 < 1.0 - 1e-12))
    throw NumericalError("zero probability is numerically 1 at row " + std::to_string(row + 1) +
                         "; the estimate overflows");
}

// mu_i = 2 e_i exp(h' beta) for every row, from the binomial coefficients.
VectorXd zelterman_mu(const FittedModel& m, const DesignMatrix& design) {
  VectorXd mu = (design.x * m.beta + design.offset).array().exp() * 2.0;
  for (Index i = 0; i < mu.size(); ++i)
    if (!(mu(i) > 0.0) || !std::isfinite(mu(i)))
      throw NumericalError("expected count at row " + std::to_string(i + 1) + " overflows");
  return mu;
}

struct Parts {
  double n_hat = 0.0;
  VectorXd gradient;
  double conditional = 0.0;  // binomial-type term of the variance
};

Parts ht_parts(const Dataset& d, const FittedModel& m) {
  DesignMatrix design = build_design(d, m.spec);
  VectorXd mu = mu_hat(m, design);
  const bool nb = m.family == Family::ZtNegBin;
  const Index p = design.cols();
  Parts out;
  out.gradient = VectorXd::Zero(p + (nb ? 1 : 0));
  for (Index i = 0; i < mu.size(); ++i) {
    ZeroProb z = zero_probability(m, mu(i));
    check_zero_prob(z.p0, i);
    double obs = 1.0 - z.p0;
    double w = z.p0 / (obs * obs);  // dN_i / d log p0
    out.n_hat += 1.0 / obs;
    out.conditional += w;
    out.gradient.head(p) += w * z.d_eta * design.x.row(i).transpose();
    if (nb) out.gradient(p) += w * z.d_phi;
  }
  return out;
}

Parts gc_parts(const Dataset& d, const FittedModel& m) {
  Dataset sample = ones_and_twos(d);
  if (sample.empty()) throw ValidationError("generalised Chao needs at least one count of 1 or 2");
  DesignMatrix design = build_design(sample, m.spec);
  VectorXd mu = mu_hat(m, design);
  Parts out;
  out.n_hat = static_cast<double>(observed_count(d));
  out.gradient = VectorXd::Zero(design.cols());
  for (Index i = 0; i < mu.size(); ++i) {
    double denom = mu(i) + 0.5 * mu(i) * mu(i);
    double g = 1.0 / denom;
    out.n_hat += g;
    // dG/d beta = G'(mu) * mu * h = -(mu + mu^2) / (mu + mu^2/2)^2 * h
    out.gradient -= (mu(i) + mu(i) * mu(i)) / (denom * denom) * design.x.row(i).transpose();
    // Var of the unseen count implied by an observation probability
    // pi = 1 / (1 + G): (1 - pi) / pi^2 = G (1 + G).
    out.conditional += g * (1.0 + g);
  }
  return out;
}

Parts gz_parts(const Dataset& d, const FittedModel& m) {
  DesignMatrix design = build_design(d, m.spec);
  VectorXd mu = zelterman_mu(m, design);
  Parts out;
  out.gradient = VectorXd::Zero(design.cols());
  for (Index i = 0; i < mu.size(); ++i) {
    double p0 = std::exp(-mu(i));
    check_zero_prob(p0, i);
    double obs = -std::expm1(-mu(i));
    double w = p0 / (obs * obs);
    out.n_hat += 1.0 / obs;
    out.conditional += w;
    out.gradient -= w * mu(i) * design.x.row(i).transpose();
  }
  return out;
}

double quadratic_form(const VectorXd& g, const Eigen::MatrixXd& cov) {
  if (cov.rows() != g.size()) throw NumericalError("covariance does not match the gradient");
  return g.dot(cov * g);
}

PopulationEstimate make_estimate(Estimator e, const Dataset& d, const FittedModel& m,
                                 const Parts& parts) {
  PopulationEstimate est;
  est.estimator = e;
  est.n_hat = parts.n_hat;
  est.n_observed = observed_count(d);
  est.model = std::make_shared<const FittedModel>(m);
  const auto& cov = m.family == Family::ZtNegBin ? m.cov_full : m.cov_beta;
  double v = quadratic_form(parts.gradient, cov) + parts.conditional;
  if (std::isfinite(v)) est.variance = std::max(0.0, v);
  return est;
}

}  // namespace

PopulationEstimate horvitz_thompson(const Dataset& d, const FittedModel& model) {
  require_family(model, false, "Horvitz-Thompson");
  return make_estimate(Estimator::HorvitzThompson, d, model, ht_parts(d, model));
}

double ht_variance(const Dataset& d, const FittedModel& model) {
  require_family(model, false, "Horvitz-Thompson");
  Parts p = ht_parts(d, model);
  const auto& cov = model.family == Family::ZtNegBin ? model.cov_full : model.cov_beta;
  return quadratic_form(p.gradient, cov) + p.conditional;
}

PopulationEstimate generalised_chao(const Dataset& d, const FittedModel& model) {
  require_family(model, true, "generalised Chao");
  return make_estimate(Estimator::GeneralisedChao, d, model, gc_parts(d, model));
}

double gc_variance(const Dataset& d, const FittedModel& model) {
  require_family(model, true, "generalised Chao");
  Parts p = gc_parts(d, model);
  return quadratic_form(p.gradient, model.cov_beta) + p.conditional;
}

PopulationEstimate generalised_zelterman(const Dataset& d, const FittedModel& model) {
  require_family(model, true, "generalised Zelterman");
  return make_estimate(Estimator::GeneralisedZelterman, d, model, gz_parts(d, model));
}

double gz_variance(const Dataset& d, const FittedModel& model) {
  require_family(model, true, "generalised Zelterman");
  Parts p = gz_parts(d, model);
  return quadratic_form(p.gradient, model.cov_beta) + p.conditional;
}

Eigen::VectorXd delta_gradient(Estimator e, const Dataset& d, const FittedModel& model) {
  switch (e) {
    case Estimator::HorvitzThompson: return ht_parts(d, model).gradient;
    case Estimator::GeneralisedChao: return gc_parts(d, model).gradient;
    case Estimator::GeneralisedZelterman: return gz_parts(d, model).gradient;
    default: throw ValidationError("conventional estimators have no model gradient");
  }
}

double estimate_at(Estimator e, const Dataset& d, const FittedModel& model) {
  switch (e) {
    case Estimator::HorvitzThompson: return ht_parts(d, model).n_hat;
    case Estimator::GeneralisedChao: return gc_parts(d, model).n_hat;
    case Estimator::GeneralisedZelterman: return gz_parts(d, model).n_hat;
    default: throw ValidationError("conventional estimators have no model parameters");
  }
}

double normal_quantile(double p) {
  if (!(p > 0.0 && p < 1.0)) throw ValidationError("quantile probability must lie in (0, 1)");
  return boost::math::quantile(boost::math::normal_distribution<double>(), p);
}

PopulationEstimate wald_ci(PopulationEstimate est, double level, bool floor_at_observed) {
  if (!(level > 0.0 && level < 1.0)) throw ValidationError("CI level must lie in (0, 1)");
  if (!est.variance)
    throw ValidationError("no variance available for " + std::string(to_string(est.estimator)));
  double half = normal_quantile(0.5 * (1.0 + level)) * std::sqrt(*est.variance);
  double lo = est.n_hat - half;
  if (floor_at_observed) lo = std::max(lo, static_cast<double>(est.n_observed));
  est.ci_lower = lo;
  est.ci_upper = est.n_hat + half;
  est.level = level;
  return est;
}

PopulationEstimate conventional_chao(const FrequencyTable& ft) {
  double f1 = static_cast<double>(ft[1]);
  double f2 = static_cast<double>(ft[2]);
  if (f2 <= 0.0) throw ValidationError("conventional Chao is undefined when f2 = 0");
  PopulationEstimate est;
  est.estimator = Estimator::ConventionalChao;
  est.n_observed = ft.total() - ft[0];
  est.n_hat = static_cast<double>(est.n_observed) + f1 * f1 / (2.0 * f2);
  return est;
}

PopulationEstimate conventional_zelterman(const FrequencyTable& ft, long long n) {
  double f1 = static_cast<double>(ft[1]);
  double f2 = static_cast<double>(ft[2]);
  if (f1 <= 0.0 || f2 <= 0.0)
    throw ValidationError("conventional Zelterman needs f1 > 0 and f2 > 0");
  double mu = 2.0 * f2 / f1;
  PopulationEstimate est;
  est.estimator = Estimator::ConventionalZelterman;
  est.n_observed = n;
  est.n_hat = static_cast<double>(n) / -std::expm1(-mu);
  return est;
}

}  // namespace truncount
