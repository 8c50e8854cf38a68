#include "truncount/glm.hpp"

#include <boost/math/special_functions/gamma.hpp>

#include <algorithm>
#include <cmath>
#include <limits>

#include "truncount/error.hpp"

namespace truncount {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;

std::string_view to_string(Family f) {
  switch (f) {
    case Family::ZtPoisson: return "zt-poisson";
    case Family::ZtNegBin: return "zt-negbin";
    case Family::TruncBinomial: return "trunc-binomial";
  }
  return "?";
}

Family parse_family(std::string_view name) {
  if (name == "zt-poisson" || name == "poisson") return Family::ZtPoisson;
  if (name == "zt-negbin" || name == "negbin") return Family::ZtNegBin;
  if (name == "trunc-binomial" || name == "binomial") return Family::TruncBinomial;
  throw ValidationError("unknown family '" + std::string(name) + "'");
}

PredictorSpec::PredictorSpec(int index) : index_(index) {
  if (index < 1 || index > 5)
    throw ValidationError("predictor index must be in 1..5, got " + std::to_string(index));
}

int PredictorSpec::columns() const {
  static constexpr int kCols[] = {1, 2, 2, 3, 4};
  return kCols[index_ - 1];
}

std::array<PredictorSpec, 5> PredictorSpec::all() {
  return {PredictorSpec(1), PredictorSpec(2), PredictorSpec(3), PredictorSpec(4), PredictorSpec(5)};
}

DesignMatrix build_design(const Dataset& d, PredictorSpec spec) {
  DesignMatrix m{spec, MatrixXd(static_cast<Index>(d.size()), spec.columns()),
                 VectorXd(static_cast<Index>(d.size()))};
  for (std::size_t i = 0; i < d.size(); ++i) {
    const auto& r = d[i];
    auto row = static_cast<Index>(i);
    if (spec.uses_proportion() && !r.prop_women)
      throw ValidationError("study '" + r.id +
                            "' has no prop_women; run impute_missing_proportion first");
    double x1 = r.prop_women.value_or(0.0);
    double x2 = r.origin_flag ? 1.0 : 0.0;
    Index c = 0;
    m.x(row, c++) = 1.0;
    if (spec.uses_proportion()) m.x(row, c++) = x1;
    if (spec.uses_origin()) m.x(row, c++) = x2;
    if (spec.uses_interaction()) m.x(row, c++) = x1 * x2;
    m.offset(row) = std::log(r.exposure);
  }
  return m;
}

int FittedModel::n_parameters() const {
  return static_cast<int>(beta.size()) + (family == Family::ZtNegBin ? 1 : 0);
}

double FittedModel::poisson_intercept() const {
  return family == Family::TruncBinomial ? beta(0) + std::log(2.0) : beta(0);
}

namespace {

double log1pexp(double x) { return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }

// Per-observation derivatives with respect to the linear predictor eta
// (and log alpha for the negative binomial).
struct ObsTerms {
  double value = 0.0;
  double g_eta = 0.0;
  double h_eta = 0.0;
  double g_phi = 0.0;
  double h_eta_phi = 0.0;
  double h_phi = 0.0;
};

ObsTerms zt_poisson_terms(int y, double eta) {
  double mu = std::exp(eta);
  double p = -std::expm1(-mu);  // 1 - P(Y = 0)
  double u = mu * std::exp(-mu);
  ObsTerms t;
  t.value = y * eta - mu - boost::math::lgamma(y + 1.0) - std::log(p);
  t.g_eta = y - mu - u / p;
  t.h_eta = -mu - u * (p - mu) / (p * p);
  return t;
}

ObsTerms zt_negbin_terms(int y, double eta, double phi) {
  double a = std::exp(phi);
  double m = std::exp(eta);
  double ma = m + a;
  double s = m / ma;
  double log_r = -std::log1p(m / a);  // log(a / (m + a))

  // lgamma(y + a) - lgamma(a) - y log a and the digamma/trigamma differences,
  // summed exactly for integer y.
  double lg = 0.0, s1 = 0.0, s2 = 0.0;
  for (int k = 0; k < y; ++k) {
    double ak = a + k;
    lg += std::log1p(k / a);
    s1 += 1.0 / ak;
    s2 += 1.0 / (ak * ak);
  }

  double nb = lg - boost::math::lgamma(y + 1.0) + a * log_r + y * (eta + log_r);
  double nb_e = a * (y - m) / ma;
  double nb_a = s1 + log_r + (m - y) / ma;
  double nb_ee = -a * m * (a + y) / (ma * ma);
  double nb_ea = m * (y - m) / (ma * ma);
  double nb_aa = -s2 + m / (a * ma) + (y - m) / (ma * ma);

  // Truncation term -log(1 - p0) with log p0 = a log(a / (m + a)).
  double lp0 = a * log_r;
  double p0 = std::exp(lp0);
  double obs = -std::expm1(lp0);
  double w = p0 / obs;
  double w1 = w / obs;
  double l_e = -a * s;
  double l_a = log_r + s;
  double l_ee = -a * a * m / (ma * ma);
  double l_ea = -m * m / (ma * ma);
  double l_aa = m * m / (a * ma * ma);

  double g_e = nb_e + w * l_e;
  double g_a = nb_a + w * l_a;
  double h_ee = nb_ee + w * l_ee + w1 * l_e * l_e;
  double h_ea = nb_ea + w * l_ea + w1 * l_e * l_a;
  double h_aa = nb_aa + w * l_aa + w1 * l_a * l_a;

  ObsTerms t;
  t.value = nb - std::log(obs);
  t.g_eta = g_e;
  t.h_eta = h_ee;
  t.g_phi = a * g_a;
  t.h_eta_phi = a * h_ea;
  t.h_phi = a * a * h_aa + a * g_a;
  return t;
}

ObsTerms binomial_terms(int y, double eta) {
  double z = y == 2 ? 1.0 : 0.0;
  double q = 1.0 / (1.0 + std::exp(-eta));
  ObsTerms t;
  t.value = z * eta - log1pexp(eta);
  t.g_eta = z - q;
  t.h_eta = -q * (1.0 - q);
  return t;
}

void check_counts(Family f, const DesignMatrix& design, std::span<const int> counts) {
  if (static_cast<Index>(counts.size()) != design.rows())
    throw ValidationError("count vector length does not match design rows");
  for (std::size_t i = 0; i < counts.size(); ++i) {
    int y = counts[i];
    if (f == Family::TruncBinomial) {
      if (y != 1 && y != 2)
        throw ValidationError("binomial fit needs counts of 1 or 2; row " + std::to_string(i + 1) +
                              " has " + std::to_string(y));
    } else if (y < 1) {
      throw ValidationError("zero-truncated fit needs counts >= 1; row " + std::to_string(i + 1) +
                            " has " + std::to_string(y));
    }
  }
}

void check_rank(const DesignMatrix& design) {
  if (design.rows() < design.cols())
    throw SingularDesignError("design has fewer rows (" + std::to_string(design.rows()) +
                              ") than columns (" + std::to_string(design.cols()) + ")");
  Eigen::ColPivHouseholderQR<MatrixXd> qr(design.x);
  qr.setThreshold(1e-10);
  if (qr.rank() < design.cols())
    throw SingularDesignError("design for predictor " + std::to_string(design.spec.index()) +
                              " is rank deficient");
}

// With every count equal to one the zero-truncated likelihood increases
// without bound as mu -> 0, so no finite maximiser exists.
bool all_ones(std::span<const int> counts) {
  return std::all_of(counts.begin(), counts.end(), [](int y) { return y == 1; });
}

struct Bounds {
  VectorXd lower;
  VectorXd upper;
};

struct Maximum {
  VectorXd theta;
  LikelihoodEval eval;
  int iterations = 0;
  bool converged = false;
  bool at_boundary = false;
  double score_norm = 0.0;
};

// Damped Newton ascent with step halving and box constraints handled by an
// active set: a coordinate sitting on a bound whose gradient points outward
// is held fixed for the step.
template <typename Eval>
Maximum newton_maximize(const Eval& eval, VectorXd theta, const Bounds& bounds,
                        const FitOptions& opts) {
  const Index p = theta.size();
  Maximum out;
  LikelihoodEval cur = eval(theta);
  if (!std::isfinite(cur.value)) throw NumericalError("log-likelihood is not finite at the start");
  bool polished = false;  // one extra Newton step once the tolerance is met
  for (int it = 0; it <= opts.max_iterations; ++it) {
    std::vector<Index> free;
    for (Index j = 0; j < p; ++j) {
      bool at_lo = theta(j) <= bounds.lower(j) && cur.gradient(j) <= 0.0;
      bool at_hi = theta(j) >= bounds.upper(j) && cur.gradient(j) >= 0.0;
      if (!(at_lo || at_hi)) free.push_back(j);
    }
    double gnorm = 0.0;
    for (Index j : free) gnorm = std::max(gnorm, std::abs(cur.gradient(j)));
    out.iterations = it;
    out.score_norm = gnorm;
    if (gnorm < opts.tolerance) {
      out.converged = true;
      if (polished || gnorm == 0.0) break;
      polished = true;
    }
    if (it == opts.max_iterations) break;

    const auto nf = static_cast<Index>(free.size());
    MatrixXd info(nf, nf);
    VectorXd g(nf);
    for (Index a = 0; a < nf; ++a) {
      g(a) = cur.gradient(free[a]);
      for (Index b = 0; b < nf; ++b) info(a, b) = -cur.hessian(free[a], free[b]);
    }
    // Levenberg shift until the negated Hessian is positive definite.
    VectorXd step;
    double shift = 0.0;
    double scale = std::max(1e-12, info.diagonal().cwiseAbs().maxCoeff());
    for (int k = 0; k < 60; ++k) {
      Eigen::LLT<MatrixXd> llt(info + shift * MatrixXd::Identity(nf, nf));
      if (llt.info() == Eigen::Success) {
        step = llt.solve(g);
        if (step.allFinite()) break;
      }
      shift = shift == 0.0 ? 1e-10 * scale : shift * 10.0;
      step.resize(0);
    }
    if (step.size() == 0) break;

    bool improved = false;
    double t = 1.0;
    for (int h = 0; h < 60; ++h, t *= 0.5) {
      VectorXd cand = theta;
      for (Index a = 0; a < nf; ++a) {
        Index j = free[a];
        cand(j) = std::clamp(theta(j) + t * step(a), bounds.lower(j), bounds.upper(j));
      }
      LikelihoodEval next = eval(cand);
      if (!std::isfinite(next.value)) continue;
      // Near the optimum the change in value drops below rounding noise; a
      // step is then accepted when it shrinks the score instead.
      double noise = 1e-13 * (1.0 + std::abs(cur.value));
      bool better = next.value > cur.value + noise;
      if (!better && next.value >= cur.value - noise) {
        double gn = 0.0;
        for (Index j : free) gn = std::max(gn, std::abs(next.gradient(j)));
        better = gn < gnorm;
      }
      if (better) {
        theta = std::move(cand);
        cur = std::move(next);
        improved = true;
        break;
      }
    }
    if (!improved) {
      out.iterations = it + 1;
      break;
    }
  }
  for (Index j = 0; j < p; ++j)
    if (theta(j) <= bounds.lower(j) || theta(j) >= bounds.upper(j)) out.at_boundary = true;
  out.theta = std::move(theta);
  out.eval = std::move(cur);
  return out;
}

Bounds unbounded(Index p) {
  constexpr double inf = std::numeric_limits<double>::infinity();
  return {VectorXd::Constant(p, -inf), VectorXd::Constant(p, inf)};
}

VectorXd start_beta(const DesignMatrix& design, std::span<const int> counts) {
  VectorXd beta = VectorXd::Zero(design.cols());
  double ys = 0.0, es = 0.0;
  for (Index i = 0; i < design.rows(); ++i) {
    ys += counts[static_cast<std::size_t>(i)];
    es += std::exp(design.offset(i));
  }
  beta(0) = std::log(ys / es);
  return beta;
}

// Inverse of the observed information; returns false if not positive definite.
bool invert_information(const MatrixXd& hessian, MatrixXd& cov) {
  MatrixXd info = -hessian;
  info = 0.5 * (info + info.transpose());
  Eigen::LDLT<MatrixXd> ldlt(info);
  if (ldlt.info() != Eigen::Success || !ldlt.isPositive()) return false;
  if ((ldlt.vectorD().array() <= 0.0).any()) return false;
  cov = ldlt.solve(MatrixXd::Identity(info.rows(), info.cols()));
  cov = 0.5 * (cov + cov.transpose());
  return cov.allFinite();
}

void finish(FittedModel& m, const Maximum& mx, int n_used) {
  m.loglik = mx.eval.value;
  m.n_used = n_used;
  m.converged = mx.converged;
  m.iterations = mx.iterations;
  m.score_norm = mx.score_norm;
  m.at_boundary = mx.at_boundary;
  m.bic = -2.0 * m.loglik + m.n_parameters() * std::log(static_cast<double>(n_used));
}

}  // namespace

LikelihoodEval evaluate_likelihood(Family f, const DesignMatrix& design, std::span<const int> counts,
                                   const VectorXd& theta, bool with_hessian) {
  const Index p = design.cols();
  const bool nb = f == Family::ZtNegBin;
  const Index k = p + (nb ? 1 : 0);
  if (theta.size() != k) throw ValidationError("parameter vector has the wrong length");
  LikelihoodEval out;
  out.gradient = VectorXd::Zero(k);
  if (with_hessian) out.hessian = MatrixXd::Zero(k, k);
  VectorXd eta = design.x * theta.head(p) + design.offset;
  for (Index i = 0; i < design.rows(); ++i) {
    int y = counts[static_cast<std::size_t>(i)];
    ObsTerms t;
    switch (f) {
      case Family::ZtPoisson: t = zt_poisson_terms(y, eta(i)); break;
      case Family::ZtNegBin: t = zt_negbin_terms(y, eta(i), theta(p)); break;
      case Family::TruncBinomial: t = binomial_terms(y, eta(i)); break;
    }
    auto xi = design.x.row(i).transpose();
    out.value += t.value;
    out.gradient.head(p) += t.g_eta * xi;
    if (with_hessian) out.hessian.topLeftCorner(p, p) += t.h_eta * xi * xi.transpose();
    if (nb) {
      out.gradient(p) += t.g_phi;
      if (with_hessian) {
        out.hessian.block(0, p, p, 1) += t.h_eta_phi * xi;
        out.hessian(p, p) += t.h_phi;
      }
    }
  }
  if (with_hessian && nb) out.hessian.block(p, 0, 1, p) = out.hessian.block(0, p, p, 1).transpose();
  return out;
}

FittedModel fit_zt_poisson(const DesignMatrix& design, std::span<const int> counts,
                           const FitOptions& opts) {
  check_counts(Family::ZtPoisson, design, counts);
  check_rank(design);
  auto eval = [&](const VectorXd& th) {
    return evaluate_likelihood(Family::ZtPoisson, design, counts, th);
  };
  Maximum mx = newton_maximize(eval, start_beta(design, counts), unbounded(design.cols()), opts);
  FittedModel m;
  m.family = Family::ZtPoisson;
  m.spec = design.spec;
  m.beta = mx.theta;
  if (!invert_information(mx.eval.hessian, m.cov_beta))
    throw NumericalError("observed information is not positive definite");
  m.cov_full = m.cov_beta;
  finish(m, mx, static_cast<int>(design.rows()));
  if (all_ones(counts)) m.converged = false;
  return m;
}

FittedModel fit_zt_negbin(const DesignMatrix& design, std::span<const int> counts,
                          const FitOptions& opts) {
  check_counts(Family::ZtNegBin, design, counts);
  check_rank(design);
  const Index p = design.cols();
  Bounds bounds = unbounded(p + 1);
  bounds.lower(p) = std::log(kDispersionMin);
  bounds.upper(p) = std::log(kDispersionMax);
  if (opts.fixed_dispersion) {
    if (!(*opts.fixed_dispersion > 0.0)) throw ValidationError("dispersion must be positive");
    bounds.lower(p) = bounds.upper(p) = std::log(*opts.fixed_dispersion);
  }
  auto eval = [&](const VectorXd& th) {
    return evaluate_likelihood(Family::ZtNegBin, design, counts, th);
  };

  // Start from the Poisson fit at both a moderate and the Poisson-limit
  // dispersion; the profile in log alpha can be very flat.
  VectorXd beta0 = start_beta(design, counts);
  try {
    FitOptions po;
    FittedModel pm = fit_zt_poisson(design, counts, po);
    if (pm.converged) beta0 = pm.beta;
  } catch (const NumericalError&) {
  }
  Maximum best;
  bool have = false;
  for (double phi0 : {0.0, bounds.upper(p)}) {
    VectorXd th(p + 1);
    th.head(p) = beta0;
    th(p) = std::clamp(phi0, bounds.lower(p), bounds.upper(p));
    Maximum mx = newton_maximize(eval, th, bounds, opts);
    if (!have || mx.eval.value > best.eval.value ||
        (mx.converged && !best.converged && mx.eval.value >= best.eval.value - 1e-9)) {
      best = std::move(mx);
      have = true;
    }
    if (opts.fixed_dispersion) break;
  }

  FittedModel m;
  m.family = Family::ZtNegBin;
  m.spec = design.spec;
  m.beta = best.theta.head(p);
  m.dispersion = std::exp(best.theta(p));
  MatrixXd cov;
  if (!opts.fixed_dispersion && invert_information(best.eval.hessian, cov)) {
    m.cov_full = cov;
    m.cov_beta = cov.topLeftCorner(p, p);
  } else {
    if (!invert_information(best.eval.hessian.topLeftCorner(p, p), m.cov_beta))
      throw NumericalError("observed information is not positive definite");
    m.cov_full = MatrixXd::Zero(p + 1, p + 1);
    m.cov_full.topLeftCorner(p, p) = m.cov_beta;
  }
  finish(m, best, static_cast<int>(design.rows()));
  if (opts.fixed_dispersion) m.at_boundary = false;
  if (all_ones(counts)) m.converged = false;
  return m;
}

FittedModel fit_truncated_binomial(const DesignMatrix& design, std::span<const int> counts,
                                   const FitOptions& opts) {
  check_counts(Family::TruncBinomial, design, counts);
  check_rank(design);
  auto eval = [&](const VectorXd& th) {
    return evaluate_likelihood(Family::TruncBinomial, design, counts, th);
  };
  Maximum mx = newton_maximize(eval, VectorXd::Zero(design.cols()), unbounded(design.cols()), opts);
  FittedModel m;
  m.family = Family::TruncBinomial;
  m.spec = design.spec;
  m.beta = mx.theta;
  finish(m, mx, static_cast<int>(design.rows()));

  // Complete separation: every fitted probability reproduces its indicator.
  VectorXd q = fitted_q(m, design);
  bool separated = true;
  for (Index i = 0; i < q.size(); ++i) {
    double z = counts[static_cast<std::size_t>(i)] == 2 ? 1.0 : 0.0;
    if (std::abs(z - q(i)) > 1e-6) {
      separated = false;
      break;
    }
  }
  if (separated) m.converged = false;
  if (!invert_information(mx.eval.hessian, m.cov_beta)) {
    if (m.converged) throw NumericalError("observed information is not positive definite");
    m.cov_beta = MatrixXd::Constant(design.cols(), design.cols(),
                                    std::numeric_limits<double>::quiet_NaN());
  }
  m.cov_full = m.cov_beta;
  return m;
}

FittedModel fit(Family f, const DesignMatrix& design, std::span<const int> counts,
                const FitOptions& opts) {
  switch (f) {
    case Family::ZtPoisson: return fit_zt_poisson(design, counts, opts);
    case Family::ZtNegBin: return fit_zt_negbin(design, counts, opts);
    case Family::TruncBinomial: return fit_truncated_binomial(design, counts, opts);
  }
  throw ValidationError("unknown family");
}

VectorXd fitted_q(const FittedModel& model, const DesignMatrix& design) {
  if (model.family != Family::TruncBinomial)
    throw ValidationError("fitted probabilities exist only for the binomial family");
  if (design.spec != model.spec) throw ValidationError("design does not match the model's predictor");
  VectorXd eta = design.x * model.beta + design.offset;
  return eta.unaryExpr([](double e) { return 1.0 / (1.0 + std::exp(-e)); });
}

VectorXd mu_hat(const FittedModel& model, const DesignMatrix& design) {
  if (design.spec != model.spec) throw ValidationError("design does not match the model's predictor");
  VectorXd mu(design.rows());
  if (model.family == Family::TruncBinomial) {
    // 2q/(1-q) written as 2exp(eta) so that q near 1 keeps full precision
    mu = 2.0 * (design.x * model.beta + design.offset).array().exp();
  } else {
    mu = (design.x * model.beta + design.offset).array().exp();
  }
  for (Index i = 0; i < mu.size(); ++i)
    if (!(mu(i) > 0.0) || !std::isfinite(mu(i)))
      throw NumericalError("expected count at row " + std::to_string(i + 1) +
                           " is not positive and finite");
  return mu;
}

Dataset fitting_sample(const Dataset& d, Family f) {
  return f == Family::TruncBinomial ? ones_and_twos(d) : d;
}

std::vector<std::optional<FittedModel>> fit_all_specs(const Dataset& d, Family f) {
  Dataset sample = fitting_sample(d, f);
  auto counts = sample.counts();
  std::vector<std::optional<FittedModel>> out;
  for (PredictorSpec spec : PredictorSpec::all()) {
    try {
      out.emplace_back(fit(f, build_design(sample, spec), counts));
    } catch (const NumericalError&) {
      out.emplace_back(std::nullopt);
    }
  }
  return out;
}

FittedModel select_model(const Dataset& d, Family f) {
  std::optional<FittedModel> best;
  for (auto& m : fit_all_specs(d, f)) {
    if (!m || !m->converged) continue;
    if (!best || m->bic < best->bic) best = std::move(m);
  }
  if (!best)
    throw ConvergenceError("no predictor produced a converged " + std::string(to_string(f)) + " fit");
  return *best;
}

}  // namespace truncount
