#include <cmath>
#include <random>

#include "doctest.h"
#include "support.hpp"
#include "truncount/error.hpp"
#include "truncount/glm.hpp"

using namespace truncount;
using Eigen::VectorXd;

namespace {

StudyRecord rec(std::string id, int count, double exposure, double x1 = 0.5, bool x2 = false) {
  return StudyRecord{std::move(id), count, exposure, x1, x2};
}

FittedModel fit_on(const Dataset& d, Family f, int spec) {
  Dataset s = fitting_sample(d, f);
  return fit(f, build_design(s, PredictorSpec(spec)), s.counts());
}

}  // namespace

TEST_CASE("design matrices") {
  Dataset d = testing::case_study();
  DesignMatrix x1 = build_design(d, PredictorSpec(1));
  CHECK(x1.rows() == 27);
  CHECK(x1.cols() == 1);
  CHECK(x1.x.isOnes());
  CHECK(x1.offset(0) == doctest::Approx(std::log(77602.0)));

  const int widths[] = {1, 2, 2, 3, 4};
  for (int s = 1; s <= 5; ++s) CHECK(build_design(d, PredictorSpec(s)).cols() == widths[s - 1]);

  DesignMatrix x4 = build_design(d, PredictorSpec(4));
  VectorXd means = x4.x.colwise().mean();
  double x1_mean = (0.7651923076923077 * 26 + 0.8226667918563475) / 27;  // tallied, Smith 2004 imputed
  CHECK(means(1) == doctest::Approx(x1_mean).epsilon(1e-9));
  CHECK(means(2) == doctest::Approx(10.0 / 27));

  Dataset z({rec("a", 1, 10, 0.0, true)});
  DesignMatrix x5 = build_design(z, PredictorSpec(5));
  CHECK(x5.x(0, 1) == 0.0);
  CHECK(x5.x(0, 2) == 1.0);
  CHECK(x5.x(0, 3) == 0.0);

  CHECK_THROWS_AS(build_design(load_csv(testing::data_path("case_study.csv")), PredictorSpec(2)), ValidationError);
  CHECK_NOTHROW(build_design(load_csv(testing::data_path("case_study.csv")), PredictorSpec(3)));
  CHECK_THROWS_AS(PredictorSpec(6), ValidationError);
}

// Frozen log-likelihoods; the Poisson and binomial values agree with
// statsmodels (TruncatedLFPoisson, GLM Binomial with offset) to 1e-9.
TEST_CASE("case-study fits reproduce the reference log-likelihoods") {
  Dataset d = testing::case_study();
  const double pois[] = {-23.725046460851967, -23.42339405856165, -23.02628737059143, -23.016301189726487,
                         -22.68867903398829};
  const double bin[] = {-7.782430144297343, -7.0451117350285735, -7.778445009842686, -7.041245873257149,
                        -5.682788720412074};
  for (int s = 1; s <= 5; ++s) {
    CAPTURE(s);
    FittedModel p = fit_on(d, Family::ZtPoisson, s);
    CHECK(p.converged);
    CHECK(p.loglik == doctest::Approx(pois[s - 1]).epsilon(1e-8));
    CHECK(p.bic == doctest::Approx(-2 * pois[s - 1] + PredictorSpec(s).columns() * std::log(27.0)).epsilon(1e-8));
    FittedModel b = fit_on(d, Family::TruncBinomial, s);
    CHECK(b.converged);
    CHECK(b.n_used == 21);
    CHECK(b.loglik == doctest::Approx(bin[s - 1]).epsilon(1e-7));
    FittedModel n = fit_on(d, Family::ZtNegBin, s);
    CHECK(n.converged);
    CHECK(n.at_boundary);
    CHECK(*n.dispersion == doctest::Approx(kDispersionMax));
    CHECK(n.loglik == doctest::Approx(pois[s - 1]).epsilon(1e-6));
    CHECK(n.bic - p.bic == doctest::Approx(std::log(27.0)).epsilon(1e-5));
  }
}

TEST_CASE("Poisson coefficients match statsmodels") {
  Dataset d = testing::case_study();
  CHECK(fit_on(d, Family::ZtPoisson, 1).beta(0) == doctest::Approx(-8.05496962).epsilon(1e-7));
  FittedModel m = fit_on(d, Family::ZtPoisson, 4);
  CHECK(m.beta(0) == doctest::Approx(-7.71162411).epsilon(1e-6));
  CHECK(m.beta(1) == doctest::Approx(-0.10967677).epsilon(1e-5));
  CHECK(m.beta(2) == doctest::Approx(-0.36917191).epsilon(1e-6));
}

TEST_CASE("intercept-only Poisson fit agrees with a golden-section search") {
  Dataset d({rec("a", 1, 1.0), rec("b", 3, 1.0)});
  auto ll = [](double b) {
    double mu = std::exp(b);
    return (1 + 3) * b - 2 * mu - std::log(6.0) - 2 * std::log(-std::expm1(-mu));
  };
  const double g = (std::sqrt(5.0) - 1) / 2;
  double lo = -5, hi = 5;
  double c = hi - g * (hi - lo), e = lo + g * (hi - lo);
  while (hi - lo > 1e-12) {
    if (ll(c) > ll(e)) {
      hi = e;
      e = c;
      c = hi - g * (hi - lo);
    } else {
      lo = c;
      c = e;
      e = lo + g * (hi - lo);
    }
  }
  FittedModel m = fit_zt_poisson(build_design(d, PredictorSpec(1)), d.counts());
  CHECK(m.converged);
  CHECK(std::abs(m.beta(0) - 0.5 * (lo + hi)) < 1e-8);
  CHECK(m.loglik == doctest::Approx(ll(m.beta(0))).epsilon(1e-12));
}

TEST_CASE("analytic scores and information match finite differences") {
  Dataset d = testing::case_study();
  for (Family f : {Family::ZtPoisson, Family::ZtNegBin, Family::TruncBinomial}) {
    for (int s = 1; s <= 5; ++s) {
      CAPTURE(to_string(f));
      CAPTURE(s);
      Dataset sample = fitting_sample(d, f);
      DesignMatrix x = build_design(sample, PredictorSpec(s));
      auto counts = sample.counts();
      FittedModel m = fit(f, x, counts);
      VectorXd theta = m.beta;
      if (f == Family::ZtNegBin) {
        theta.conservativeResize(theta.size() + 1);
        theta(theta.size() - 1) = std::log(2.5);  // interior point; the fit sits at the bound
      }
      auto value = [&](const VectorXd& t) { return evaluate_likelihood(f, x, counts, t, false).value; };
      LikelihoodEval at = evaluate_likelihood(f, x, counts, theta);
      CHECK(testing::rel_err(at.gradient, testing::fd_gradient(value, theta)) < 1e-4);
      Eigen::MatrixXd fd_h(theta.size(), theta.size());
      for (Eigen::Index j = 0; j < theta.size(); ++j) {
        auto grad_j = [&](const VectorXd& t) { return evaluate_likelihood(f, x, counts, t, false).gradient(j); };
        fd_h.row(j) = testing::fd_gradient(grad_j, theta).transpose();
      }
      double scale = std::max(1.0, at.hessian.cwiseAbs().maxCoeff());
      CHECK((at.hessian - fd_h).cwiseAbs().maxCoeff() / scale < 1e-3);
      if (f != Family::ZtNegBin) CHECK(m.score_norm < 1e-6);
      CHECK((m.cov_beta - m.cov_beta.transpose()).cwiseAbs().maxCoeff() <= 1e-10 * std::max(1.0, m.cov_beta.cwiseAbs().maxCoeff()));
      CHECK(Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(m.cov_beta).eigenvalues().minCoeff() >= -1e-12);
    }
  }
}

TEST_CASE("nested specs do not lose likelihood") {
  Dataset d = testing::case_study();
  for (Family f : {Family::ZtPoisson, Family::TruncBinomial}) {
    double l1 = fit_on(d, f, 1).loglik, l2 = fit_on(d, f, 2).loglik, l3 = fit_on(d, f, 3).loglik;
    double l4 = fit_on(d, f, 4).loglik, l5 = fit_on(d, f, 5).loglik;
    CHECK(l2 >= l1 - 1e-8);
    CHECK(l3 >= l1 - 1e-8);
    CHECK(l4 >= l2 - 1e-8);
    CHECK(l4 >= l3 - 1e-8);
    CHECK(l5 >= l4 - 1e-8);
  }
}

TEST_CASE("negative binomial nests the Poisson") {
  std::mt19937_64 rng(7);
  for (int rep = 0; rep < 20; ++rep) {
    std::vector<StudyRecord> r;
    std::uniform_real_distribution<double> ex(50, 500), x1(0, 1);
    for (int i = 0; i < 40; ++i) {
      double e = ex(rng);
      std::poisson_distribution<int> y(e * 0.004);
      int c = 0;
      while ((c = y(rng)) == 0) {
      }
      r.push_back(rec("s" + std::to_string(i), c, e, x1(rng), i % 2));
    }
    Dataset d(r);
    for (int s : {1, 4}) {
      DesignMatrix x = build_design(d, PredictorSpec(s));
      FittedModel p = fit_zt_poisson(x, d.counts());
      FittedModel n = fit_zt_negbin(x, d.counts());
      CHECK(n.loglik >= p.loglik - 1e-6);
      FitOptions pin;
      pin.fixed_dispersion = kDispersionMax;
      FittedModel at_max = fit_zt_negbin(x, d.counts(), pin);
      CHECK(std::abs(at_max.loglik - p.loglik) < 1e-4);
    }
  }
}

TEST_CASE("negative binomial on the outlier-augmented data") {
  Dataset d = testing::case_study_with_outliers();
  FittedModel n = fit_on(d, Family::ZtNegBin, 1);
  CHECK(n.converged);
  CHECK(n.at_boundary);
  CHECK(*n.dispersion == doctest::Approx(kDispersionMin));
  CHECK(n.loglik == doctest::Approx(-50.784874).epsilon(1e-6));
  FittedModel sel = select_model(d, Family::ZtNegBin);
  CHECK(sel.spec.index() == 1);
  CHECK(sel.bic < select_model(d, Family::ZtPoisson).bic);
}

TEST_CASE("truncated binomial") {
  SUBCASE("proportion MLE") {
    std::vector<StudyRecord> r;
    for (int i = 0; i < 9; ++i) r.push_back(rec("s" + std::to_string(i), i < 6 ? 1 : 2, 1.0));
    Dataset d(r);
    DesignMatrix x = build_design(d, PredictorSpec(1));
    FittedModel m = fit_truncated_binomial(x, d.counts());
    VectorXd q = fitted_q(m, x);
    for (Eigen::Index i = 0; i < q.size(); ++i) CHECK(q(i) == doctest::Approx(1.0 / 3).epsilon(1e-8));
  }
  SUBCASE("expected-count identities") {
    Dataset d = testing::case_study();
    for (int s = 1; s <= 5; ++s) {
      Dataset sample = ones_and_twos(d);
      DesignMatrix x = build_design(sample, PredictorSpec(s));
      FittedModel m = fit_truncated_binomial(x, sample.counts());
      VectorXd q = fitted_q(m, x);
      VectorXd mu = mu_hat(m, x);
      VectorXd direct = 2.0 * (x.x * m.beta + x.offset).array().exp();
      for (Eigen::Index i = 0; i < q.size(); ++i) {
        CHECK(std::abs(mu(i) - direct(i)) <= 1e-10 * std::max(1.0, direct(i)));
        CHECK(std::abs(q(i) - (mu(i) / 2) / (1 + mu(i) / 2)) < 1e-12);
      }
    }
  }
  SUBCASE("q = 1/2 gives mu = 2") {
    Dataset d({rec("a", 1, 1.0), rec("b", 2, 1.0)});
    DesignMatrix x = build_design(d, PredictorSpec(1));
    FittedModel m = fit_truncated_binomial(x, d.counts());
    CHECK(mu_hat(m, x)(0) == doctest::Approx(2.0).epsilon(1e-10));
  }
  SUBCASE("counts outside {1, 2}") {
    Dataset d({rec("a", 1, 1.0), rec("b", 3, 1.0)});
    CHECK_THROWS_AS(fit_truncated_binomial(build_design(d, PredictorSpec(1)), d.counts()), ValidationError);
  }
  SUBCASE("separation is reported as non-convergence") {
    Dataset d({rec("a", 1, 1.0), rec("b", 1, 2.0), rec("c", 1, 3.0)});
    FittedModel m = fit_truncated_binomial(build_design(d, PredictorSpec(1)), d.counts());
    CHECK_FALSE(m.converged);
  }
}

TEST_CASE("Poisson expected counts are proportional to exposure under spec 1") {
  Dataset d = testing::case_study();
  DesignMatrix x = build_design(d, PredictorSpec(1));
  VectorXd mu = mu_hat(fit_zt_poisson(x, d.counts()), x);
  double ratio = mu(0) / d[0].exposure;
  for (std::size_t i = 1; i < d.size(); ++i) CHECK(std::abs(mu(i) / d[i].exposure / ratio - 1) < 1e-10);
}

TEST_CASE("fit failures") {
  SUBCASE("rank-deficient design") {
    Dataset d({rec("a", 1, 10, 0.5, true), rec("b", 2, 20, 0.5, true), rec("c", 1, 30, 0.5, true)});
    CHECK_THROWS_AS(fit_zt_poisson(build_design(d, PredictorSpec(3)), d.counts()), SingularDesignError);
  }
  SUBCASE("all ones has no finite Poisson MLE") {
    Dataset d({rec("a", 1, 10), rec("b", 1, 20)});
    CHECK_FALSE(fit_zt_poisson(build_design(d, PredictorSpec(1)), d.counts()).converged);
  }
  SUBCASE("zero counts are rejected") {
    Dataset d({rec("a", 0, 10), rec("b", 1, 20)}, false);
    CHECK_THROWS_AS(fit_zt_poisson(build_design(d, PredictorSpec(1)), d.counts()), ValidationError);
  }
}

TEST_CASE("model selection") {
  Dataset d = testing::case_study();
  FittedModel p = select_model(d, Family::ZtPoisson);
  CHECK(p.spec.index() == 1);
  CHECK(p.bic == doctest::Approx(50.7459).epsilon(1e-5));
  FittedModel b = select_model(d, Family::TruncBinomial);
  CHECK(b.spec.index() == 1);
  CHECK(b.bic == doctest::Approx(18.6094).epsilon(1e-5));

  // strong proportion effect: spec 2 must win an exhaustive BIC comparison
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> u(0, 1), ex(500, 3000);
  std::vector<StudyRecord> r;
  for (int i = 0; i < 200; ++i) {
    double x1 = u(rng), e = ex(rng);
    std::poisson_distribution<int> y(e * std::exp(-7.0 + 3.0 * x1));
    int c = 0;
    while ((c = y(rng)) == 0) {
    }
    r.push_back(rec("s" + std::to_string(i), c, e, x1, u(rng) < 0.4));
  }
  Dataset syn(r);
  auto fits = fit_all_specs(syn, Family::ZtPoisson);
  int best = 0;
  for (int s = 1; s < 5; ++s)
    if (fits[s]->bic < fits[best]->bic) best = s;
  CHECK(best == 1);
  CHECK(select_model(syn, Family::ZtPoisson).spec.index() == 2);

  Dataset single({rec("a", 2, 10)});
  CHECK_THROWS_AS(select_model(single, Family::TruncBinomial), NumericalError);
}
