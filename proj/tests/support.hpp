#pragma once

#include <Eigen/Dense>

#include <functional>
#include <string>

#include "truncount/dataset.hpp"

#ifndef TRUNCOUNT_DATA_DIR
#error "TRUNCOUNT_DATA_DIR must point at the bundled data directory"
#endif

namespace testing {

inline std::string data_path(const std::string& name) { return std::string(TRUNCOUNT_DATA_DIR) + "/" + name; }

inline truncount::Dataset case_study() {
  return truncount::impute_missing_proportion(truncount::load_csv(data_path("case_study.csv")));
}

inline truncount::Dataset case_study_with_outliers() {
  auto extra = truncount::load_csv(data_path("case_study_outliers.csv"));
  return truncount::append_outlier_records(case_study(), extra.records());
}

// Central differences of f at x, step h.
inline Eigen::VectorXd fd_gradient(const std::function<double(const Eigen::VectorXd&)>& f,
                                   const Eigen::VectorXd& x, double h = 1e-5) {
  Eigen::VectorXd g(x.size());
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    Eigen::VectorXd a = x, b = x;
    a(i) += h;
    b(i) -= h;
    g(i) = (f(a) - f(b)) / (2 * h);
  }
  return g;
}

inline double rel_err(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
  double scale = std::max(1.0, b.lpNorm<Eigen::Infinity>());
  return (a - b).lpNorm<Eigen::Infinity>() / scale;
}

}  // namespace testing
