#include "truncount/dataset.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <bit>
#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>
#include <unordered_set>

#include "truncount/error.hpp"

namespace truncount {

namespace {

constexpr const char* kColumns[] = {"id", "count", "exposure", "prop_women", "origin_flag"};

std::string trim(std::string_view s) {
  auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  auto e = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(b, e - b + 1));
}

std::vector<std::string> split(const std::string& line) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    auto pos = line.find(',', start);
    out.push_back(trim(std::string_view(line).substr(start, pos - start)));
    if (pos == std::string::npos) break;
    start = pos + 1;
  }
  return out;
}

template <typename T>
bool parse_number(const std::string& s, T& out) {
  if (s.empty()) return false;
  const char* first = s.data();
  if (*first == '+') ++first;
  auto [ptr, ec] = std::from_chars(first, s.data() + s.size(), out);
  return ec == std::errc() && ptr == s.data() + s.size();
}

std::string format_double(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

[[noreturn]] void fail(std::size_t row, const char* col, const std::string& msg) {
  throw ParseError("row " + std::to_string(row) + ", column '" + col + "': " + msg, row, col);
}

}  // namespace

void validate(const StudyRecord& r) {
  if (r.count < 0) throw ValidationError("study '" + r.id + "': count must be nonnegative");
  if (!(r.exposure > 0.0) || !std::isfinite(r.exposure))
    throw ValidationError("study '" + r.id + "': exposure must be positive");
  if (r.prop_women && !(*r.prop_women >= 0.0 && *r.prop_women <= 1.0))
    throw ValidationError("study '" + r.id + "': prop_women must lie in [0, 1]");
}

Dataset::Dataset(std::vector<StudyRecord> records, bool truncated)
    : records_(std::move(records)), truncated_(truncated) {
  std::unordered_set<std::string> ids;
  for (const auto& r : records_) {
    validate(r);
    if (!ids.insert(r.id).second) throw ValidationError("duplicate study id '" + r.id + "'");
    if (truncated_ && r.count == 0)
      throw ValidationError("study '" + r.id + "' has a zero count in a truncated dataset");
  }
}

std::vector<int> Dataset::counts() const {
  std::vector<int> out;
  out.reserve(records_.size());
  for (const auto& r : records_) out.push_back(r.count);
  return out;
}

std::vector<double> Dataset::exposures() const {
  std::vector<double> out;
  out.reserve(records_.size());
  for (const auto& r : records_) out.push_back(r.exposure);
  return out;
}

bool Dataset::has_missing_covariates() const {
  return std::any_of(records_.begin(), records_.end(),
                     [](const StudyRecord& r) { return !r.prop_women.has_value(); });
}

long long Dataset::total_count() const {
  long long s = 0;
  for (const auto& r : records_) s += r.count;
  return s;
}

FrequencyTable::FrequencyTable(std::span<const int> counts) {
  for (int y : counts) {
    ++freq_[y];
    ++total_;
  }
}

long long FrequencyTable::operator[](int y) const {
  auto it = freq_.find(y);
  return it == freq_.end() ? 0 : it->second;
}

Dataset parse_csv(std::istream& in, bool truncated) {
  std::string line;
  std::size_t row = 0;
  bool have_header = false;
  std::vector<StudyRecord> records;
  while (std::getline(in, line)) {
    ++row;
    std::string t = trim(line);
    if (t.empty() || t.front() == '#') continue;
    if (!have_header) {
      if (row == 1 && t.rfind("\xEF\xBB\xBF", 0) == 0) t.erase(0, 3);
      if (t != kCsvHeader)
        throw ParseError("row " + std::to_string(row) + ": expected header '" + kCsvHeader + "'",
                         row, "header");
      have_header = true;
      continue;
    }
    auto cells = split(t);
    if (cells.size() != 5)
      fail(row, "id", "expected 5 fields, found " + std::to_string(cells.size()));
    StudyRecord r;
    r.id = cells[0];
    if (r.id.empty()) fail(row, kColumns[0], "empty id");
    if (!parse_number(cells[1], r.count) || r.count < 0)
      fail(row, kColumns[1], "'" + cells[1] + "' is not a nonnegative integer");
    if (!parse_number(cells[2], r.exposure) || !std::isfinite(r.exposure))
      fail(row, kColumns[2], "'" + cells[2] + "' is not a number");
    if (!(r.exposure > 0.0))
      throw ValidationError("row " + std::to_string(row) + ", column 'exposure': must be positive");
    if (!cells[3].empty()) {
      double p = 0.0;
      if (!parse_number(cells[3], p)) fail(row, kColumns[3], "'" + cells[3] + "' is not a number");
      if (!(p >= 0.0 && p <= 1.0))
        throw ValidationError("row " + std::to_string(row) +
                              ", column 'prop_women': must lie in [0, 1]");
      r.prop_women = p;
    }
    if (cells[4] == "0") {
      r.origin_flag = false;
    } else if (cells[4] == "1") {
      r.origin_flag = true;
    } else {
      fail(row, kColumns[4], "'" + cells[4] + "' must be 0 or 1");
    }
    records.push_back(std::move(r));
  }
  if (!have_header) throw ParseError("missing header", row, "header");
  if (records.empty()) throw ValidationError("no records");
  bool any_zero = std::any_of(records.begin(), records.end(),
                              [](const StudyRecord& r) { return r.count == 0; });
  return Dataset(std::move(records), truncated && !any_zero);
}

Dataset load_csv(const std::filesystem::path& path, bool truncated) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open '" + path.string() + "'");
  return parse_csv(in, truncated);
}

void write_csv(std::ostream& out, const Dataset& d) {
  out << kCsvHeader << '\n';
  for (const auto& r : d.records()) {
    out << r.id << ',' << r.count << ',' << format_double(r.exposure) << ',';
    if (r.prop_women) out << format_double(*r.prop_women);
    out << ',' << (r.origin_flag ? 1 : 0) << '\n';
  }
}

void write_csv(const std::filesystem::path& path, const Dataset& d) {
  std::ofstream out(path);
  if (!out) throw ValidationError("cannot write '" + path.string() + "'");
  write_csv(out, d);
}

FrequencyTable frequency_table(const Dataset& d) {
  auto c = d.counts();
  return FrequencyTable(c);
}

Dataset zero_truncate(const Dataset& d) {
  std::vector<StudyRecord> kept;
  kept.reserve(d.size());
  std::copy_if(d.records().begin(), d.records().end(), std::back_inserter(kept),
               [](const StudyRecord& r) { return r.count > 0; });
  return Dataset(std::move(kept), true);
}

Dataset ones_and_twos(const Dataset& d) {
  std::vector<StudyRecord> kept;
  std::copy_if(d.records().begin(), d.records().end(), std::back_inserter(kept),
               [](const StudyRecord& r) { return r.count == 1 || r.count == 2; });
  return Dataset(std::move(kept), true);
}

namespace {

// Candidate terms of the imputation model, in column order after the intercept.
enum Term : unsigned { kExposure = 1u, kOrigin = 2u, kInteraction = 4u };

struct OlsFit {
  Eigen::VectorXd coef;
  double bic = 0.0;
};

Eigen::MatrixXd imputation_design(const std::vector<const StudyRecord*>& rows, unsigned terms) {
  int p = 1 + std::popcount(terms);
  Eigen::MatrixXd x(static_cast<Eigen::Index>(rows.size()), p);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto& r = *rows[i];
    double o = r.origin_flag ? 1.0 : 0.0;
    int c = 0;
    auto ii = static_cast<Eigen::Index>(i);
    x(ii, c++) = 1.0;
    if (terms & kExposure) x(ii, c++) = r.exposure;
    if (terms & kOrigin) x(ii, c++) = o;
    if (terms & kInteraction) x(ii, c++) = r.exposure * o;
  }
  return x;
}

// Gaussian-likelihood BIC with the error variance counted as a parameter.
OlsFit fit_ols(const Eigen::MatrixXd& x, const Eigen::VectorXd& y) {
  Eigen::CompleteOrthogonalDecomposition<Eigen::MatrixXd> cod(x);
  cod.setThreshold(1e-10);
  OlsFit fit;
  fit.coef = cod.solve(y);
  double n = static_cast<double>(y.size());
  double rss = (y - x * fit.coef).squaredNorm();
  double loglik = -0.5 * n * (std::log(2.0 * M_PI * rss / n) + 1.0);
  fit.bic = -2.0 * loglik + static_cast<double>(cod.rank() + 1) * std::log(n);
  return fit;
}

}  // namespace

Dataset impute_missing_proportion(const Dataset& d) {
  if (!d.has_missing_covariates()) return d;
  std::vector<const StudyRecord*> complete;
  for (const auto& r : d.records())
    if (r.prop_women) complete.push_back(&r);

  constexpr unsigned kFull = kExposure | kOrigin | kInteraction;
  if (complete.size() < 3 + 2)
    throw InsufficientDataError("imputation needs at least 5 complete records, found " +
                                std::to_string(complete.size()));

  Eigen::VectorXd y(static_cast<Eigen::Index>(complete.size()));
  for (std::size_t i = 0; i < complete.size(); ++i)
    y(static_cast<Eigen::Index>(i)) = *complete[i]->prop_women;

  unsigned terms = kFull;
  OlsFit best = fit_ols(imputation_design(complete, terms), y);
  while (terms != 0) {
    // Main effects are only removable once the interaction has gone.
    std::vector<unsigned> removable;
    if (terms & kInteraction) {
      removable.push_back(kInteraction);
    } else {
      if (terms & kExposure) removable.push_back(kExposure);
      if (terms & kOrigin) removable.push_back(kOrigin);
    }
    unsigned best_terms = terms;
    OlsFit candidate_best = best;
    for (unsigned t : removable) {
      unsigned reduced = terms & ~t;
      OlsFit f = fit_ols(imputation_design(complete, reduced), y);
      if (f.bic < candidate_best.bic) {
        candidate_best = f;
        best_terms = reduced;
      }
    }
    if (best_terms == terms) break;
    terms = best_terms;
    best = candidate_best;
  }

  std::vector<StudyRecord> out = d.records();
  for (auto& r : out) {
    if (r.prop_women) continue;
    Eigen::MatrixXd row = imputation_design({&r}, terms);
    double pred = (row * best.coef)(0);
    r.prop_women = std::clamp(pred, 0.0, 1.0);
  }
  return Dataset(std::move(out), d.truncated());
}

double quantile_type7(std::vector<double> values, double p) {
  if (values.empty()) throw InsufficientDataError("quantile of an empty sample");
  std::sort(values.begin(), values.end());
  double h = (static_cast<double>(values.size()) - 1.0) * p;
  auto lo = static_cast<std::size_t>(std::floor(h));
  auto hi = std::min(lo + 1, values.size() - 1);
  return values[lo] + (h - static_cast<double>(lo)) * (values[hi] - values[lo]);
}

OutlierBounds outlier_bounds(const Dataset& d) {
  if (d.size() < 4)
    throw InsufficientDataError("outlier bounds need at least 4 records, found " +
                                std::to_string(d.size()));
  std::vector<double> rates;
  rates.reserve(d.size());
  for (const auto& r : d.records()) rates.push_back(r.count / r.exposure);
  double q1 = quantile_type7(rates, 0.25);
  double q3 = quantile_type7(rates, 0.75);
  OutlierBounds b;
  b.lower = q3 + 3.0 * (q3 - q1);
  b.upper = 1.2 * b.lower;
  return b;
}

Dataset append_outlier_records(const Dataset& d, std::span<const StudyRecord> outliers) {
  std::vector<StudyRecord> out = d.records();
  out.insert(out.end(), outliers.begin(), outliers.end());
  return Dataset(std::move(out), d.truncated());
}

}  // namespace truncount
