#include "report.hpp"

#include <fmt/format.h>
#include <openssl/evp.h>

#include <charconv>
#include <cmath>
#include <cstdlib>
#include <ctime>
#include <fstream>
#include <istream>
#include <memory>
#include <ostream>
#include <sstream>

#include "truncount/error.hpp"

namespace truncount::cli {

std::string sha256_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot open '" + path.string() + "'");
  std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx(EVP_MD_CTX_new(), EVP_MD_CTX_free);
  if (!ctx || EVP_DigestInit_ex(ctx.get(), EVP_sha256(), nullptr) != 1)
    throw std::runtime_error("sha256 unavailable");
  char buf[1 << 14];
  while (in) {
    in.read(buf, sizeof buf);
    if (in.gcount() > 0) EVP_DigestUpdate(ctx.get(), buf, static_cast<std::size_t>(in.gcount()));
  }
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_DigestFinal_ex(ctx.get(), md, &len);
  std::string hex;
  for (unsigned i = 0; i < len; ++i) hex += fmt::format("{:02x}", md[i]);
  return hex;
}

InputFile digest(const std::string& path) { return {path, sha256_file(path)}; }

std::optional<std::string> build_timestamp() {
  const char* env = std::getenv("SOURCE_DATE_EPOCH");
  if (!env || !*env) return std::nullopt;
  long long secs = 0;
  auto [p, ec] = std::from_chars(env, env + std::char_traits<char>::length(env), secs);
  if (ec != std::errc() || *p != '\0') throw ValidationError("SOURCE_DATE_EPOCH is not an integer");
  std::time_t t = static_cast<std::time_t>(secs);
  std::tm tm{};
  gmtime_r(&t, &tm);
  char out[32];
  std::strftime(out, sizeof out, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return std::string(out);
}

json report_header(const std::string& command, std::optional<std::uint64_t> seed,
                   const std::vector<InputFile>& inputs) {
  json j;
  j["command"] = command;
  j["version"] = TRUNCOUNT_VERSION;
  j["seed"] = seed ? json(*seed) : json(nullptr);
  auto ts = build_timestamp();
  j["timestamp"] = ts ? json(*ts) : json(nullptr);
  j["inputs"] = json::array();
  for (const auto& f : inputs) j["inputs"].push_back({{"path", f.path}, {"sha256", f.sha256}});
  return j;
}

json number(double x) { return std::isfinite(x) ? json(x) : json(nullptr); }

double round_half_up(double x) { return std::floor(x + 0.5); }

std::string show_int(double x) {
  if (!std::isfinite(x)) return "nan";
  return fmt::format("{:.0f}", round_half_up(x));
}

std::string show_1dp(double x) {
  if (!std::isfinite(x)) return "nan";
  return fmt::format("{:.1f}", round_half_up(x * 10.0) / 10.0);
}

std::string exact(double x) {
  if (!std::isfinite(x)) return "";
  return fmt::format("{}", x);
}

std::string percent_label(double proportion) { return fmt::format("{:.1f}%", proportion * 100.0); }

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ValidationError("cannot write '" + path.string() + "'");
  out << text;
  if (!out) throw ValidationError("error writing '" + path.string() + "'");
}

void write_replicates(std::ostream& out, const std::vector<SweepColumn>& columns) {
  out << kReplicateHeader << '\n';
  for (const auto& col : columns) {
    if (!col.result) continue;
    for (const auto& r : col.result->replicates) {
      for (const auto& o : r.outcomes) {
        out << r.replicate << ',' << short_name(o.estimator) << ',';
        if (o.ok)
          out << exact(o.n_hat) << ',' << exact(o.variance) << ',' << exact(o.ci_lower) << ','
              << exact(o.ci_upper) << ",1,";
        else
          out << ",,,,0,";
        out << r.n_observed << ',' << exact(col.proportion) << ',' << col.result->config.n_total << '\n';
      }
    }
  }
}

namespace {

struct Measure {
  const char* name;
  double (*get)(const EstimatorPerformance&);
};

constexpr Measure kMeasures[] = {
    {"accuracy", [](const EstimatorPerformance& p) { return p.accuracy; }},
    {"precision", [](const EstimatorPerformance& p) { return p.precision; }},
    {"coverage", [](const EstimatorPerformance& p) { return p.coverage; }},
    {"failures", [](const EstimatorPerformance& p) { return static_cast<double>(p.failures); }},
};

}  // namespace

void write_performance_csv(std::ostream& out, const std::vector<SweepColumn>& columns) {
  out << "measure,estimator";
  for (const auto& c : columns) out << ',' << exact(c.proportion);
  out << '\n';
  for (const auto& m : kMeasures) {
    for (std::size_t k = 0; k < kStudyEstimators.size(); ++k) {
      out << m.name << ',' << short_name(kStudyEstimators[k]);
      for (const auto& c : columns) {
        out << ',';
        if (c.result) out << exact(m.get(c.result->report.estimators[k]));
        else out << '-';
      }
      out << '\n';
    }
  }
}

json performance_json(const std::vector<SweepColumn>& columns) {
  json cols = json::array();
  for (const auto& c : columns) {
    json col;
    col["outlier_proportion"] = c.proportion;
    col["skipped"] = !c.result.has_value();
    if (!c.result) {
      col["notice"] = c.notice;
      cols.push_back(col);
      continue;
    }
    const auto& rep = c.result->report;
    col["n_total"] = rep.n_total;
    col["n_outliers"] = c.result->config.n_outliers();
    col["replicates"] = rep.replicates;
    col["estimators"] = json::array();
    for (const auto& p : rep.estimators) {
      col["estimators"].push_back({{"estimator", std::string(to_string(p.estimator))},
                                   {"accuracy", number(p.accuracy)},
                                   {"precision", number(p.precision)},
                                   {"coverage", number(p.coverage)},
                                   {"used", p.used},
                                   {"failures", p.failures},
                                   {"unreliable", p.unreliable}});
    }
    cols.push_back(col);
  }
  return cols;
}

std::string performance_table(const std::vector<SweepColumn>& columns) {
  std::string s = fmt::format("{:<10} {:<22}", "measure", "estimator");
  for (const auto& c : columns) s += fmt::format(" {:>10}", percent_label(c.proportion));
  s += '\n';
  for (const auto& m : kMeasures) {
    for (std::size_t k = 0; k < kStudyEstimators.size(); ++k) {
      s += fmt::format("{:<10} {:<22}", m.name, to_string(kStudyEstimators[k]));
      for (const auto& c : columns) {
        std::string cell = "-";
        if (c.result) {
          const auto& p = c.result->report.estimators[k];
          double v = m.get(p);
          cell = std::string(m.name) == "coverage" ? show_1dp(v) + "%" : show_int(v);
          if (p.unreliable && std::string(m.name) != "failures") cell += "!";
        }
        s += fmt::format(" {:>10}", cell);
      }
      s += '\n';
    }
  }
  return s;
}

namespace {

std::vector<std::string> split(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : line) {
    if (ch == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (ch != '\r') {
      cur += ch;
    }
  }
  out.push_back(cur);
  return out;
}

template <typename T>
T parse_field(const std::string& s, std::size_t row, const char* column) {
  T v{};
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size())
    throw ValidationError(fmt::format("replicates row {}: bad {} '{}'", row, column, s));
  return v;
}

}  // namespace

std::vector<ReplicateRow> read_replicates(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw ValidationError("replicates file is empty");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != kReplicateHeader)
    throw ValidationError(std::string("replicates header must be '") + kReplicateHeader + "'");
  std::vector<ReplicateRow> rows;
  std::size_t row = 1;
  while (std::getline(in, line)) {
    ++row;
    if (line.empty() || line == "\r") continue;
    auto f = split(line);
    if (f.size() != 10) throw ValidationError(fmt::format("replicates row {}: expected 10 fields", row));
    ReplicateRow r;
    r.replicate = parse_field<int>(f[0], row, "replicate");
    r.estimator = parse_estimator(f[1]);
    r.converged = f[6] == "1";
    if (!r.converged && f[6] != "0")
      throw ValidationError(fmt::format("replicates row {}: converged must be 0 or 1", row));
    if (r.converged) {
      r.n_hat = parse_field<double>(f[2], row, "n_hat");
      r.ci_lower = parse_field<double>(f[4], row, "ci_lower");
      r.ci_upper = parse_field<double>(f[5], row, "ci_upper");
    }
    r.outlier_proportion = parse_field<double>(f[8], row, "outlier_proportion");
    r.n_total = parse_field<int>(f[9], row, "n_total");
    rows.push_back(r);
  }
  if (rows.empty()) throw ValidationError("replicates file has no data rows");
  return rows;
}

}  // namespace truncount::cli
