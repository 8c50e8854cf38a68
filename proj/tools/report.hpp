#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "truncount/simulation.hpp"

namespace truncount::cli {

using json = nlohmann::ordered_json;

struct InputFile {
  std::string path;
  std::string sha256;
};

/// Hex SHA-256 of the file contents.
std::string sha256_file(const std::filesystem::path& path);
InputFile digest(const std::string& path);

/// ISO-8601 UTC time from SOURCE_DATE_EPOCH, or nullopt when it is unset.
/// Reports carry no wall-clock time otherwise, so reruns stay byte-identical.
std::optional<std::string> build_timestamp();

/// Report skeleton: command, version, seed, timestamp, inputs. The caller
/// fills "results".
json report_header(const std::string& command, std::optional<std::uint64_t> seed,
                   const std::vector<InputFile>& inputs);

/// NaN and infinities become null.
json number(double x);

double round_half_up(double x);
/// Display forms: integers for estimates and variances, one decimal for
/// coverage and likelihood values.
std::string show_int(double x);
std::string show_1dp(double x);
/// Shortest round-trip text of a double, used in CSV output.
std::string exact(double x);
std::string percent_label(double proportion);

void write_text(const std::filesystem::path& path, const std::string& text);

// -- simulation artifacts ---------------------------------------------------

inline constexpr const char* kReplicateHeader =
    "replicate,estimator,n_hat,variance,ci_lower,ci_upper,converged,n_observed,outlier_proportion,n_total";

void write_replicates(std::ostream& out, const std::vector<SweepColumn>& columns);

/// Rows are measure x estimator, columns are outlier proportions; a skipped
/// column holds "-".
void write_performance_csv(std::ostream& out, const std::vector<SweepColumn>& columns);
json performance_json(const std::vector<SweepColumn>& columns);
std::string performance_table(const std::vector<SweepColumn>& columns);

struct ReplicateRow {
  int replicate = 0;
  Estimator estimator = Estimator::HorvitzThompson;
  bool converged = false;
  double n_hat = 0.0;
  double ci_lower = 0.0;
  double ci_upper = 0.0;
  double outlier_proportion = 0.0;
  int n_total = 0;
};

/// Parses a replicates CSV written by write_replicates. Throws
/// ValidationError on a malformed file or one without data rows.
std::vector<ReplicateRow> read_replicates(std::istream& in);

}  // namespace truncount::cli
