#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace truncount {

/// One study: observed event count, person-years of exposure and the two
/// covariates (proportion of women, reference-country flag).
struct StudyRecord {
  std::string id;
  int count = 0;
  double exposure = 1.0;
  std::optional<double> prop_women;
  bool origin_flag = false;

  bool operator==(const StudyRecord&) const = default;
};

/// Throws ValidationError if the record breaks a field invariant.
void validate(const StudyRecord& r);

/// Ordered, immutable collection of studies. When `truncated()` is true no
/// record has a zero count and the record count is the observed n.
class Dataset {
 public:
  Dataset() = default;
  explicit Dataset(std::vector<StudyRecord> records, bool truncated = true);

  const std::vector<StudyRecord>& records() const { return records_; }
  bool truncated() const { return truncated_; }
  std::size_t size() const { return records_.size(); }
  bool empty() const { return records_.empty(); }
  const StudyRecord& operator[](std::size_t i) const { return records_[i]; }

  std::vector<int> counts() const;
  std::vector<double> exposures() const;
  bool has_missing_covariates() const;
  long long total_count() const;

  bool operator==(const Dataset&) const = default;

 private:
  std::vector<StudyRecord> records_;
  bool truncated_ = true;
};

/// Census of count values: f_y for every observed y.
class FrequencyTable {
 public:
  FrequencyTable() = default;
  explicit FrequencyTable(std::span<const int> counts);

  /// f_y; zero for unobserved values.
  long long operator[](int y) const;
  long long total() const { return total_; }
  const std::map<int, long long>& entries() const { return freq_; }

 private:
  std::map<int, long long> freq_;
  long long total_ = 0;
};

/// Bounds of the outlier-rate band: lower = Q3 + 3 IQR, upper = 1.2 lower.
struct OutlierBounds {
  double lower = 0.0;
  double upper = 0.0;
};

inline constexpr const char* kCsvHeader = "id,count,exposure,prop_women,origin_flag";

/// Reads the `id,count,exposure,prop_women,origin_flag` schema. Lines
/// starting with '#' before the header are comments. `truncated` marks the
/// data as structurally zero-truncated; it only sticks when no zero count is
/// present.
Dataset load_csv(const std::filesystem::path& path, bool truncated = true);
Dataset parse_csv(std::istream& in, bool truncated = true);

void write_csv(std::ostream& out, const Dataset& d);
void write_csv(const std::filesystem::path& path, const Dataset& d);

FrequencyTable frequency_table(const Dataset& d);

/// Drops zero-count records, keeping the survivors in order.
Dataset zero_truncate(const Dataset& d);

/// Records with count 1 or 2, in order (the sample for the binomial fit).
Dataset ones_and_twos(const Dataset& d);

/// Fills absent prop_women values from an OLS model of prop_women on
/// exposure, origin_flag and their interaction, reduced by backward stepwise
/// BIC. Interaction is removed before main effects. Predictions are clamped
/// to [0, 1]. Returns the input unchanged when nothing is missing.
Dataset impute_missing_proportion(const Dataset& d);

/// Type-7 (linear interpolation) sample quantile, p in [0, 1].
double quantile_type7(std::vector<double> values, double p);

OutlierBounds outlier_bounds(const Dataset& d);

/// Appends records after the existing ones. Throws on duplicate ids.
Dataset append_outlier_records(const Dataset& d, std::span<const StudyRecord> outliers);

}  // namespace truncount
