#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "report.hpp"

namespace truncount::cli {

/// Tukey box: quartiles by linear interpolation, whiskers at the most
/// extreme points within 1.5 IQR of the box.
struct BoxStats {
  std::size_t n = 0;
  double q1 = 0.0;
  double median = 0.0;
  double q3 = 0.0;
  double whisker_low = 0.0;
  double whisker_high = 0.0;
  std::vector<double> outliers;
};

BoxStats box_stats(std::vector<double> values);

struct Box {
  std::string label;
  Estimator estimator = Estimator::HorvitzThompson;
  double proportion = 0.0;
  BoxStats stats;
};

struct Panel {
  std::string title;
  std::string quantity;  // "n_hat" or "ci_width"
  std::vector<Box> boxes;
  std::optional<double> reference;  // dashed horizontal line
};

inline constexpr int kPanelWidth = 800;
inline constexpr int kPanelHeight = 500;

/// Panels side by side in one self-contained SVG.
std::string render_svg(const std::string& title, const std::vector<Panel>& panels);

/// Writes the three figures (no-outlier estimates and widths, estimates by
/// outlier proportion, widths by outlier proportion). Returns the paths.
std::vector<std::filesystem::path> write_figures(const std::vector<ReplicateRow>& rows,
                                                 const std::filesystem::path& dir);

}  // namespace truncount::cli
