#include "plot.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <map>

#include "truncount/dataset.hpp"
#include "truncount/error.hpp"

namespace truncount::cli {

BoxStats box_stats(std::vector<double> values) {
  if (values.empty()) throw ValidationError("cannot draw a box with no values");
  std::sort(values.begin(), values.end());
  BoxStats b;
  b.n = values.size();
  b.q1 = quantile_type7(values, 0.25);
  b.median = median(values);
  b.q3 = quantile_type7(values, 0.75);
  double fence = 1.5 * (b.q3 - b.q1);
  double lo = b.q1 - fence, hi = b.q3 + fence;
  b.whisker_low = b.q1;
  b.whisker_high = b.q3;
  for (double v : values) {
    if (v < lo || v > hi) {
      b.outliers.push_back(v);
      continue;
    }
    b.whisker_low = std::min(b.whisker_low, v);
    b.whisker_high = std::max(b.whisker_high, v);
  }
  return b;
}

namespace {

constexpr int kLeft = 90, kRight = 20, kTop = 50, kBottom = 60;

const char* colour(Estimator e) {
  switch (e) {
    case Estimator::HorvitzThompson: return "#4c72b0";
    case Estimator::GeneralisedChao: return "#dd8452";
    case Estimator::GeneralisedZelterman: return "#55a868";
    default: return "#8c8c8c";
  }
}

std::string esc(const std::string& s) {
  std::string out;
  for (char c : s) {
    if (c == '<') out += "&lt;";
    else if (c == '>') out += "&gt;";
    else if (c == '&') out += "&amp;";
    else if (c == '"') out += "&quot;";
    else out += c;
  }
  return out;
}

std::string num(double x) { return fmt::format("{}", x); }
std::string px(double x) { return fmt::format("{:.2f}", x); }

void render_panel(std::string& s, const Panel& p, int x0) {
  double lo = INFINITY, hi = -INFINITY;
  for (const auto& b : p.boxes) {
    lo = std::min({lo, b.stats.whisker_low, b.stats.q1});
    hi = std::max({hi, b.stats.whisker_high, b.stats.q3});
    for (double o : b.stats.outliers) {
      lo = std::min(lo, o);
      hi = std::max(hi, o);
    }
  }
  if (p.reference) {
    lo = std::min(lo, *p.reference);
    hi = std::max(hi, *p.reference);
  }
  if (!std::isfinite(lo)) lo = 0.0, hi = 1.0;
  double pad = hi > lo ? 0.05 * (hi - lo) : std::max(1.0, std::abs(hi) * 0.05);
  lo -= pad;
  hi += pad;
  const double plot_w = kPanelWidth - kLeft - kRight;
  const double plot_h = kPanelHeight - kTop - kBottom;
  auto y = [&](double v) { return kTop + plot_h * (hi - v) / (hi - lo); };

  s += fmt::format("<g class=\"panel\" data-quantity=\"{}\" transform=\"translate({},0)\">\n", p.quantity, x0);
  s += fmt::format("<rect x=\"0\" y=\"0\" width=\"{}\" height=\"{}\" style=\"fill:#ffffff\"/>\n",
                   kPanelWidth, kPanelHeight);
  s += fmt::format("<text x=\"{}\" y=\"28\" style=\"font:16px sans-serif;text-anchor:middle\">{}</text>\n",
                   kPanelWidth / 2, esc(p.title));
  s += fmt::format("<line x1=\"{}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" style=\"stroke:#000\"/>\n", kLeft, kTop,
                   kLeft, kTop + plot_h);
  s += fmt::format("<line x1=\"{}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" style=\"stroke:#000\"/>\n", kLeft,
                   kTop + plot_h, kLeft + plot_w, kTop + plot_h);
  for (int t = 0; t <= 4; ++t) {
    double v = lo + (hi - lo) * t / 4.0;
    s += fmt::format("<text x=\"{}\" y=\"{}\" style=\"font:11px sans-serif;text-anchor:end\">{:.4g}</text>\n",
                     kLeft - 6, px(y(v) + 4), v);
  }
  if (p.reference) {
    s += fmt::format(
        "<line class=\"reference\" data-value=\"{}\" x1=\"{}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" "
        "style=\"stroke:#c00;stroke-dasharray:6,4\"/>\n",
        num(*p.reference), kLeft, px(y(*p.reference)), kLeft + plot_w, px(y(*p.reference)));
  }
  const double slot = plot_w / std::max<std::size_t>(1, p.boxes.size());
  for (std::size_t i = 0; i < p.boxes.size(); ++i) {
    const Box& b = p.boxes[i];
    const BoxStats& st = b.stats;
    double cx = kLeft + slot * (i + 0.5);
    double half = std::min(40.0, slot * 0.3);
    s += fmt::format(
        "<g class=\"box\" data-estimator=\"{}\" data-proportion=\"{}\" data-n=\"{}\" data-q1=\"{}\" "
        "data-median=\"{}\" data-q3=\"{}\" data-whisker-low=\"{}\" data-whisker-high=\"{}\" "
        "data-outliers=\"{}\">\n",
        short_name(b.estimator), num(b.proportion), st.n, num(st.q1), num(st.median), num(st.q3),
        num(st.whisker_low), num(st.whisker_high), st.outliers.size());
    s += fmt::format("<line x1=\"{0}\" y1=\"{1}\" x2=\"{0}\" y2=\"{2}\" style=\"stroke:#000\"/>\n", px(cx),
                     px(y(st.whisker_high)), px(y(st.q3)));
    s += fmt::format("<line x1=\"{0}\" y1=\"{1}\" x2=\"{0}\" y2=\"{2}\" style=\"stroke:#000\"/>\n", px(cx),
                     px(y(st.q1)), px(y(st.whisker_low)));
    for (double w : {st.whisker_low, st.whisker_high})
      s += fmt::format("<line x1=\"{0}\" y1=\"{2}\" x2=\"{1}\" y2=\"{2}\" style=\"stroke:#000\"/>\n",
                       px(cx - half / 2), px(cx + half / 2), px(y(w)));
    s += fmt::format(
        "<rect x=\"{}\" y=\"{}\" width=\"{}\" height=\"{}\" style=\"fill:{};fill-opacity:0.6;stroke:#000\"/>\n",
        px(cx - half), px(y(st.q3)), px(2 * half), px(y(st.q1) - y(st.q3)), colour(b.estimator));
    s += fmt::format("<line x1=\"{0}\" y1=\"{2}\" x2=\"{1}\" y2=\"{2}\" style=\"stroke:#000;stroke-width:2\"/>\n",
                     px(cx - half), px(cx + half), px(y(st.median)));
    for (double o : st.outliers)
      s += fmt::format("<circle cx=\"{}\" cy=\"{}\" r=\"2.5\" style=\"fill:none;stroke:#000\"/>\n", px(cx),
                       px(y(o)));
    s += fmt::format("<text x=\"{}\" y=\"{}\" style=\"font:12px sans-serif;text-anchor:middle\">{}</text>\n",
                     px(cx), kTop + plot_h + 20, esc(b.label));
    s += "</g>\n";
  }
  s += "</g>\n";
}

}  // namespace

std::string render_svg(const std::string& title, const std::vector<Panel>& panels) {
  int width = kPanelWidth * static_cast<int>(std::max<std::size_t>(1, panels.size()));
  std::string s = fmt::format(
      "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{0}\" height=\"{1}\" viewBox=\"0 0 {0} {1}\">\n",
      width, kPanelHeight);
  s += fmt::format("<title>{}</title>\n", esc(title));
  for (std::size_t i = 0; i < panels.size(); ++i) render_panel(s, panels[i], static_cast<int>(i) * kPanelWidth);
  s += "</svg>\n";
  return s;
}

namespace {

using Key = std::pair<double, int>;  // (proportion, estimator order)

int order(Estimator e) {
  for (std::size_t k = 0; k < kStudyEstimators.size(); ++k)
    if (kStudyEstimators[k] == e) return static_cast<int>(k);
  return static_cast<int>(kStudyEstimators.size()) + static_cast<int>(e);
}

Panel panel_for(double proportion, const std::map<Key, std::vector<const ReplicateRow*>>& groups,
                bool width, std::optional<double> reference, const std::string& title) {
  Panel p;
  p.title = title;
  p.quantity = width ? "ci_width" : "n_hat";
  p.reference = reference;
  for (const auto& [key, rows] : groups) {
    if (key.first != proportion) continue;
    std::vector<double> v;
    for (const auto* r : rows) v.push_back(width ? r->ci_upper - r->ci_lower : r->n_hat);
    if (v.empty()) continue;
    Box b;
    b.estimator = rows.front()->estimator;
    b.label = std::string(short_name(b.estimator));
    b.proportion = proportion;
    b.stats = box_stats(std::move(v));
    p.boxes.push_back(std::move(b));
  }
  return p;
}

}  // namespace

std::vector<std::filesystem::path> write_figures(const std::vector<ReplicateRow>& rows,
                                                 const std::filesystem::path& dir) {
  std::map<Key, std::vector<const ReplicateRow*>> groups;
  std::map<double, int> truth;
  for (const auto& r : rows) {
    auto& g = groups[{r.outlier_proportion, order(r.estimator)}];
    if (r.converged) g.push_back(&r);
    truth[r.outlier_proportion] = r.n_total;
  }
  std::vector<double> proportions;
  for (const auto& [p, n] : truth) proportions.push_back(p);
  if (proportions.empty()) throw ValidationError("replicates file has no data rows");
  bool any = false;
  for (const auto& [k, g] : groups) any = any || !g.empty();
  if (!any) throw ValidationError("replicates file has no converged estimates to plot");

  std::filesystem::create_directories(dir);
  std::vector<std::filesystem::path> out;
  auto emit = [&](const std::string& name, const std::string& title, const std::vector<Panel>& panels) {
    auto path = dir / name;
    write_text(path, render_svg(title, panels));
    out.push_back(path);
  };

  double first = proportions.front();
  emit("estimates_and_widths.svg",
       fmt::format("Estimates and interval widths, {} outliers, N = {}", percent_label(first), truth[first]),
       {panel_for(first, groups, false, truth[first], "Population size estimates"),
        panel_for(first, groups, true, std::nullopt, "Confidence interval width")});

  std::vector<Panel> est, wid;
  for (double p : proportions) {
    est.push_back(panel_for(p, groups, false, truth[p], percent_label(p) + " outliers"));
    wid.push_back(panel_for(p, groups, true, std::nullopt, percent_label(p) + " outliers"));
  }
  emit("estimates_by_proportion.svg", "Population size estimates by proportion of outliers", est);
  emit("widths_by_proportion.svg", "Confidence interval widths by proportion of outliers", wid);
  return out;
}

}  // namespace truncount::cli
