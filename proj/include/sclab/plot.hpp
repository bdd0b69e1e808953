#pragma once

// SVG line charts of results tables: log10 gap against depth/iteration, one
// series per model (median over seeds).

#include "sclab/experiment.hpp"

#include <cmath>
#include <iomanip>

namespace sclab {

struct Series {
  std::string name;
  std::vector<std::pair<double, double>> points;  // (x, y > 0)
};

/// Medians over seeds per (model, depth); nonpositive gaps cannot be drawn
/// on a log axis and are dropped with a warning.
inline std::vector<Series> series_from_table(const ResultTable& t, std::ostream* warn = nullptr) {
  std::vector<std::string> models;
  std::map<std::string, std::map<int, std::vector<double>>> acc;
  for (const auto& r : t.rows) {
    if (acc.find(r.model) == acc.end()) models.push_back(r.model);
    acc[r.model][r.depth_or_iter].push_back(r.f_gap_median);
  }
  std::vector<Series> out;
  for (const auto& name : models) {
    Series s{name, {}};
    int dropped = 0;
    for (auto& [depth, values] : acc[name]) {
      const double y = quantile(values, 0.5);
      if (y > 0.0 && std::isfinite(y)) {
        s.points.emplace_back(depth, y);
      } else {
        ++dropped;
      }
    }
    if (dropped && warn) *warn << "warning: " << name << ": " << dropped << " nonpositive points not drawn\n";
    if (s.points.empty()) {
      if (warn) *warn << "warning: series " << name << " is empty, skipped\n";
      continue;
    }
    out.push_back(std::move(s));
  }
  return out;
}

inline std::string render_svg(const std::string& title, const std::vector<Series>& series) {
  constexpr double W = 720, H = 480, left = 80, right = 170, top = 40, bottom = 60;
  const double pw = W - left - right, ph = H - top - bottom;
  double xmin = 0, xmax = 1, ymin = 0, ymax = 1;
  bool any = false;
  for (const auto& s : series) {
    for (const auto& [x, y] : s.points) {
      const double ly = std::log10(y);
      if (!any) {
        xmin = xmax = x;
        ymin = ymax = ly;
        any = true;
      }
      xmin = std::min(xmin, x);
      xmax = std::max(xmax, x);
      ymin = std::min(ymin, ly);
      ymax = std::max(ymax, ly);
    }
  }
  ymin = std::floor(ymin);
  ymax = std::ceil(ymax);
  if (ymax <= ymin) ymax = ymin + 1;
  if (xmax <= xmin) xmax = xmin + 1;
  auto X = [&](double x) { return left + (x - xmin) / (xmax - xmin) * pw; };
  auto Y = [&](double ly) { return top + (ymax - ly) / (ymax - ymin) * ph; };

  static const char* colors[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f"};
  std::ostringstream os;
  os << std::fixed << std::setprecision(2);
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  os << "<text x=\"" << left << "\" y=\"24\" font-size=\"14\">" << title << "</text>\n";
  os << "<rect x=\"" << left << "\" y=\"" << top << "\" width=\"" << pw << "\" height=\"" << ph << "\" fill=\"none\" stroke=\"black\"/>\n";
  for (int e = static_cast<int>(ymin); e <= static_cast<int>(ymax); ++e) {
    os << "<line x1=\"" << left << "\" x2=\"" << left + pw << "\" y1=\"" << Y(e) << "\" y2=\"" << Y(e)
       << "\" stroke=\"#ddd\"/>\n";
    os << "<text x=\"" << left - 8 << "\" y=\"" << Y(e) + 4 << "\" text-anchor=\"end\">1e" << e << "</text>\n";
  }
  const int xticks = static_cast<int>(std::min(10.0, xmax - xmin));
  for (int i = 0; i <= xticks; ++i) {
    const double x = xmin + (xmax - xmin) * i / std::max(1, xticks);
    os << "<text x=\"" << X(x) << "\" y=\"" << top + ph + 18 << "\" text-anchor=\"middle\">" << std::setprecision(0) << x
       << std::setprecision(2) << "</text>\n";
  }
  os << "<text x=\"" << left + pw / 2 << "\" y=\"" << H - 16 << "\" text-anchor=\"middle\">layers / iterations</text>\n";
  os << "<text x=\"18\" y=\"" << top + ph / 2 << "\" transform=\"rotate(-90 18 " << top + ph / 2
     << ")\" text-anchor=\"middle\">F(z) - F(z*)</text>\n";
  for (std::size_t i = 0; i < series.size(); ++i) {
    const auto& s = series[i];
    const char* c = colors[i % 8];
    os << "<polyline fill=\"none\" stroke=\"" << c << "\" stroke-width=\"2\" points=\"";
    for (std::size_t j = 0; j < s.points.size(); ++j)
      os << (j ? " " : "") << X(s.points[j].first) << ',' << Y(std::log10(s.points[j].second));
    os << "\"/>\n";
    for (const auto& [x, y] : s.points)
      os << "<circle cx=\"" << X(x) << "\" cy=\"" << Y(std::log10(y)) << "\" r=\"3\" fill=\"" << c << "\"/>\n";
    const double ly = top + 16 + 18 * static_cast<double>(i);
    os << "<line x1=\"" << left + pw + 12 << "\" x2=\"" << left + pw + 36 << "\" y1=\"" << ly << "\" y2=\"" << ly
       << "\" stroke=\"" << c << "\" stroke-width=\"2\"/>\n";
    os << "<text x=\"" << left + pw + 42 << "\" y=\"" << ly + 4 << "\">" << s.name << "</text>\n";
  }
  os << "</svg>\n";
  return os.str();
}

/// One chart per experiment id found in the table.
inline void emit_plots(const ResultTable& t, const fs::path& out_dir, std::ostream* warn = &std::cerr) {
  detail::require(!t.rows.empty(), "emit_plots: empty table");
  atomic_write(out_dir / (t.experiment_id + ".svg"), render_svg(t.experiment_id, series_from_table(t, warn)));
}

}  // namespace sclab
