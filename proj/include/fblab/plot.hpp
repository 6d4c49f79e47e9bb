#pragma once

#include <algorithm>
#include <cmath>
#include <sstream>
#include <string>
#include <vector>

#include "fblab/diagnostics.hpp"
#include "fblab/mesh.hpp"

namespace fblab::plot {

struct Series {
  std::vector<double> x, y;
  std::string label;
  std::string color = "#1f77b4";
  bool markers = false;
};

struct Panel {
  std::string title;
  std::string xlabel, ylabel;
  bool loglog = false;
  std::vector<Series> series;
};

namespace detail {

inline std::string num(double v) {
  std::ostringstream os;
  os.precision(6);
  os << v;
  return os.str();
}

inline std::string escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    if (c == '<') out += "&lt;";
    else if (c == '>') out += "&gt;";
    else if (c == '&') out += "&amp;";
    else out += c;
  }
  return out;
}

}  // namespace detail

/// Standalone SVG with the panels stacked vertically.
inline std::string render_svg(const std::vector<Panel>& panels) {
  using detail::num;
  const double W = 640, H = 360, ml = 70, mr = 20, mt = 36, mb = 48;
  std::ostringstream os;
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H * panels.size()
     << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  for (std::size_t k = 0; k < panels.size(); ++k) {
    const Panel& pn = panels[k];
    const double y0 = H * k;
    auto tx = [&](double v) { return pn.loglog ? std::log10(v) : v; };
    double xmin = INFINITY, xmax = -INFINITY, ymin = INFINITY, ymax = -INFINITY;
    for (const auto& s : pn.series)
      for (std::size_t i = 0; i < s.x.size(); ++i) {
        if (pn.loglog && !(s.x[i] > 0 && s.y[i] > 0)) continue;
        if (!std::isfinite(s.x[i]) || !std::isfinite(s.y[i])) continue;
        xmin = std::min(xmin, tx(s.x[i]));
        xmax = std::max(xmax, tx(s.x[i]));
        ymin = std::min(ymin, tx(s.y[i]));
        ymax = std::max(ymax, tx(s.y[i]));
      }
    if (!(xmin <= xmax)) xmin = 0, xmax = 1, ymin = 0, ymax = 1;
    if (xmax == xmin) xmax = xmin + 1;
    if (ymax == ymin) ymax = ymin + 1;
    const double pw = W - ml - mr, ph = H - mt - mb;
    auto px = [&](double v) { return ml + (tx(v) - xmin) / (xmax - xmin) * pw; };
    auto py = [&](double v) { return y0 + mt + (1 - (tx(v) - ymin) / (ymax - ymin)) * ph; };

    os << "<g>\n<text x=\"" << W / 2 << "\" y=\"" << y0 + 20 << "\" text-anchor=\"middle\">"
       << detail::escape(pn.title) << "</text>\n";
    os << "<rect x=\"" << ml << "\" y=\"" << y0 + mt << "\" width=\"" << pw << "\" height=\"" << ph
       << "\" fill=\"none\" stroke=\"#444\"/>\n";
    const std::string pre = pn.loglog ? "1e" : "";
    os << "<text x=\"" << ml << "\" y=\"" << y0 + H - 28 << "\">" << pre << num(xmin) << "</text>\n";
    os << "<text x=\"" << W - mr << "\" y=\"" << y0 + H - 28 << "\" text-anchor=\"end\">" << pre << num(xmax)
       << "</text>\n";
    os << "<text x=\"" << ml - 4 << "\" y=\"" << y0 + H - mb << "\" text-anchor=\"end\">" << pre << num(ymin)
       << "</text>\n";
    os << "<text x=\"" << ml - 4 << "\" y=\"" << y0 + mt + 10 << "\" text-anchor=\"end\">" << pre << num(ymax)
       << "</text>\n";
    os << "<text x=\"" << ml + pw / 2 << "\" y=\"" << y0 + H - 10 << "\" text-anchor=\"middle\">"
       << detail::escape(pn.xlabel) << "</text>\n";
    os << "<text x=\"14\" y=\"" << y0 + mt + ph / 2 << "\" transform=\"rotate(-90 14 " << y0 + mt + ph / 2
       << ")\" text-anchor=\"middle\">" << detail::escape(pn.ylabel) << "</text>\n";

    double ly = y0 + mt + 14;
    for (const auto& s : pn.series) {
      std::string pts;
      for (std::size_t i = 0; i < s.x.size(); ++i) {
        if (pn.loglog && !(s.x[i] > 0 && s.y[i] > 0)) continue;
        if (!std::isfinite(s.x[i]) || !std::isfinite(s.y[i])) continue;
        pts += num(px(s.x[i])) + "," + num(py(s.y[i])) + " ";
        if (s.markers)
          os << "<circle cx=\"" << num(px(s.x[i])) << "\" cy=\"" << num(py(s.y[i])) << "\" r=\"3\" fill=\""
             << s.color << "\"/>\n";
      }
      if (!s.markers)
        os << "<polyline fill=\"none\" stroke=\"" << s.color << "\" stroke-width=\"1.5\" points=\"" << pts
           << "\"/>\n";
      if (!s.label.empty()) {
        os << "<text x=\"" << ml + 10 << "\" y=\"" << ly << "\" fill=\"" << s.color << "\">"
           << detail::escape(s.label) << "</text>\n";
        ly += 14;
      }
    }
    os << "</g>\n";
  }
  os << "</svg>\n";
  return os.str();
}

/// u along the x axis; in 2-D, the row through the middle of the grid.
inline Panel profile_panel(const DiscreteFunction& u, const std::string& title) {
  const Grid& g = u.grid();
  Series s{{}, {}, "u", "#1f77b4", false};
  const int n = g.cells_per_axis();
  for (std::size_t k = 0; k < u.size(); ++k) {
    if (g.dim() == 2 && static_cast<int>(k / (n + 1)) != n / 2) continue;
    s.x.push_back(g.coords(k)[0]);
    s.y.push_back(u[k]);
  }
  return {title, "x", "u", false, {s}};
}

/// Data points and the fitted power law on log-log axes.
inline Panel fit_panel(const FitResult& f, const std::string& title, const std::string& ylabel) {
  Series data{f.radii, f.values, "data", "#d62728", true};
  Series line{{}, {}, "fit: exponent " + detail::num(f.exponent) + ", r2 " + detail::num(f.r_squared), "#2ca02c",
              false};
  if (!f.degenerate && std::isfinite(f.exponent))
    for (double r : f.radii) {
      line.x.push_back(r);
      line.y.push_back(f.constant * std::pow(r, f.exponent));
    }
  return {title, "r", ylabel, true, {data, line}};
}

}  // namespace fblab::plot
