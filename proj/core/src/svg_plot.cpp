#include "salab/svg_plot.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <sstream>
#include <stdexcept>

namespace salab {

namespace {

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.6g", v);
  return buf;
}

std::string escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      default: out += c;
    }
  }
  return out;
}

const char* kPalette[] = {"#1f6fb2", "#c2491d", "#3a8c3f", "#7b4fa6", "#937200", "#5a5a5a"};
constexpr int kPaletteSize = 6;

// Tick positions covering [lo, hi] at a round step (1, 2, or 5 times a power
// of ten).
std::vector<double> linear_ticks(double lo, double hi) {
  double span = hi - lo;
  double raw = span / 5.0;
  double mag = std::pow(10.0, std::floor(std::log10(raw)));
  double step = mag;
  if (raw / mag > 5.0) {
    step = 10.0 * mag;
  } else if (raw / mag > 2.0) {
    step = 5.0 * mag;
  } else if (raw / mag > 1.0) {
    step = 2.0 * mag;
  }
  std::vector<double> ticks;
  double t = std::ceil(lo / step) * step;
  for (; t <= hi + 0.5 * step; t += step) ticks.push_back(t == 0.0 ? 0.0 : t);
  return ticks;
}

// Integer decades inside [lo, hi] of log10 coordinates.
std::vector<double> decade_ticks(double lo, double hi) {
  std::vector<double> ticks;
  for (double d = std::ceil(lo - 1e-9); d <= hi + 1e-9; d += 1.0) ticks.push_back(d);
  if (ticks.size() < 2) return linear_ticks(lo, hi);
  return ticks;
}

std::string decade_label(double log_value) {
  double nearest = std::round(log_value);
  if (std::abs(log_value - nearest) < 1e-9) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "1e%d", static_cast<int>(nearest));
    return buf;
  }
  return fmt(std::pow(10.0, log_value));
}

}  // namespace

std::string render_svg(const PlotSpec& spec, const std::vector<PlotSeries>& series) {
  const double W = spec.width, H = spec.height;
  const double ml = 72, mr = 18, mt = spec.title.empty() ? 18 : 40, mb = 52;
  const double pw = W - ml - mr, ph = H - mt - mb;

  // Transform data, dropping points a log axis cannot represent.
  struct XY {
    std::vector<double> x, y;
  };
  std::vector<XY> pts(series.size());
  double xmin = std::numeric_limits<double>::infinity(), xmax = -xmin;
  double ymin = xmin, ymax = -xmin;
  for (size_t s = 0; s < series.size(); ++s) {
    size_t n = std::min(series[s].x.size(), series[s].y.size());
    for (size_t i = 0; i < n; ++i) {
      double x = series[s].x[i], y = series[s].y[i];
      if (!std::isfinite(x) || !std::isfinite(y)) continue;
      if (spec.log_x) {
        if (!(x > 0)) continue;
        x = std::log10(x);
      }
      if (spec.log_y) {
        if (!(y > 0)) continue;
        y = std::log10(y);
      }
      pts[s].x.push_back(x);
      pts[s].y.push_back(y);
      xmin = std::min(xmin, x);
      xmax = std::max(xmax, x);
      ymin = std::min(ymin, y);
      ymax = std::max(ymax, y);
    }
  }
  bool empty = !(xmin <= xmax);
  if (empty) {
    xmin = 0;
    xmax = 1;
    ymin = 0;
    ymax = 1;
  }
  if (xmax - xmin < 1e-12) {
    xmin -= 1;
    xmax += 1;
  }
  if (ymax - ymin < 1e-12) {
    ymin -= 1;
    ymax += 1;
  }
  double xpad = 0.05 * (xmax - xmin), ypad = 0.05 * (ymax - ymin);
  xmin -= xpad;
  xmax += xpad;
  ymin -= ypad;
  ymax += ypad;

  auto px = [&](double x) { return ml + (x - xmin) / (xmax - xmin) * pw; };
  auto py = [&](double y) { return mt + (1.0 - (y - ymin) / (ymax - ymin)) * ph; };

  std::ostringstream out;
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << spec.width << "\" height=\""
      << spec.height << "\" viewBox=\"0 0 " << spec.width << " " << spec.height << "\">\n";
  out << "<rect width=\"" << spec.width << "\" height=\"" << spec.height
      << "\" fill=\"#ffffff\"/>\n";

  auto xticks = spec.log_x ? decade_ticks(xmin, xmax) : linear_ticks(xmin, xmax);
  auto yticks = spec.log_y ? decade_ticks(ymin, ymax) : linear_ticks(ymin, ymax);
  out << "<g stroke=\"#dddddd\" stroke-width=\"1\">\n";
  for (double t : xticks)
    out << "<line x1=\"" << fmt(px(t)) << "\" y1=\"" << fmt(mt) << "\" x2=\"" << fmt(px(t))
        << "\" y2=\"" << fmt(mt + ph) << "\"/>\n";
  for (double t : yticks)
    out << "<line x1=\"" << fmt(ml) << "\" y1=\"" << fmt(py(t)) << "\" x2=\"" << fmt(ml + pw)
        << "\" y2=\"" << fmt(py(t)) << "\"/>\n";
  out << "</g>\n";
  out << "<rect x=\"" << fmt(ml) << "\" y=\"" << fmt(mt) << "\" width=\"" << fmt(pw)
      << "\" height=\"" << fmt(ph) << "\" fill=\"none\" stroke=\"#444444\"/>\n";

  out << "<g font-family=\"sans-serif\" font-size=\"11\" fill=\"#333333\">\n";
  for (double t : xticks) {
    std::string label = spec.log_x ? decade_label(t) : fmt(t);
    out << "<text x=\"" << fmt(px(t)) << "\" y=\"" << fmt(mt + ph + 16)
        << "\" text-anchor=\"middle\">" << escape(label) << "</text>\n";
  }
  for (double t : yticks) {
    std::string label = spec.log_y ? decade_label(t) : fmt(t);
    out << "<text x=\"" << fmt(ml - 6) << "\" y=\"" << fmt(py(t) + 4)
        << "\" text-anchor=\"end\">" << escape(label) << "</text>\n";
  }
  if (!spec.x_label.empty())
    out << "<text x=\"" << fmt(ml + pw / 2) << "\" y=\"" << fmt(H - 12)
        << "\" text-anchor=\"middle\" font-size=\"13\">" << escape(spec.x_label) << "</text>\n";
  if (!spec.y_label.empty())
    out << "<text x=\"16\" y=\"" << fmt(mt + ph / 2)
        << "\" text-anchor=\"middle\" font-size=\"13\" transform=\"rotate(-90 16 "
        << fmt(mt + ph / 2) << ")\">" << escape(spec.y_label) << "</text>\n";
  if (!spec.title.empty())
    out << "<text x=\"" << fmt(W / 2) << "\" y=\"24\" text-anchor=\"middle\" font-size=\"15\">"
        << escape(spec.title) << "</text>\n";
  out << "</g>\n";

  for (size_t s = 0; s < series.size(); ++s) {
    const char* color = kPalette[s % kPaletteSize];
    if (series[s].line && pts[s].x.size() > 1) {
      out << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.5\" points=\"";
      for (size_t i = 0; i < pts[s].x.size(); ++i) {
        if (i) out << ' ';
        out << fmt(px(pts[s].x[i])) << ',' << fmt(py(pts[s].y[i]));
      }
      out << "\"/>\n";
    }
    if (series[s].markers) {
      for (size_t i = 0; i < pts[s].x.size(); ++i) {
        out << "<circle cx=\"" << fmt(px(pts[s].x[i])) << "\" cy=\"" << fmt(py(pts[s].y[i]))
            << "\" r=\"2.5\" fill=\"" << color << "\"/>\n";
      }
    }
  }

  double ly = mt + 14;
  for (size_t s = 0; s < series.size(); ++s) {
    if (series[s].label.empty()) continue;
    const char* color = kPalette[s % kPaletteSize];
    out << "<line x1=\"" << fmt(ml + pw - 130) << "\" y1=\"" << fmt(ly - 4) << "\" x2=\""
        << fmt(ml + pw - 110) << "\" y2=\"" << fmt(ly - 4) << "\" stroke=\"" << color
        << "\" stroke-width=\"2\"/>\n";
    out << "<text x=\"" << fmt(ml + pw - 104) << "\" y=\"" << fmt(ly)
        << "\" font-family=\"sans-serif\" font-size=\"11\" fill=\"#333333\">"
        << escape(series[s].label) << "</text>\n";
    ly += 16;
  }

  if (empty) {
    out << "<text x=\"" << fmt(ml + pw / 2) << "\" y=\"" << fmt(mt + ph / 2)
        << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"13\" "
           "fill=\"#888888\">no data</text>\n";
  }
  out << "</svg>\n";
  return out.str();
}

void write_svg(const std::string& path, const PlotSpec& spec,
               const std::vector<PlotSeries>& series) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("write_svg: cannot open " + path);
  out << render_svg(spec, series);
}

}  // namespace salab
