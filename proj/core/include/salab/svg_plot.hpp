#pragma once

#include <string>
#include <vector>

namespace salab {

// Minimal deterministic SVG plotting, enough for the diagnostic figures the
// pipeline emits (log-log scaling fits, coupling decay curves).  Output is a
// pure function of the inputs: fixed palette, fixed formatting, no clocks.

struct PlotSeries {
  std::string label;
  std::vector<double> x;
  std::vector<double> y;
  bool line = true;
  bool markers = true;
};

struct PlotSpec {
  std::string title;
  std::string x_label;
  std::string y_label;
  bool log_x = false;
  bool log_y = false;
  int width = 640;
  int height = 440;
};

std::string render_svg(const PlotSpec& spec, const std::vector<PlotSeries>& series);
void write_svg(const std::string& path, const PlotSpec& spec,
               const std::vector<PlotSeries>& series);

}  // namespace salab
