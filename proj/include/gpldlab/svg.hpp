#pragma once

#include <string>
#include <vector>

#include "gpldlab/metrics.hpp"

namespace gpldlab::runner {

struct PlotOptions {
  std::string title;
  int width = 860;
  int height = 520;
};

// Deterministic SVG: one polyline (class "mean") and one band path (class
// "band", +-1 std) per (run_id, metric) group. No timestamps or other
// run-varying content.
std::string render_svg(const std::vector<AggregateRow>& rows, const PlotOptions& opt);

// Reads a metrics or aggregate CSV (detected by header), aggregates raw
// metrics on the fly, and writes the SVG.
void plot_csv(const std::string& csv_path, const std::string& svg_path, const PlotOptions& opt);

}  // namespace gpldlab::runner
