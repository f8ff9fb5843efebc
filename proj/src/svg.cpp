#include "gpldlab/svg.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>

#include "gpldlab/error.hpp"

namespace gpldlab::runner {

namespace {

const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e",
                          "#8c564b", "#17becf", "#7f7f7f", "#bcbd22", "#e377c2"};

std::string num(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

}  // namespace

std::string render_svg(const std::vector<AggregateRow>& rows, const PlotOptions& opt) {
  if (rows.empty()) throw ConfigError("plot", "empty input");

  // group -> ordered points
  std::map<std::string, std::vector<const AggregateRow*>> groups;
  for (const AggregateRow& r : rows) groups[r.run_id + " " + r.metric].push_back(&r);
  for (auto& [key, pts] : groups) {
    (void)key;
    std::sort(pts.begin(), pts.end(),
              [](const AggregateRow* a, const AggregateRow* b) { return a->step < b->step; });
  }

  double xmin = 1e300, xmax = -1e300, ymin = 1e300, ymax = -1e300;
  for (const AggregateRow& r : rows) {
    xmin = std::min(xmin, static_cast<double>(r.step));
    xmax = std::max(xmax, static_cast<double>(r.step));
    ymin = std::min(ymin, r.mean - r.stddev);
    ymax = std::max(ymax, r.mean + r.stddev);
  }
  if (xmax == xmin) {
    xmin -= 1.0;
    xmax += 1.0;
  }
  if (ymax == ymin) {
    ymin -= 1.0;
    ymax += 1.0;
  }
  const double ypad = 0.05 * (ymax - ymin);
  ymin -= ypad;
  ymax += ypad;

  const double ml = 70, mr = 20, mt = 34, mb = 48;
  const double pw = opt.width - ml - mr, ph = opt.height - mt - mb;
  auto px = [&](double x) { return ml + (x - xmin) / (xmax - xmin) * pw; };
  auto py = [&](double y) { return mt + (ymax - y) / (ymax - ymin) * ph; };

  std::string svg;
  svg += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + std::to_string(opt.width) +
         "\" height=\"" + std::to_string(opt.height) + "\" viewBox=\"0 0 " +
         std::to_string(opt.width) + " " + std::to_string(opt.height) + "\">\n";
  svg += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  if (!opt.title.empty())
    svg += "<text x=\"" + num(ml) + "\" y=\"20\" font-family=\"sans-serif\" font-size=\"14\">" +
           opt.title + "</text>\n";

  // axes and ticks
  svg += "<g stroke=\"#333\" stroke-width=\"1\">\n";
  svg += "<line x1=\"" + num(ml) + "\" y1=\"" + num(mt + ph) + "\" x2=\"" + num(ml + pw) +
         "\" y2=\"" + num(mt + ph) + "\"/>\n";
  svg += "<line x1=\"" + num(ml) + "\" y1=\"" + num(mt) + "\" x2=\"" + num(ml) + "\" y2=\"" +
         num(mt + ph) + "\"/>\n";
  svg += "</g>\n";
  for (int i = 0; i <= 4; ++i) {
    double xv = xmin + (xmax - xmin) * i / 4.0;
    double yv = ymin + (ymax - ymin) * i / 4.0;
    svg += "<text x=\"" + num(px(xv)) + "\" y=\"" + num(mt + ph + 18) +
           "\" font-family=\"sans-serif\" font-size=\"11\" text-anchor=\"middle\">" + num(xv) +
           "</text>\n";
    svg += "<text x=\"" + num(ml - 6) + "\" y=\"" + num(py(yv) + 4) +
           "\" font-family=\"sans-serif\" font-size=\"11\" text-anchor=\"end\">" + num(yv) +
           "</text>\n";
  }

  int color_idx = 0;
  double legend_y = mt + 6;
  for (const auto& [key, pts] : groups) {
    const char* color = kPalette[color_idx % 10];
    ++color_idx;

    // +-1 std band: forward along the upper edge, back along the lower.
    std::string band = "<path class=\"band\" fill=\"" + std::string(color) +
                       "\" fill-opacity=\"0.15\" stroke=\"none\" d=\"M";
    for (const AggregateRow* r : pts)
      band += " " + num(px(static_cast<double>(r->step))) + "," + num(py(r->mean + r->stddev));
    for (auto it = pts.rbegin(); it != pts.rend(); ++it)
      band += " " + num(px(static_cast<double>((*it)->step))) + "," + num(py((*it)->mean - (*it)->stddev));
    band += " Z\"/>\n";
    svg += band;

    std::string line = "<polyline class=\"mean\" fill=\"none\" stroke=\"" + std::string(color) +
                       "\" stroke-width=\"1.8\" points=\"";
    for (const AggregateRow* r : pts)
      line += num(px(static_cast<double>(r->step))) + "," + num(py(r->mean)) + " ";
    line += "\"/>\n";
    svg += line;

    svg += "<text x=\"" + num(ml + pw - 4) + "\" y=\"" + num(legend_y) +
           "\" font-family=\"sans-serif\" font-size=\"11\" text-anchor=\"end\" fill=\"" + color +
           "\">" + key + "</text>\n";
    legend_y += 14;
  }
  svg += "</svg>\n";
  return svg;
}

void plot_csv(const std::string& csv_path, const std::string& svg_path, const PlotOptions& opt) {
  std::vector<AggregateRow> rows;
  if (is_aggregate_csv(csv_path)) {
    rows = read_aggregate_csv(csv_path);
  } else {
    AggregateOptions aopt;  // raw across seeds
    rows = aggregate(read_metrics_csv(csv_path), aopt);
  }
  std::string svg = render_svg(rows, opt);
  std::ofstream out(svg_path);
  if (!out) throw IoError("cannot open svg for writing: " + svg_path);
  out << svg;
  if (!out) throw IoError("failed writing svg: " + svg_path);
}

}  // namespace gpldlab::runner
