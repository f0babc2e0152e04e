#include "patchrl/svg_plot.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <stdexcept>

namespace patchrl::plot {

namespace {

const char* kPalette[] = {"#4878cf", "#ee854a", "#6acc65", "#d65f5f",
                          "#956cb4", "#8c613c", "#dc7ec0", "#797979"};

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.4f", v);
  return buf;
}

std::ofstream open_svg(const std::string& path, int width, int height) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot write " + path);
  f << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\""
    << height << "\" viewBox=\"0 0 " << width << " " << height << "\">\n";
  f << "<rect width=\"" << width << "\" height=\"" << height << "\" fill=\"white\"/>\n";
  return f;
}

void text(std::ofstream& f, double x, double y, const std::string& s, int size = 12,
          const char* anchor = "middle") {
  f << "<text x=\"" << fmt(x) << "\" y=\"" << fmt(y) << "\" font-size=\"" << size
    << "\" font-family=\"sans-serif\" text-anchor=\"" << anchor << "\">" << s
    << "</text>\n";
}

}  // namespace

void bar_chart_svg(const std::string& path, const std::string& title,
                   const std::vector<std::string>& labels,
                   const std::vector<double>& values) {
  const int width = 640, height = 400;
  const double left = 60, right = 20, top = 50, bottom = 70;
  auto f = open_svg(path, width, height);
  text(f, width / 2.0, 28, title, 16);

  const double plot_w = width - left - right;
  const double plot_h = height - top - bottom;
  const std::size_t n = labels.size();
  for (int tick = 0; tick <= 4; ++tick) {
    const double v = tick * 0.25;
    const double y = top + plot_h * (1.0 - v);
    f << "<line x1=\"" << fmt(left) << "\" y1=\"" << fmt(y) << "\" x2=\""
      << fmt(left + plot_w) << "\" y2=\"" << fmt(y)
      << "\" stroke=\"#dddddd\" stroke-width=\"1\"/>\n";
    text(f, left - 8, y + 4, fmt(v * 100.0).substr(0, 5) + "%", 10, "end");
  }
  for (std::size_t i = 0; i < n; ++i) {
    const double slot = plot_w / static_cast<double>(n);
    const double bw = slot * 0.6;
    const double x = left + slot * static_cast<double>(i) + (slot - bw) / 2.0;
    const double h = plot_h * std::clamp(values[i], 0.0, 1.0);
    f << "<rect x=\"" << fmt(x) << "\" y=\"" << fmt(top + plot_h - h) << "\" width=\""
      << fmt(bw) << "\" height=\"" << fmt(h) << "\" fill=\""
      << kPalette[i % 8] << "\"/>\n";
    text(f, x + bw / 2.0, top + plot_h - h - 6, fmt(values[i] * 100.0).substr(0, 5) + "%", 11);
    text(f, x + bw / 2.0, top + plot_h + 18, labels[i], 11);
  }
  f << "</svg>\n";
}

void histogram_svg(const std::string& path, const std::string& title,
                   const std::vector<std::string>& series_names,
                   const std::vector<std::vector<double>>& series_values, int bins) {
  const int width = 640;
  const int lane_h = 70;
  const double left = 110, right = 20, top = 50;
  const int height = static_cast<int>(top) + lane_h * static_cast<int>(series_names.size()) + 40;
  auto f = open_svg(path, width, height);
  text(f, width / 2.0, 28, title, 16);

  double vmax = 1.0;
  for (const auto& vs : series_values)
    for (double v : vs) vmax = std::max(vmax, v);
  const double plot_w = width - left - right;

  for (std::size_t s = 0; s < series_names.size(); ++s) {
    const double lane_top = top + lane_h * static_cast<double>(s);
    text(f, left - 10, lane_top + lane_h / 2.0, series_names[s], 11, "end");
    std::vector<int> counts(static_cast<std::size_t>(bins), 0);
    int cmax = 1;
    for (double v : series_values[s]) {
      int b = static_cast<int>(std::floor(v / vmax * bins));
      b = std::clamp(b, 0, bins - 1);
      cmax = std::max(cmax, ++counts[static_cast<std::size_t>(b)]);
    }
    for (int b = 0; b < bins; ++b) {
      const double bh = (lane_h - 18.0) * counts[static_cast<std::size_t>(b)] / cmax;
      const double bw = plot_w / bins;
      f << "<rect x=\"" << fmt(left + bw * b) << "\" y=\""
        << fmt(lane_top + (lane_h - 10.0) - bh) << "\" width=\"" << fmt(bw * 0.9)
        << "\" height=\"" << fmt(bh) << "\" fill=\"" << kPalette[s % 8] << "\"/>\n";
    }
    f << "<line x1=\"" << fmt(left) << "\" y1=\"" << fmt(lane_top + lane_h - 10.0)
      << "\" x2=\"" << fmt(left + plot_w) << "\" y2=\"" << fmt(lane_top + lane_h - 10.0)
      << "\" stroke=\"#888888\" stroke-width=\"1\"/>\n";
  }
  for (int tick = 0; tick <= 4; ++tick) {
    const double v = vmax * tick / 4.0;
    text(f, left + plot_w * tick / 4.0, height - 12, fmt(v).substr(0, 6), 10);
  }
  f << "</svg>\n";
}

}  // namespace patchrl::plot
