#ifndef PATCHRL_SVG_PLOT_HPP
#define PATCHRL_SVG_PLOT_HPP

#include <string>
#include <vector>

namespace patchrl::plot {

/// Vertical bar chart with one bar per label; values in [0,1] are shown as
/// percentages.
void bar_chart_svg(const std::string& path, const std::string& title,
                   const std::vector<std::string>& labels,
                   const std::vector<double>& values);

/// Per-series histogram lanes (one lane per method) over a shared x axis.
void histogram_svg(const std::string& path, const std::string& title,
                   const std::vector<std::string>& series_names,
                   const std::vector<std::vector<double>>& series_values, int bins);

}  // namespace patchrl::plot

#endif  // PATCHRL_SVG_PLOT_HPP
