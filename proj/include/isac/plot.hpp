#ifndef ISAC_PLOT_HPP
#define ISAC_PLOT_HPP

#include "isac/harness.hpp"

#include <string>
#include <vector>

namespace isac {

/// One learning curve: smoothed mean with a +-std band, x in env steps.
struct PlotSeries {
  std::string label;
  std::vector<double> steps;
  std::vector<double> mean;
  std::vector<double> lower;
  std::vector<double> upper;
};

/// Mean and std across seeds per unit, each smoothed with `window`; the band
/// is smoothed mean -+ smoothed std.
PlotSeries make_series(const std::string &label, const SummaryStats &stats,
                       int window);

/// Self-contained SVG document with one curve and band per series.
std::string render_svg(const std::vector<PlotSeries> &series,
                       const std::string &title);

} // namespace isac

#endif
