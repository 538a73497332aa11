#include "isac/plot.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <sstream>

namespace isac {

PlotSeries make_series(const std::string &label, const SummaryStats &stats,
                       int window) {
  PlotSeries s;
  s.label = label;
  s.mean = moving_average(stats.mean, window);
  const auto spread = moving_average(stats.std_dev, window);
  for (std::size_t i = 0; i < s.mean.size(); ++i) {
    s.steps.push_back(static_cast<double>(stats.env_steps[i]));
    s.lower.push_back(s.mean[i] - spread[i]);
    s.upper.push_back(s.mean[i] + spread[i]);
  }
  return s;
}

namespace {

constexpr const char *palette[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd",
                                   "#ff7f0e", "#8c564b", "#e377c2", "#17becf"};

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

std::string tick(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%g", v);
  return buf;
}

std::string escape(const std::string &s) {
  std::string out;
  for (char c : s) {
    switch (c) {
    case '<': out += "&lt;"; break;
    case '>': out += "&gt;"; break;
    case '&': out += "&amp;"; break;
    case '"': out += "&quot;"; break;
    default: out += c;
    }
  }
  return out;
}

} // namespace

std::string render_svg(const std::vector<PlotSeries> &series,
                       const std::string &title) {
  constexpr double width = 720, height = 440;
  constexpr double left = 70, right = 170, top = 40, bottom = 50;
  const double pw = width - left - right, ph = height - top - bottom;

  double xmin = std::numeric_limits<double>::infinity(), xmax = -xmin;
  double ymin = xmin, ymax = -xmin;
  for (const auto &s : series)
    for (std::size_t i = 0; i < s.steps.size(); ++i) {
      xmin = std::min(xmin, s.steps[i]);
      xmax = std::max(xmax, s.steps[i]);
      ymin = std::min(ymin, s.lower[i]);
      ymax = std::max(ymax, s.upper[i]);
    }
  if (!std::isfinite(xmin)) {
    xmin = 0, xmax = 1, ymin = 0, ymax = 1;
  }
  if (xmax == xmin)
    xmax = xmin + 1;
  if (ymax == ymin) {
    ymin -= 1;
    ymax += 1;
  }
  const double pad = 0.05 * (ymax - ymin);
  ymin -= pad;
  ymax += pad;

  auto X = [&](double x) { return left + (x - xmin) / (xmax - xmin) * pw; };
  auto Y = [&](double y) { return top + (ymax - y) / (ymax - ymin) * ph; };

  std::ostringstream svg;
  svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width
      << "\" height=\"" << height << "\" viewBox=\"0 0 " << width << ' '
      << height << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  svg << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  svg << "<text x=\"" << width / 2 << "\" y=\"22\" text-anchor=\"middle\" font-size=\"15\">"
      << escape(title) << "</text>\n";
  svg << "<rect x=\"" << left << "\" y=\"" << top << "\" width=\"" << pw
      << "\" height=\"" << ph << "\" fill=\"none\" stroke=\"#444\"/>\n";

  for (int i = 0; i <= 5; ++i) {
    const double xv = xmin + (xmax - xmin) * i / 5.0;
    const double yv = ymin + (ymax - ymin) * i / 5.0;
    svg << "<text x=\"" << num(X(xv)) << "\" y=\"" << num(top + ph + 18)
        << "\" text-anchor=\"middle\">" << tick(std::round(xv)) << "</text>\n";
    svg << "<text x=\"" << num(left - 6) << "\" y=\"" << num(Y(yv) + 4)
        << "\" text-anchor=\"end\">" << tick(std::round(yv * 100) / 100) << "</text>\n";
  }
  svg << "<text x=\"" << num(left + pw / 2) << "\" y=\"" << num(height - 10)
      << "\" text-anchor=\"middle\">environment steps</text>\n";
  svg << "<text transform=\"translate(16," << num(top + ph / 2)
      << ") rotate(-90)\" text-anchor=\"middle\">evaluation return</text>\n";

  for (std::size_t k = 0; k < series.size(); ++k) {
    const auto &s = series[k];
    const char *color = palette[k % std::size(palette)];
    if (s.steps.empty())
      continue;
    svg << "<g class=\"series\" data-label=\"" << escape(s.label) << "\">\n";
    svg << "<polygon fill=\"" << color << "\" fill-opacity=\"0.2\" stroke=\"none\" points=\"";
    for (std::size_t i = 0; i < s.steps.size(); ++i)
      svg << num(X(s.steps[i])) << ',' << num(Y(s.upper[i])) << ' ';
    for (std::size_t i = s.steps.size(); i-- > 0;)
      svg << num(X(s.steps[i])) << ',' << num(Y(s.lower[i])) << ' ';
    svg << "\"/>\n";
    svg << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"2\" points=\"";
    for (std::size_t i = 0; i < s.steps.size(); ++i)
      svg << num(X(s.steps[i])) << ',' << num(Y(s.mean[i])) << ' ';
    svg << "\"/>\n</g>\n";
    const double ly = top + 16 + 20.0 * static_cast<double>(k);
    svg << "<line x1=\"" << num(left + pw + 12) << "\" y1=\"" << num(ly)
        << "\" x2=\"" << num(left + pw + 36) << "\" y2=\"" << num(ly)
        << "\" stroke=\"" << color << "\" stroke-width=\"3\"/>\n";
    svg << "<text x=\"" << num(left + pw + 42) << "\" y=\"" << num(ly + 4)
        << "\">" << escape(s.label) << "</text>\n";
  }
  svg << "</svg>\n";
  return svg.str();
}

} // namespace isac
