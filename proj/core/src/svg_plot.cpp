#include "svg_plot.hpp"

#include <cmath>
#include <numbers>
#include <sstream>

namespace fcns::detail {

namespace {

constexpr const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd",
                                    "#ff7f0e", "#8c564b", "#e377c2", "#17becf"};

std::string escape(const std::string& text) {
  std::string out;
  for (char c : text) {
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

const char* colour(std::size_t i) { return kPalette[i % std::size(kPalette)]; }

}  // namespace

std::string line_plot_svg(const std::string& title, const std::string& x_label,
                          const std::string& y_label,
                          const std::vector<Series>& series, bool diagonal) {
  constexpr double left = 60, top = 40, size = 400;
  std::ostringstream s;
  s << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"640\" height=\"500\" "
       "font-family=\"sans-serif\" font-size=\"12\">\n";
  s << "<rect width=\"640\" height=\"500\" fill=\"white\"/>\n";
  s << "<text x=\"" << left + size / 2 << "\" y=\"24\" text-anchor=\"middle\" "
       "font-size=\"15\">" << escape(title) << "</text>\n";
  s << "<rect x=\"" << left << "\" y=\"" << top << "\" width=\"" << size
    << "\" height=\"" << size << "\" fill=\"none\" stroke=\"black\"/>\n";
  for (int t = 0; t <= 4; ++t) {
    const double v = t / 4.0;
    s << "<text x=\"" << left + v * size << "\" y=\"" << top + size + 16
      << "\" text-anchor=\"middle\">" << v << "</text>\n";
    s << "<text x=\"" << left - 6 << "\" y=\"" << top + size - v * size + 4
      << "\" text-anchor=\"end\">" << v << "</text>\n";
  }
  s << "<text x=\"" << left + size / 2 << "\" y=\"" << top + size + 34
    << "\" text-anchor=\"middle\">" << escape(x_label) << "</text>\n";
  s << "<text transform=\"translate(18," << top + size / 2
    << ") rotate(-90)\" text-anchor=\"middle\">" << escape(y_label) << "</text>\n";
  if (diagonal) {
    s << "<line x1=\"" << left << "\" y1=\"" << top + size << "\" x2=\""
      << left + size << "\" y2=\"" << top
      << "\" stroke=\"gray\" stroke-dasharray=\"4 4\"/>\n";
  }
  for (std::size_t i = 0; i < series.size(); ++i) {
    const auto& sr = series[i];
    s << "<polyline fill=\"none\" stroke-width=\"1.5\" stroke=\"" << colour(i)
      << "\" points=\"";
    for (std::size_t k = 0; k < sr.x.size() && k < sr.y.size(); ++k) {
      s << left + sr.x[k] * size << ',' << top + size - sr.y[k] * size << ' ';
    }
    s << "\"/>\n";
    s << "<text x=\"" << left + size + 12 << "\" y=\"" << top + 14 + 18.0 * i
      << "\" fill=\"" << colour(i) << "\">" << escape(sr.name) << "</text>\n";
  }
  s << "</svg>\n";
  return s.str();
}

std::string radar_plot_svg(const std::string& title,
                           const std::vector<std::string>& axes,
                           const std::vector<RadarSeries>& series) {
  constexpr double cx = 260, cy = 260, radius = 180;
  const auto n = axes.size();
  auto point = [&](std::size_t k, double v) {
    const double angle = -std::numbers::pi / 2 + 2 * std::numbers::pi * k / n;
    return std::pair{cx + v * radius * std::cos(angle),
                     cy + v * radius * std::sin(angle)};
  };
  std::ostringstream s;
  s << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"680\" height=\"520\" "
       "font-family=\"sans-serif\" font-size=\"12\">\n";
  s << "<rect width=\"680\" height=\"520\" fill=\"white\"/>\n";
  s << "<text x=\"" << cx << "\" y=\"24\" text-anchor=\"middle\" font-size=\"15\">"
    << escape(title) << "</text>\n";
  if (n >= 3) {
    for (int ring = 1; ring <= 4; ++ring) {
      s << "<polygon fill=\"none\" stroke=\"#ccc\" points=\"";
      for (std::size_t k = 0; k < n; ++k) {
        const auto [x, y] = point(k, ring / 4.0);
        s << x << ',' << y << ' ';
      }
      s << "\"/>\n";
    }
    for (std::size_t k = 0; k < n; ++k) {
      const auto [x, y] = point(k, 1.0);
      const auto [lx, ly] = point(k, 1.12);
      s << "<line x1=\"" << cx << "\" y1=\"" << cy << "\" x2=\"" << x
        << "\" y2=\"" << y << "\" stroke=\"#ccc\"/>\n";
      s << "<text x=\"" << lx << "\" y=\"" << ly << "\" text-anchor=\"middle\">"
        << escape(axes[k]) << "</text>\n";
    }
    for (std::size_t i = 0; i < series.size(); ++i) {
      s << "<polygon fill=\"" << colour(i) << "\" fill-opacity=\"0.15\" stroke=\""
        << colour(i) << "\" points=\"";
      for (std::size_t k = 0; k < n && k < series[i].values.size(); ++k) {
        const auto [x, y] = point(k, series[i].values[k]);
        s << x << ',' << y << ' ';
      }
      s << "\"/>\n";
      s << "<text x=\"" << 520 << "\" y=\"" << 60 + 18.0 * i << "\" fill=\""
        << colour(i) << "\">" << escape(series[i].name) << "</text>\n";
    }
  }
  s << "</svg>\n";
  return s.str();
}

}  // namespace fcns::detail
