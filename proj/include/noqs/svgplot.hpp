#pragma once

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "noqs/errors.hpp"

namespace noqs {

// Minimal static SVG line plots: axes, tick labels, legend, optional
// symmetric error bands.
struct PlotSeries {
    std::string label;
    std::vector<double> x, y;
    std::vector<double> y_err; // optional; same length as y when present
    std::string color = "#1f6fb2";
};

struct PlotSpec {
    std::string title;
    std::string x_label = "t";
    std::string y_label;
    std::vector<PlotSeries> series;
    int width = 640, height = 420;
};

namespace detail {

inline std::string svg_num(double v) {
    std::ostringstream ss;
    ss.precision(6);
    ss << v;
    return ss.str();
}

} // namespace detail

inline std::string render_svg(const PlotSpec& spec) {
    if (spec.series.empty()) throw config_error("plot has no series");
    double xmin = 1e300, xmax = -1e300, ymin = 1e300, ymax = -1e300;
    for (const auto& s : spec.series) {
        if (s.x.size() != s.y.size() || s.x.empty())
            throw config_error("plot series has mismatched or empty data");
        if (!s.y_err.empty() && s.y_err.size() != s.y.size())
            throw config_error("plot series error band has wrong length");
        for (std::size_t i = 0; i < s.x.size(); ++i) {
            const double e = s.y_err.empty() ? 0.0 : std::abs(s.y_err[i]);
            xmin = std::min(xmin, s.x[i]);
            xmax = std::max(xmax, s.x[i]);
            ymin = std::min(ymin, s.y[i] - e);
            ymax = std::max(ymax, s.y[i] + e);
        }
    }
    if (xmax <= xmin) xmax = xmin + 1;
    if (ymax <= ymin) {
        ymin -= 0.5;
        ymax += 0.5;
    }
    const double ypad = 0.05 * (ymax - ymin);
    ymin -= ypad;
    ymax += ypad;

    const double ml = 64, mr = 16, mt = 36, mb = 44;
    const double pw = spec.width - ml - mr, ph = spec.height - mt - mb;
    auto px = [&](double x) { return ml + (x - xmin) / (xmax - xmin) * pw; };
    auto py = [&](double y) { return mt + (ymax - y) / (ymax - ymin) * ph; };

    std::ostringstream o;
    o << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << spec.width << "\" height=\""
      << spec.height << "\" viewBox=\"0 0 " << spec.width << " " << spec.height << "\">\n";
    o << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    o << "<text x=\"" << spec.width / 2 << "\" y=\"20\" text-anchor=\"middle\" "
      << "font-family=\"sans-serif\" font-size=\"14\">" << spec.title << "</text>\n";

    // axes + ticks
    o << "<rect x=\"" << ml << "\" y=\"" << mt << "\" width=\"" << pw << "\" height=\"" << ph
      << "\" fill=\"none\" stroke=\"#333\"/>\n";
    for (int i = 0; i <= 4; ++i) {
        const double xv = xmin + i * (xmax - xmin) / 4;
        const double yv = ymin + i * (ymax - ymin) / 4;
        o << "<line x1=\"" << detail::svg_num(px(xv)) << "\" y1=\"" << mt + ph << "\" x2=\""
          << detail::svg_num(px(xv)) << "\" y2=\"" << mt + ph + 5 << "\" stroke=\"#333\"/>\n";
        o << "<text x=\"" << detail::svg_num(px(xv)) << "\" y=\"" << mt + ph + 18
          << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"10\">"
          << detail::svg_num(xv) << "</text>\n";
        o << "<line x1=\"" << ml - 5 << "\" y1=\"" << detail::svg_num(py(yv)) << "\" x2=\"" << ml
          << "\" y2=\"" << detail::svg_num(py(yv)) << "\" stroke=\"#333\"/>\n";
        o << "<text x=\"" << ml - 8 << "\" y=\"" << detail::svg_num(py(yv) + 3)
          << "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"10\">"
          << detail::svg_num(yv) << "</text>\n";
    }
    o << "<text x=\"" << ml + pw / 2 << "\" y=\"" << spec.height - 8
      << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\">" << spec.x_label
      << "</text>\n";
    o << "<text x=\"14\" y=\"" << mt + ph / 2
      << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\" "
      << "transform=\"rotate(-90 14 " << mt + ph / 2 << ")\">" << spec.y_label << "</text>\n";

    int legend_row = 0;
    for (const auto& s : spec.series) {
        if (!s.y_err.empty()) {
            std::ostringstream band;
            band << "<polygon points=\"";
            for (std::size_t i = 0; i < s.x.size(); ++i)
                band << detail::svg_num(px(s.x[i])) << "," << detail::svg_num(py(s.y[i] + s.y_err[i]))
                     << " ";
            for (std::size_t i = s.x.size(); i-- > 0;)
                band << detail::svg_num(px(s.x[i])) << "," << detail::svg_num(py(s.y[i] - s.y_err[i]))
                     << " ";
            band << "\" fill=\"" << s.color << "\" fill-opacity=\"0.15\" stroke=\"none\"/>\n";
            o << band.str();
        }
        o << "<polyline fill=\"none\" stroke=\"" << s.color << "\" stroke-width=\"1.5\" points=\"";
        for (std::size_t i = 0; i < s.x.size(); ++i)
            o << detail::svg_num(px(s.x[i])) << "," << detail::svg_num(py(s.y[i])) << " ";
        o << "\"/>\n";
        const double ly = mt + 14 + 16 * legend_row++;
        o << "<line x1=\"" << ml + pw - 120 << "\" y1=\"" << ly << "\" x2=\"" << ml + pw - 100
          << "\" y2=\"" << ly << "\" stroke=\"" << s.color << "\" stroke-width=\"2\"/>\n";
        o << "<text x=\"" << ml + pw - 95 << "\" y=\"" << ly + 4
          << "\" font-family=\"sans-serif\" font-size=\"11\">" << s.label << "</text>\n";
    }
    o << "</svg>\n";
    return o.str();
}

inline void write_svg(const std::string& path, const PlotSpec& spec) {
    std::ofstream os(path);
    if (!os) throw io_error("cannot open for writing: " + path);
    os << render_svg(spec);
    if (!os) throw io_error("write failed: " + path);
}

} // namespace noqs
