// SPDX-License-Identifier: Apache-2.0
//
// Standalone SVG scatter plots with least-squares trend lines, one point per
// item and one line per model series. The fitted slope/intercept are emitted
// as data attributes on the trend lines so they can be checked against the
// regression module.

#pragma once

#include <algorithm>
#include <string>
#include <vector>

#include "edscore/common.hpp"
#include "edscore/stats.hpp"

namespace edscore {

struct PlotSeries {
    std::string name;
    std::string color;
    std::vector<double> x;
    std::vector<double> y;
    RegressionResult trend;
};

// 800x500 viewport, x axis = feature, y axis = QWK
inline std::string render_scatter_svg(const std::string& x_label,
                                      const std::vector<PlotSeries>& series) {
    constexpr double width = 800.0, height = 500.0;
    constexpr double ml = 70.0, mr = 25.0, mt = 40.0, mb = 60.0;
    const double plot_w = width - ml - mr;
    const double plot_h = height - mt - mb;

    double x_min = 1e300, x_max = -1e300, y_min = 1e300, y_max = -1e300;
    for (const auto& s : series) {
        for (double v : s.x) {
            x_min = std::min(x_min, v);
            x_max = std::max(x_max, v);
        }
        for (double v : s.y) {
            y_min = std::min(y_min, v);
            y_max = std::max(y_max, v);
        }
    }
    if (!(x_min < x_max)) {
        x_min -= 1.0;
        x_max += 1.0;
    }
    if (!(y_min < y_max)) {
        y_min -= 0.1;
        y_max += 0.1;
    }
    const double x_pad = 0.05 * (x_max - x_min);
    const double y_pad = 0.08 * (y_max - y_min);
    x_min -= x_pad;
    x_max += x_pad;
    y_min -= y_pad;
    y_max += y_pad;

    auto sx = [&](double v) { return ml + (v - x_min) / (x_max - x_min) * plot_w; };
    auto sy = [&](double v) { return mt + plot_h - (v - y_min) / (y_max - y_min) * plot_h; };

    std::string svg;
    svg += "<svg xmlns=\"http://www.w3.org/2000/svg\" viewBox=\"0 0 800 500\" "
           "width=\"800\" height=\"500\">\n";
    svg += "<rect x=\"0\" y=\"0\" width=\"800\" height=\"500\" fill=\"white\"/>\n";

    // axes
    svg += "<line x1=\"" + format_double(ml) + "\" y1=\"" + format_double(mt + plot_h) +
           "\" x2=\"" + format_double(ml + plot_w) + "\" y2=\"" + format_double(mt + plot_h) +
           "\" stroke=\"black\"/>\n";
    svg += "<line x1=\"" + format_double(ml) + "\" y1=\"" + format_double(mt) + "\" x2=\"" +
           format_double(ml) + "\" y2=\"" + format_double(mt + plot_h) +
           "\" stroke=\"black\"/>\n";

    // ticks
    for (int i = 0; i <= 5; ++i) {
        const double xv = x_min + (x_max - x_min) * i / 5.0;
        const double yv = y_min + (y_max - y_min) * i / 5.0;
        svg += "<line x1=\"" + format_double(sx(xv)) + "\" y1=\"" + format_double(mt + plot_h) +
               "\" x2=\"" + format_double(sx(xv)) + "\" y2=\"" +
               format_double(mt + plot_h + 5) + "\" stroke=\"black\"/>\n";
        svg += "<text x=\"" + format_double(sx(xv)) + "\" y=\"" +
               format_double(mt + plot_h + 20) +
               "\" font-size=\"11\" text-anchor=\"middle\">" + format_double(std::round(xv * 100.0) / 100.0) +
               "</text>\n";
        svg += "<line x1=\"" + format_double(ml - 5) + "\" y1=\"" + format_double(sy(yv)) +
               "\" x2=\"" + format_double(ml) + "\" y2=\"" + format_double(sy(yv)) +
               "\" stroke=\"black\"/>\n";
        svg += "<text x=\"" + format_double(ml - 10) + "\" y=\"" + format_double(sy(yv) + 4) +
               "\" font-size=\"11\" text-anchor=\"end\">" + format_double(std::round(yv * 1000.0) / 1000.0) +
               "</text>\n";
    }

    // axis labels
    svg += "<text x=\"" + format_double(ml + plot_w / 2) + "\" y=\"" +
           format_double(height - 15) + "\" font-size=\"14\" text-anchor=\"middle\">" + x_label +
           "</text>\n";
    svg += "<text x=\"20\" y=\"" + format_double(mt + plot_h / 2) +
           "\" font-size=\"14\" text-anchor=\"middle\" transform=\"rotate(-90 20 " +
           format_double(mt + plot_h / 2) + ")\">QWK</text>\n";

    // series
    double legend_y = mt + 10.0;
    for (const auto& s : series) {
        for (std::size_t i = 0; i < s.x.size(); ++i)
            svg += "<circle class=\"" + s.name + "\" cx=\"" + format_double(sx(s.x[i])) +
                   "\" cy=\"" + format_double(sy(s.y[i])) + "\" r=\"4\" fill=\"" + s.color +
                   "\" fill-opacity=\"0.75\"/>\n";
        // trend line clipped to the x range
        const double yl = s.trend.intercept + s.trend.slope * x_min;
        const double yr = s.trend.intercept + s.trend.slope * x_max;
        svg += "<line class=\"trend-" + s.name + "\" data-slope=\"" +
               format_double(s.trend.slope) + "\" data-intercept=\"" +
               format_double(s.trend.intercept) + "\" x1=\"" + format_double(sx(x_min)) +
               "\" y1=\"" + format_double(sy(yl)) + "\" x2=\"" + format_double(sx(x_max)) +
               "\" y2=\"" + format_double(sy(yr)) + "\" stroke=\"" + s.color +
               "\" stroke-width=\"2\"/>\n";
        // legend
        svg += "<rect x=\"" + format_double(ml + plot_w - 150) + "\" y=\"" +
               format_double(legend_y - 9) + "\" width=\"12\" height=\"12\" fill=\"" + s.color +
               "\"/>\n";
        svg += "<text x=\"" + format_double(ml + plot_w - 132) + "\" y=\"" +
               format_double(legend_y + 1) + "\" font-size=\"12\">" + s.name + "</text>\n";
        legend_y += 18.0;
    }
    svg += "</svg>\n";
    return svg;
}

}  // namespace edscore
