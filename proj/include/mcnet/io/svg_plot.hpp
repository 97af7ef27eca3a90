#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <string>
#include <vector>

#include "mcnet/core/errors.hpp"

namespace mcnet::io {

struct PlotSeries {
    std::string label;
    std::vector<std::pair<double, double>> points;
};

namespace detail_svg {

inline std::string num(double v) {
    char buf[64];
    auto res = std::to_chars(buf, buf + sizeof(buf), v, std::chars_format::fixed, 2);
    return std::string(buf, res.ptr);
}

inline const char* color(std::size_t i) {
    static const char* palette[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e",
                                    "#9467bd", "#8c564b", "#17becf", "#7f7f7f"};
    return palette[i % 8];
}

struct Frame {
    double x0 = 70, y0 = 40, w = 560, h = 360;  // plot area inside a 700x470 canvas
    double xmin = 0, xmax = 1, ymin = 0, ymax = 1;

    double px(double x) const { return x0 + (x - xmin) / (xmax - xmin) * w; }
    double py(double y) const { return y0 + h - (y - ymin) / (ymax - ymin) * h; }
};

inline void axes(std::ostream& os, const Frame& f, const std::string& title, const std::string& xlabel,
                 const std::string& ylabel) {
    os << "<rect x='" << num(f.x0) << "' y='" << num(f.y0) << "' width='" << num(f.w) << "' height='"
       << num(f.h) << "' fill='none' stroke='#333'/>\n";
    os << "<text x='350' y='22' text-anchor='middle' font-size='15'>" << title << "</text>\n";
    os << "<text x='350' y='455' text-anchor='middle' font-size='12'>" << xlabel << "</text>\n";
    os << "<text x='16' y='220' text-anchor='middle' font-size='12' transform='rotate(-90 16 220)'>" << ylabel
       << "</text>\n";
    for (int i = 0; i <= 5; ++i) {
        const double fy = f.ymin + (f.ymax - f.ymin) * i / 5.0;
        const double fx = f.xmin + (f.xmax - f.xmin) * i / 5.0;
        os << "<line x1='" << num(f.x0) << "' y1='" << num(f.py(fy)) << "' x2='" << num(f.x0 + f.w) << "' y2='"
           << num(f.py(fy)) << "' stroke='#ddd'/>\n";
        os << "<text x='" << num(f.x0 - 8) << "' y='" << num(f.py(fy) + 4)
           << "' text-anchor='end' font-size='11'>" << num(fy) << "</text>\n";
        os << "<text x='" << num(f.px(fx)) << "' y='" << num(f.y0 + f.h + 16)
           << "' text-anchor='middle' font-size='11'>" << num(fx) << "</text>\n";
    }
}

}  // namespace detail_svg

// Multi-series line chart with markers, e.g. accuracy vs session.
inline void write_line_chart(const std::string& path, const std::string& title, const std::string& xlabel,
                             const std::string& ylabel, const std::vector<PlotSeries>& series) {
    using namespace detail_svg;
    if (series.empty()) throw ConfigError("write_line_chart: no series");
    Frame f;
    f.xmin = 1e300;
    f.xmax = -1e300;
    f.ymin = 1e300;
    f.ymax = -1e300;
    for (const auto& s : series)
        for (const auto& [x, y] : s.points) {
            f.xmin = std::min(f.xmin, x);
            f.xmax = std::max(f.xmax, x);
            f.ymin = std::min(f.ymin, y);
            f.ymax = std::max(f.ymax, y);
        }
    if (f.xmax <= f.xmin) f.xmax = f.xmin + 1;
    const double pad = std::max(0.02, (f.ymax - f.ymin) * 0.08);
    f.ymin -= pad;
    f.ymax += pad;
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw IoError("cannot write plot: " + path);
    os << "<svg xmlns='http://www.w3.org/2000/svg' width='700' height='470' font-family='sans-serif'>\n";
    os << "<rect width='700' height='470' fill='white'/>\n";
    axes(os, f, title, xlabel, ylabel);
    for (std::size_t si = 0; si < series.size(); ++si) {
        const auto& s = series[si];
        os << "<polyline fill='none' stroke='" << color(si) << "' stroke-width='2' points='";
        for (const auto& [x, y] : s.points) os << num(f.px(x)) << "," << num(f.py(y)) << " ";
        os << "'/>\n";
        for (const auto& [x, y] : s.points)
            os << "<circle cx='" << num(f.px(x)) << "' cy='" << num(f.py(y)) << "' r='3' fill='" << color(si)
               << "'/>\n";
        os << "<text x='" << num(f.x0 + f.w - 6) << "' y='" << num(f.y0 + 16 + 16 * static_cast<double>(si))
           << "' text-anchor='end' font-size='12' fill='" << color(si) << "'>" << s.label << "</text>\n";
    }
    os << "</svg>\n";
}

// Labeled bar chart, e.g. final accuracy per ablation cell.
inline void write_bar_chart(const std::string& path, const std::string& title, const std::string& ylabel,
                            const std::vector<std::pair<std::string, double>>& bars) {
    using namespace detail_svg;
    if (bars.empty()) throw ConfigError("write_bar_chart: no bars");
    Frame f;
    f.xmin = 0;
    f.xmax = static_cast<double>(bars.size());
    f.ymin = 0;
    f.ymax = 1e-300;
    for (const auto& [name, v] : bars) f.ymax = std::max(f.ymax, v);
    f.ymax *= 1.15;
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw IoError("cannot write plot: " + path);
    os << "<svg xmlns='http://www.w3.org/2000/svg' width='700' height='470' font-family='sans-serif'>\n";
    os << "<rect width='700' height='470' fill='white'/>\n";
    os << "<rect x='" << num(f.x0) << "' y='" << num(f.y0) << "' width='" << num(f.w) << "' height='"
       << num(f.h) << "' fill='none' stroke='#333'/>\n";
    os << "<text x='350' y='22' text-anchor='middle' font-size='15'>" << title << "</text>\n";
    os << "<text x='16' y='220' text-anchor='middle' font-size='12' transform='rotate(-90 16 220)'>" << ylabel
       << "</text>\n";
    for (int i = 0; i <= 5; ++i) {
        const double fy = f.ymin + (f.ymax - f.ymin) * i / 5.0;
        os << "<line x1='" << num(f.x0) << "' y1='" << num(f.py(fy)) << "' x2='" << num(f.x0 + f.w) << "' y2='"
           << num(f.py(fy)) << "' stroke='#ddd'/>\n";
        os << "<text x='" << num(f.x0 - 8) << "' y='" << num(f.py(fy) + 4)
           << "' text-anchor='end' font-size='11'>" << num(fy) << "</text>\n";
    }
    const double slot = f.w / static_cast<double>(bars.size());
    for (std::size_t i = 0; i < bars.size(); ++i) {
        const double bx = f.x0 + slot * static_cast<double>(i) + slot * 0.2;
        const double bw = slot * 0.6;
        const double by = f.py(bars[i].second);
        os << "<rect x='" << num(bx) << "' y='" << num(by) << "' width='" << num(bw) << "' height='"
           << num(f.y0 + f.h - by) << "' fill='" << color(i) << "'/>\n";
        os << "<text x='" << num(bx + bw / 2) << "' y='" << num(by - 5)
           << "' text-anchor='middle' font-size='11'>" << num(bars[i].second) << "</text>\n";
        os << "<text x='" << num(bx + bw / 2) << "' y='" << num(f.y0 + f.h + 16)
           << "' text-anchor='middle' font-size='11'>" << bars[i].first << "</text>\n";
    }
    os << "</svg>\n";
}

}  // namespace mcnet::io
