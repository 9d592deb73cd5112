#include "fmlab/artifacts.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <sstream>

#include "fmlab/error.hpp"

namespace fmlab {

namespace {

constexpr double kSize = 800.0;
constexpr double kMargin = 60.0;

std::vector<std::string> split(const std::string& line) {
    std::vector<std::string> cells;
    std::size_t start = 0;
    while (true) {
        const auto comma = line.find(',', start);
        cells.push_back(line.substr(start, comma == std::string::npos ? std::string::npos : comma - start));
        if (comma == std::string::npos) break;
        start = comma + 1;
    }
    return cells;
}

std::string num(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.2f", v);
    return buf;
}

std::string escape(const std::string& s) {
    std::string out;
    for (char c : s) {
        switch (c) {
            case '<':
                out += "&lt;";
                break;
            case '>':
                out += "&gt;";
                break;
            case '&':
                out += "&amp;";
                break;
            case '"':
                out += "&quot;";
                break;
            default:
                out += c;
        }
    }
    return out;
}

const std::array<const char*, 10> kPalette = {"#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd",
                                              "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"};

std::string ramp(double u) {
    static const double stops[5][3] = {
        {13, 8, 135}, {33, 102, 172}, {32, 164, 134}, {160, 210, 70}, {253, 231, 37}};
    u = std::clamp(u, 0.0, 1.0) * 4.0;
    const int i = std::min(3, static_cast<int>(u));
    const double f = u - i;
    char buf[16];
    std::snprintf(buf, sizeof buf, "#%02x%02x%02x", static_cast<int>(std::lround(stops[i][0] + f * (stops[i + 1][0] - stops[i][0]))),
                  static_cast<int>(std::lround(stops[i][1] + f * (stops[i + 1][1] - stops[i][1]))),
                  static_cast<int>(std::lround(stops[i][2] + f * (stops[i + 1][2] - stops[i][2]))));
    return buf;
}

std::string open_svg(const std::string& title) {
    return "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n"
           "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"800\" height=\"800\" viewBox=\"0 0 800 800\">\n"
           "<rect x=\"0\" y=\"0\" width=\"800\" height=\"800\" fill=\"white\"/>\n"
           "<text x=\"400\" y=\"30\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"18\">" +
           escape(title) + "</text>\n";
}

}  // namespace

std::size_t CsvTable::column(const std::string& name) const {
    const auto it = std::find(header.begin(), header.end(), name);
    if (it == header.end()) throw ConfigError("CSV has no column '" + name + "'");
    return static_cast<std::size_t>(it - header.begin());
}

CsvTable parse_csv(const std::string& text) {
    CsvTable t;
    std::istringstream in(text);
    std::string line;
    bool have_header = false;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        if (line.front() == '#') {
            t.comments.push_back(line.substr(1));
            continue;
        }
        auto cells = split(line);
        if (!have_header) {
            t.header = std::move(cells);
            have_header = true;
            continue;
        }
        if (cells.size() != t.header.size()) {
            throw IoError("CSV line " + std::to_string(lineno) + ": expected " + std::to_string(t.header.size()) +
                          " cells, got " + std::to_string(cells.size()));
        }
        t.rows.push_back(std::move(cells));
    }
    if (!have_header) throw IoError("CSV has no header");
    return t;
}

CsvTable read_csv(const std::string& path) { return parse_csv(read_text(path)); }

std::string format_csv(const CsvTable& table) {
    std::string out;
    auto line = [&](const std::vector<std::string>& cells) {
        for (std::size_t i = 0; i < cells.size(); ++i) {
            if (i) out += ',';
            out += cells[i];
        }
        out += '\n';
    };
    line(table.header);
    for (const auto& r : table.rows) line(r);
    for (const auto& c : table.comments) out += "#" + c + "\n";
    return out;
}

void write_csv(const std::string& path, const CsvTable& table) { write_text(path, format_csv(table)); }

CsvTable points_table(const Matrix& points, const std::vector<int>& labels) {
    if (!labels.empty() && labels.size() != points.rows()) throw DimensionError("one label per point expected");
    CsvTable t;
    for (std::size_t d = 0; d < points.cols(); ++d) t.header.push_back("x" + std::to_string(d));
    t.header.push_back("label");
    char buf[32];
    for (std::size_t i = 0; i < points.rows(); ++i) {
        std::vector<std::string> row;
        for (std::size_t d = 0; d < points.cols(); ++d) {
            std::snprintf(buf, sizeof buf, "%.10g", points(i, d));
            row.emplace_back(buf);
        }
        row.push_back(std::to_string(labels.empty() ? -1 : labels[i]));
        t.rows.push_back(std::move(row));
    }
    return t;
}

void write_text(const std::string& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open " + path + " for writing");
    out << text;
    if (!out) throw IoError("failed writing " + path);
}

std::string read_text(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::string svg_scatter(const Matrix& points, const std::vector<int>& labels, const std::string& title,
                        double extent) {
    if (points.cols() < 2) throw DimensionError("scatter plot needs 2-D points");
    if (!labels.empty() && labels.size() != points.rows()) throw DimensionError("one label per point expected");
    std::string s = open_svg(title);
    const double span = kSize - 2 * kMargin;
    auto px = [&](double v) { return kMargin + (v + extent) / (2 * extent) * span; };
    auto py = [&](double v) { return kSize - kMargin - (v + extent) / (2 * extent) * span; };
    s += "<rect x=\"" + num(kMargin) + "\" y=\"" + num(kMargin) + "\" width=\"" + num(span) + "\" height=\"" +
         num(span) + "\" fill=\"none\" stroke=\"#444\"/>\n";
    s += "<g fill-opacity=\"0.6\">\n";
    for (std::size_t i = 0; i < points.rows(); ++i) {
        const double x = points(i, 0), y = points(i, 1);
        if (!std::isfinite(x) || !std::isfinite(y) || std::abs(x) > extent || std::abs(y) > extent) continue;
        const int l = labels.empty() ? -1 : labels[i];
        const char* color = l < 0 ? "#333333" : kPalette[static_cast<std::size_t>(l) % kPalette.size()];
        s += "<circle cx=\"" + num(px(x)) + "\" cy=\"" + num(py(y)) + "\" r=\"2\" fill=\"" + color + "\"/>\n";
    }
    s += "</g>\n</svg>\n";
    return s;
}

std::string svg_heatmap(const Matrix& grid, const std::vector<double>& coords, const std::string& title) {
    if (grid.rows() != coords.size() || grid.cols() != coords.size()) {
        throw DimensionError("heatmap grid must be square and match the coordinates");
    }
    std::string s = open_svg(title);
    double lo = std::numeric_limits<double>::infinity(), hi = -lo;
    for (double v : grid.flat()) {
        if (std::isfinite(v)) {
            lo = std::min(lo, v);
            hi = std::max(hi, v);
        }
    }
    const std::size_t n = coords.size();
    const double cell = (kSize - 2 * kMargin) / static_cast<double>(std::max<std::size_t>(n, 1));
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            const double v = grid(i, j);
            const double u = (hi > lo && std::isfinite(v)) ? (v - lo) / (hi - lo) : 0.0;
            // alpha along x, beta along y (upwards)
            s += "<rect x=\"" + num(kMargin + i * cell) + "\" y=\"" + num(kSize - kMargin - (j + 1) * cell) +
                 "\" width=\"" + num(cell + 0.5) + "\" height=\"" + num(cell + 0.5) + "\" fill=\"" + ramp(u) + "\"/>\n";
        }
    }
    char buf[128];
    std::snprintf(buf, sizeof buf, "min %.4g  max %.4g", std::isfinite(lo) ? lo : 0.0, std::isfinite(hi) ? hi : 0.0);
    s += "<text x=\"400\" y=\"785\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"14\">" +
         std::string(buf) + "</text>\n</svg>\n";
    return s;
}

std::string svg_lines(const std::vector<Series>& series, const std::string& title, const std::string& x_label,
                      const std::string& y_label, bool log_y) {
    auto ty = [&](double v) { return log_y ? (v > 0 ? std::log10(v) : std::nan("")) : v; };
    double x0 = std::numeric_limits<double>::infinity(), x1 = -x0, y0 = x0, y1 = -x0;
    for (const auto& sr : series) {
        if (sr.x.size() != sr.y.size()) throw DimensionError("series x and y differ in length");
        for (std::size_t i = 0; i < sr.x.size(); ++i) {
            const double y = ty(sr.y[i]);
            if (!std::isfinite(y) || !std::isfinite(sr.x[i])) continue;
            x0 = std::min(x0, sr.x[i]);
            x1 = std::max(x1, sr.x[i]);
            y0 = std::min(y0, y);
            y1 = std::max(y1, y);
        }
    }
    if (!(x1 > x0)) {
        x0 = std::isfinite(x0) ? x0 - 1 : 0;
        x1 = x0 + 2;
    }
    if (!(y1 > y0)) {
        y0 = std::isfinite(y0) ? y0 - 1 : 0;
        y1 = y0 + 2;
    }
    const double span = kSize - 2 * kMargin;
    auto px = [&](double v) { return kMargin + (v - x0) / (x1 - x0) * span; };
    auto py = [&](double v) { return kSize - kMargin - (v - y0) / (y1 - y0) * span; };
    std::string s = open_svg(title);
    s += "<rect x=\"" + num(kMargin) + "\" y=\"" + num(kMargin) + "\" width=\"" + num(span) + "\" height=\"" +
         num(span) + "\" fill=\"none\" stroke=\"#444\"/>\n";
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.4g", x0);
    s += "<text x=\"" + num(kMargin) + "\" y=\"760\" font-family=\"sans-serif\" font-size=\"12\">" + buf + "</text>\n";
    std::snprintf(buf, sizeof buf, "%.4g", x1);
    s += "<text x=\"" + num(kSize - kMargin) + "\" y=\"760\" text-anchor=\"end\" font-family=\"sans-serif\" "
         "font-size=\"12\">" + buf + "</text>\n";
    std::snprintf(buf, sizeof buf, log_y ? "1e%.2f" : "%.4g", y0);
    s += "<text x=\"5\" y=\"" + num(kSize - kMargin) + "\" font-family=\"sans-serif\" font-size=\"12\">" + buf + "</text>\n";
    std::snprintf(buf, sizeof buf, log_y ? "1e%.2f" : "%.4g", y1);
    s += "<text x=\"5\" y=\"" + num(kMargin + 12) + "\" font-family=\"sans-serif\" font-size=\"12\">" + buf + "</text>\n";
    s += "<text x=\"400\" y=\"785\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"14\">" +
         escape(x_label) + "</text>\n";
    s += "<text x=\"20\" y=\"400\" transform=\"rotate(-90 20 400)\" text-anchor=\"middle\" font-family=\"sans-serif\" "
         "font-size=\"14\">" + escape(y_label + (log_y ? " (log10)" : "")) + "</text>\n";
    for (std::size_t k = 0; k < series.size(); ++k) {
        const auto& sr = series[k];
        const char* color = kPalette[k % kPalette.size()];
        std::string pts;
        for (std::size_t i = 0; i < sr.x.size(); ++i) {
            const double y = ty(sr.y[i]);
            if (!std::isfinite(y) || !std::isfinite(sr.x[i])) continue;
            pts += num(px(sr.x[i])) + "," + num(py(y)) + " ";
        }
        s += "<polyline fill=\"none\" stroke=\"" + std::string(color) + "\" stroke-width=\"1.5\" points=\"" + pts +
             "\"/>\n";
        s += "<text x=\"" + num(kSize - kMargin - 10) + "\" y=\"" + num(kMargin + 20 + 18 * k) +
             "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"13\" fill=\"" + color + "\">" +
             escape(sr.name) + "</text>\n";
    }
    s += "</svg>\n";
    return s;
}

}  // namespace fmlab
