#pragma once

#include <string>
#include <vector>

#include "fmlab/matrix.hpp"

namespace fmlab {

// Plain comma-separated table. Lines starting with '#' are comments; empty
// cells are kept as empty strings.
struct CsvTable {
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;
    std::vector<std::string> comments;

    std::size_t column(const std::string& name) const;  // throws ConfigError if absent
};

CsvTable parse_csv(const std::string& text);
CsvTable read_csv(const std::string& path);
std::string format_csv(const CsvTable& table);
void write_csv(const std::string& path, const CsvTable& table);

// One row per point: x0, x1, ..., label.
CsvTable points_table(const Matrix& points, const std::vector<int>& labels);

void write_text(const std::string& path, const std::string& text);
std::string read_text(const std::string& path);

// 800x800 SVG documents. Colors: categorical palette for labels, and a
// five-stop dark-blue -> teal -> yellow ramp for heatmaps.
std::string svg_scatter(const Matrix& points, const std::vector<int>& labels, const std::string& title,
                        double extent = 3.0);

std::string svg_heatmap(const Matrix& grid, const std::vector<double>& coords, const std::string& title);

struct Series {
    std::string name;
    std::vector<double> x;
    std::vector<double> y;
};

// Line chart; log_y plots log10 of positive values.
std::string svg_lines(const std::vector<Series>& series, const std::string& title, const std::string& x_label,
                      const std::string& y_label, bool log_y = false);

}  // namespace fmlab
