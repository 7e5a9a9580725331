#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace cdul {

struct PlotSeries {
    std::string label;
    std::vector<double> x;
    std::vector<double> y;
};

// Minimal deterministic line chart; enough for the mAP-vs-epoch figures.
void write_line_plot_svg(const std::filesystem::path& path, const std::string& title,
                         const std::string& x_label, const std::string& y_label,
                         std::span<const PlotSeries> series);

} // namespace cdul
