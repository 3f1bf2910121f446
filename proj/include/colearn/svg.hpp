#pragma once

// Minimal static SVG line plots for report figures.

#include <string>
#include <vector>

namespace colearn {

struct PlotSeries {
    std::string name;
    std::vector<double> x;
    std::vector<double> y;
};

std::string line_plot_svg(const std::string& title, const std::string& x_label, const std::string& y_label,
                          const std::vector<PlotSeries>& series);

}  // namespace colearn
