#pragma once

#include <array>
#include <string>
#include <vector>

#include "maskboot/image.hpp"

namespace maskboot::plot {

struct Series {
    std::string name;
    std::vector<double> x, y;
};

struct LineChart {
    std::vector<Series> series;
    std::vector<double> x_ticks;  // labelled positions on the x axis
    double y_min = 0.0, y_max = 1.0;
    int width = 480, height = 320;
};

// Tick positions: the sorted union of every series' x values.
std::vector<double> union_ticks(const std::vector<Series>& series);

// Axes, tick marks with numeric labels, one polyline plus point markers per series.
RgbImage render(const LineChart& chart);

}  // namespace maskboot::plot
