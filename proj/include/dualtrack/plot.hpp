#pragma once

// Static SVG figures.

#include <filesystem>
#include <string>
#include <vector>

#include "dualtrack/geometry.hpp"
#include "dualtrack/metrics.hpp"

namespace dualtrack {

struct Series {
  std::string label;
  std::vector<double> x;
  std::vector<double> y;
  std::string color = "#1f77b4";
  bool dashed = false;
};

void write_line_plot(const std::filesystem::path& path, const std::string& title, const std::string& x_label,
                     const std::string& y_label, const std::vector<Series>& series);

struct TrajectoryTrace {
  std::string label;
  Trajectory poses;
  std::string color;
};

// Oblique projection of each frame's top edge and centre line; ground truth
// first, predictions after.
void write_trajectory_plot(const std::filesystem::path& path, const std::string& title,
                           const std::vector<TrajectoryTrace>& traces, const Calibration& cal, int width, int height);

}  // namespace dualtrack
