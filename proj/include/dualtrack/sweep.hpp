#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "dualtrack/error.hpp"
#include "dualtrack/geometry.hpp"
#include "dualtrack/metrics.hpp"

namespace dualtrack {

// Stack of equally sized 2D images, frame-major then row-major.
struct FrameStack {
  int count = 0;
  int height = 0;
  int width = 0;
  std::vector<float> data;

  FrameStack() = default;
  FrameStack(int n, int h, int w)
      : count(n), height(h), width(w), data(static_cast<std::size_t>(n) * h * w, 0.0f) {}

  std::size_t frame_size() const { return static_cast<std::size_t>(height) * width; }

  std::span<float> frame(int i) {
    return {data.data() + static_cast<std::size_t>(i) * frame_size(), frame_size()};
  }
  std::span<const float> frame(int i) const {
    return {data.data() + static_cast<std::size_t>(i) * frame_size(), frame_size()};
  }

  float& at(int i, int y, int x) {
    return data[(static_cast<std::size_t>(i) * height + y) * width + x];
  }
  float at(int i, int y, int x) const {
    return data[(static_cast<std::size_t>(i) * height + y) * width + x];
  }
};

struct Sweep {
  std::string id;
  FrameStack frames;
  Trajectory poses;  // ground truth, world frame
  Calibration calibration;

  int size() const { return frames.count; }

  void validate() const {
    require(frames.count >= 2, ErrorCategory::invalid_argument, "sweep '" + id + "': needs at least 2 frames");
    require(poses.size() == static_cast<std::size_t>(frames.count), ErrorCategory::shape_mismatch,
            "sweep '" + id + "': " + std::to_string(poses.size()) + " poses for " +
                std::to_string(frames.count) + " frames");
    for (float v : frames.data) {
      require(v >= 0.0f && v <= 1.0f, ErrorCategory::invalid_argument,
              "sweep '" + id + "': frame values must lie in [0, 1]");
    }
  }
};

}  // namespace dualtrack
