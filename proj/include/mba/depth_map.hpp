#pragma once

#include <cmath>
#include <vector>

#include <Eigen/Core>

namespace mba {

// Dense per-pixel depth, row-major. Values <= 0 or NaN mark invalid pixels.
struct DepthMap {
  int width = 0;
  int height = 0;
  std::vector<float> values;

  DepthMap() = default;
  DepthMap(int w, int h, float fill = 0.0f)
      : width(w), height(h), values(static_cast<std::size_t>(w) * static_cast<std::size_t>(h), fill) {}

  float& at(int row, int col) { return values[static_cast<std::size_t>(row) * width + col]; }
  float at(int row, int col) const { return values[static_cast<std::size_t>(row) * width + col]; }

  static bool is_valid(float d) { return std::isfinite(d) && d > 0.0f; }
  bool valid(int row, int col) const {
    return row >= 0 && col >= 0 && row < height && col < width && is_valid(at(row, col));
  }

  // Nearest-pixel lookup at a (u, v) pixel coordinate; NaN when out of bounds
  // or invalid.
  double sample_nearest(const Eigen::Vector2d& pixel) const {
    const int col = static_cast<int>(std::lround(pixel.x()));
    const int row = static_cast<int>(std::lround(pixel.y()));
    if (!valid(row, col)) return std::nan("");
    return at(row, col);
  }
};

// Dense per-pixel 3D points in the camera frame, row-major. Points with z <= 0
// or non-finite coordinates are invalid.
struct PointMap {
  int width = 0;
  int height = 0;
  std::vector<Eigen::Vector3f> points;

  PointMap() = default;
  PointMap(int w, int h)
      : width(w), height(h),
        points(static_cast<std::size_t>(w) * static_cast<std::size_t>(h), Eigen::Vector3f::Zero()) {}

  Eigen::Vector3f& at(int row, int col) { return points[static_cast<std::size_t>(row) * width + col]; }
  const Eigen::Vector3f& at(int row, int col) const {
    return points[static_cast<std::size_t>(row) * width + col];
  }
  static bool is_valid(const Eigen::Vector3f& p) { return p.allFinite() && p.z() > 0.0f; }
};

}  // namespace mba
