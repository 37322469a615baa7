#pragma once

#include <array>
#include <optional>
#include <span>
#include <vector>

#include <Eigen/Core>

namespace mba {

// Two-view epipolar geometry in normalized image coordinates. Convention:
// X2 = R X1 + t, E = [t]x R, and x2^T E x1 = 0.

enum class MinimalSolver { kFivePoint, kEightPoint };

// Nister's minimal solver. Takes exactly five correspondences and returns every
// real solution, each scaled to unit Frobenius norm. Throws
// DegenerateConfiguration when the epipolar design matrix has a nullspace of
// dimension above four.
std::vector<Eigen::Matrix3d> essential_five_point(std::span<const Eigen::Vector2d> x1,
                                                  std::span<const Eigen::Vector2d> x2);

// Linear eight-point estimate with Hartley normalization, projected onto the
// essential manifold (singular values 1, 1, 0). Needs at least eight points.
Eigen::Matrix3d essential_eight_point(std::span<const Eigen::Vector2d> x1,
                                      std::span<const Eigen::Vector2d> x2);

// (x2^T E x1)^2 / ((E x1)_0^2 + (E x1)_1^2 + (E^T x2)_0^2 + (E^T x2)_1^2);
// +inf when the denominator vanishes.
double sampson_residual(const Eigen::Matrix3d& e, const Eigen::Vector2d& x1, const Eigen::Vector2d& x2);

struct RelativePose {
  Eigen::Matrix3d rotation = Eigen::Matrix3d::Identity();
  Eigen::Vector3d translation = Eigen::Vector3d::UnitZ();  // unit length
};

// The four (R, t) factorizations of an essential matrix.
std::array<RelativePose, 4> decompose_essential(const Eigen::Matrix3d& e);

// Midpoint triangulation in the first camera's frame. Empty when the rays are
// parallel.
std::optional<Eigen::Vector3d> triangulate_midpoint(const RelativePose& pose, const Eigen::Vector2d& x1,
                                                    const Eigen::Vector2d& x2);

// Number of correspondences (optionally restricted to `mask`) triangulating
// in front of both cameras.
int count_in_front(const RelativePose& pose, std::span<const Eigen::Vector2d> x1,
                   std::span<const Eigen::Vector2d> x2, const std::vector<bool>* mask = nullptr);

// Decomposition with the cheirality test; returns the candidate with the most
// points in front and that count.
std::pair<RelativePose, int> select_pose(const Eigen::Matrix3d& e, std::span<const Eigen::Vector2d> x1,
                                         std::span<const Eigen::Vector2d> x2,
                                         const std::vector<bool>* mask = nullptr);

}  // namespace mba
