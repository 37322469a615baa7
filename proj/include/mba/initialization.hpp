#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "mba/depth_map.hpp"
#include "mba/essential.hpp"
#include "mba/geometry.hpp"
#include "mba/pose_graph.hpp"

namespace mba {

struct CalibrationOptions {
  int trials = 256;
  double inlier_tol = 0.05;   // relative deviation from the hypothesis
  double axis_margin = 0.01;  // minimum |x/z| or |y/z| for a usable candidate
  std::uint64_t seed = 0;
};

// Focal length from a camera-frame pointmap with the principal point at the
// image center: each well-conditioned pixel votes f = (u - cx) z / x and
// f = (v - cy) z / y; RANSAC picks the densest vote and returns the mean of
// its inliers. Grid cell (col, row) is pixel coordinate (col, row).
double calibrate_from_pointmap(const PointMap& pointmap, const CalibrationOptions& options = {});

// Lower median.
double shared_focal(std::span<const double> focals);

struct TwoViewOptions {
  int ransac_iters = 256;
  double inlier_tau_px = 3.0;   // converted to Sampson units with the mean focal
  int threshold_count = 100;
  std::uint64_t seed = 0;
  MinimalSolver solver = MinimalSolver::kFivePoint;
};

// Relative motion from source to destination camera: X_dst = R X_src + s t.
struct TwoViewEstimate {
  Eigen::Matrix3d rotation = Eigen::Matrix3d::Identity();
  Eigen::Vector3d translation_dir = Eigen::Vector3d::UnitZ();
  std::vector<bool> inlier_mask;
  int inlier_count = 0;
  std::optional<double> scale;
};

// Throws TwoViewFailure when no hypothesis keeps five inliers in front of both
// cameras.
TwoViewEstimate two_view_pose(std::span<const Eigen::Vector2d> src_pixels, std::span<const Eigen::Vector2d> dst_pixels,
                              const CameraIntrinsics& k_src, const CameraIntrinsics& k_dst,
                              const TwoViewOptions& options = {});

// Ray parameter s > 0 minimizing the image distance between the projection of
// a + s b and the normalized point m, with a + s b in front of the camera.
std::optional<double> solve_ray_scale(const Eigen::Vector3d& a, const Eigen::Vector3d& b, const Eigen::Vector2d& m);

// Baseline length from source depths: for every record, the scale placing the
// back-projected source point onto its destination match; returns the median.
// `depth_of` maps a record to the (already corrected) source depth. Throws
// ScaleResolutionFailure when no record yields a valid scale.
double resolve_translation_scale(const TwoViewEstimate& estimate, std::span<const DataRecord> records,
                                 const CameraIntrinsics& k_src, const CameraIntrinsics& k_dst,
                                 const AffineDepthCorrection& src_correction = {});

struct RegistrationFailure {
  int frame = 0;
  std::string message;
};

struct RegistrationResult {
  std::map<int, FrameState> states;   // registered frames only
  std::vector<int> order;             // registration order, root first
  std::vector<int> unregistered;
  std::vector<RegistrationFailure> failures;
};

// Places `child` relative to the registered `parent` from the parent -> child
// and child -> parent blocks: pose from two_view_pose and the parent's
// corrected depth, alpha from the median depth ratio implied by the reverse
// direction, beta = 0. Throws on failure.
FrameState register_from_parent(const FrameState& parent, const FrameState& child_template,
                                const DirectedBlock& parent_to_child, const DirectedBlock& child_to_parent,
                                const TwoViewOptions& options);

// Registers frames in tree order. The root keeps an identity pose and (1, 0)
// correction. A frame whose parent failed, or whose own registration against
// the parent failed, is retried against its other registered neighbors in
// decreasing co-visibility.
RegistrationResult register_spanning_tree(const SpanningTree& tree, const PoseGraph& graph, const DataMatrix& data,
                                          const std::map<int, FrameState>& initial, const TwoViewOptions& options);

}  // namespace mba
