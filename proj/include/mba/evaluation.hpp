#pragma once

#include <map>
#include <span>
#include <vector>

#include <Eigen/Core>

#include "mba/geometry.hpp"

namespace mba {

// dst ~= scale * rotation * src + translation
struct Similarity {
  double scale = 1.0;
  Eigen::Matrix3d rotation = Eigen::Matrix3d::Identity();
  Eigen::Vector3d translation = Eigen::Vector3d::Zero();

  Eigen::Vector3d apply(const Eigen::Vector3d& p) const { return scale * (rotation * p) + translation; }
};

// Least-squares similarity (Umeyama). Needs at least three points.
Similarity umeyama_alignment(std::span<const Eigen::Vector3d> src, std::span<const Eigen::Vector3d> dst);

// Largest distance between any two points.
double trajectory_diameter(std::span<const Eigen::Vector3d> points);

struct PairError {
  int i = 0;
  int j = 0;
  double rotation_deg = 0.0;
  double translation_deg = 0.0;
};

// Relative pose errors over all pairs of frames present in both maps, in
// ascending (i, j) order. Relative motion i -> j: R_j R_i^T and
// t_j - R_j R_i^T t_i.
std::vector<PairError> relative_pose_errors(const std::map<int, FrameState>& est,
                                            const std::map<int, FrameState>& gt);

struct RraRta {
  double rra = 0.0;  // percent
  double rta = 0.0;  // percent
  int pairs = 0;
};

// Throws InsufficientFrames with fewer than two common frames.
RraRta rra_rta(const std::map<int, FrameState>& est, const std::map<int, FrameState>& gt, double tau_deg);

// (1/tau) * integral over [0, tau] of the empirical step CDF of the errors.
double auc_pose(std::span<const double> errors_deg, double tau_deg);

struct AteResult {
  double ate = 0.0;        // rmse / diameter
  double rmse = 0.0;
  double diameter = 0.0;
  bool degenerate = false; // collinear centers; alignment still computed
  Similarity alignment;    // estimate -> ground truth
};

// Throws InsufficientFrames with fewer than three centers.
AteResult ate(std::span<const Eigen::Vector3d> est_centers, std::span<const Eigen::Vector3d> gt_centers);

// Percentage of frames present in both maps whose absolute rotation error is
// below rot_tol_deg and camera-center error below trans_tol. No alignment.
double reloc_accuracy(const std::map<int, FrameState>& est, const std::map<int, FrameState>& gt, double trans_tol,
                      double rot_tol_deg);

struct MetricReport {
  int frames_total = 0;
  int frames_registered = 0;
  double registration_rate = 0.0;  // percent
  int pairs = 0;
  double tau_deg = 5.0;
  double rra = 0.0;
  double rta = 0.0;
  double acc = 0.0;                // percent of pairs with max(rot, trans) below tau
  double auc = 0.0;
  double median_rotation_deg = 0.0;
  double median_translation_deg = 0.0;
  bool has_ate = false;
  double ate = 0.0;
  bool ate_degenerate = false;
};

// All metrics for an estimate against ground truth. `est` holds registered
// frames only; `frames_total` is taken from the ground truth.
MetricReport evaluate_poses(const std::map<int, FrameState>& est, const std::map<int, FrameState>& gt,
                            double tau_deg);

}  // namespace mba
