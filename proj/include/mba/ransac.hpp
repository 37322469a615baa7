#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include <Eigen/Core>

#include "mba/essential.hpp"

namespace mba {

struct MarginalizedRansacOptions {
  int hypotheses = 64;          // minimal samples drawn, single shot
  double tau_max = 1e-5;        // Sampson units (squared normalized distance)
  int threshold_count = 100;    // T
  std::vector<double> thresholds;  // explicit grid (Sampson units); replaces the uniform one when set
  std::uint64_t seed = 0;
  MinimalSolver solver = MinimalSolver::kFivePoint;
};

struct EssentialHypothesis {
  Eigen::Matrix3d essential = Eigen::Matrix3d::Zero();
  std::uint64_t score = 0;
  std::vector<bool> inlier_mask;  // Sampson residual < tau_max
  int inlier_count = 0;
  int sample_index = -1;
  int candidate_index = -1;       // position among the sample's solutions
};

std::vector<double> sampson_residuals(const Eigen::Matrix3d& e, std::span<const Eigen::Vector2d> x1,
                                      std::span<const Eigen::Vector2d> x2);

// Single-shot RANSAC: draws `hypotheses` minimal samples, keeps every real
// solution of each, and returns the candidate maximizing the marginalized
// score of its Sampson residuals. Ties go to the earliest sample, then the
// earliest solution. The inlier mask uses tau_max, or the largest explicit
// threshold. Throws NoValidHypothesis when every sample is degenerate.
EssentialHypothesis estimate_essential_marginalized(std::span<const Eigen::Vector2d> x1,
                                                    std::span<const Eigen::Vector2d> x2,
                                                    const MarginalizedRansacOptions& options);

}  // namespace mba
