#include "mba/ransac.hpp"

#include <algorithm>
#include <random>

#include "mba/error.hpp"
#include "mba/histogram.hpp"

namespace mba {

std::vector<double> sampson_residuals(const Eigen::Matrix3d& e, std::span<const Eigen::Vector2d> x1,
                                      std::span<const Eigen::Vector2d> x2) {
  std::vector<double> out(x1.size());
  for (std::size_t k = 0; k < x1.size(); ++k) out[k] = sampson_residual(e, x1[k], x2[k]);
  return out;
}

EssentialHypothesis estimate_essential_marginalized(std::span<const Eigen::Vector2d> x1,
                                                    std::span<const Eigen::Vector2d> x2,
                                                    const MarginalizedRansacOptions& options) {
  const std::size_t n = x1.size();
  const std::size_t sample_size = options.solver == MinimalSolver::kFivePoint ? 5 : 8;
  if (x2.size() != n) throw Error(ErrorCode::kInvalidArgument, "ransac: point lists differ in length");
  if (n < sample_size) {
    throw Error(ErrorCode::kInvalidArgument, "ransac: fewer correspondences than the minimal sample");
  }
  if (!(options.tau_max > 0.0) || options.hypotheses < 1) {
    throw Error(ErrorCode::kInvalidArgument, "ransac: tau_max and hypotheses must be positive");
  }
  std::vector<double> grid = options.thresholds;
  for (const double t : grid) {
    if (!(t >= 0.0)) throw Error(ErrorCode::kInvalidArgument, "ransac: thresholds must be non-negative");
  }
  std::sort(grid.begin(), grid.end());
  if (grid.empty()) grid = threshold_grid(options.tau_max, options.threshold_count);
  const double mask_tau = options.thresholds.empty() ? options.tau_max : grid.back();

  std::mt19937_64 rng(options.seed);
  std::uniform_int_distribution<std::size_t> pick(0, n - 1);
  EssentialHypothesis best;
  bool found = false;
  std::vector<std::size_t> sample;
  std::vector<Eigen::Vector2d> s1(sample_size), s2(sample_size);

  for (int h = 0; h < options.hypotheses; ++h) {
    sample.clear();
    while (sample.size() < sample_size) {
      const std::size_t idx = pick(rng);
      if (std::find(sample.begin(), sample.end(), idx) == sample.end()) sample.push_back(idx);
    }
    for (std::size_t k = 0; k < sample_size; ++k) {
      s1[k] = x1[sample[k]];
      s2[k] = x2[sample[k]];
    }
    std::vector<Eigen::Matrix3d> candidates;
    try {
      if (options.solver == MinimalSolver::kFivePoint) {
        candidates = essential_five_point(s1, s2);
      } else {
        candidates.push_back(essential_eight_point(s1, s2));
      }
    } catch (const Error& e) {
      if (e.code() != ErrorCode::kDegenerateConfiguration) throw;
      continue;
    }
    for (std::size_t c = 0; c < candidates.size(); ++c) {
      const std::vector<double> residuals = sampson_residuals(candidates[c], x1, x2);
      const std::uint64_t score = marginalized_score(residuals, grid);
      if (found && score <= best.score) continue;
      found = true;
      best.essential = candidates[c];
      best.score = score;
      best.sample_index = h;
      best.candidate_index = static_cast<int>(c);
      best.inlier_mask.assign(n, false);
      best.inlier_count = 0;
      for (std::size_t k = 0; k < n; ++k) {
        if (residuals[k] < mask_tau) {
          best.inlier_mask[k] = true;
          ++best.inlier_count;
        }
      }
    }
  }
  if (!found) throw Error(ErrorCode::kNoValidHypothesis, "ransac: every minimal sample was degenerate");
  return best;
}

}  // namespace mba
