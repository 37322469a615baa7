#include <algorithm>
#include <random>
#include <vector>

#include "doctest.h"
#include "mba/error.hpp"
#include "mba/histogram.hpp"
#include "mba/ransac.hpp"
#include "test_support.hpp"

using namespace mba;

namespace {

struct Problem {
  Eigen::Matrix3d rotation;
  Eigen::Vector3d translation;
  std::vector<Eigen::Vector2d> x1, x2;
};

// Points in front of both cameras, optional pixel noise (sigma / focal in
// normalized units) and a fraction of uniformly random outliers.
Problem make_problem(std::mt19937_64& rng, int count, double outlier_fraction, double noise) {
  Problem p;
  p.rotation = testing::random_rotation(rng, 0.4);
  p.translation = testing::random_vector(rng, 1.0).normalized();
  std::uniform_real_distribution<double> lateral(-2.0, 2.0);
  std::uniform_real_distribution<double> depth(4.0, 10.0);
  std::uniform_real_distribution<double> view(-0.6, 0.6);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::normal_distribution<double> n(0.0, noise);
  while (static_cast<int>(p.x1.size()) < count) {
    const Eigen::Vector3d x(lateral(rng), lateral(rng), depth(rng));
    const Eigen::Vector3d y = p.rotation * x + p.translation;
    if (y.z() < 1.0) continue;
    Eigen::Vector2d a = x.head<2>() / x.z();
    Eigen::Vector2d b = y.head<2>() / y.z();
    if (noise > 0.0) {
      a += Eigen::Vector2d(n(rng), n(rng));
      b += Eigen::Vector2d(n(rng), n(rng));
    }
    if (u(rng) < outlier_fraction) b = Eigen::Vector2d(view(rng), view(rng));
    p.x1.push_back(a);
    p.x2.push_back(b);
  }
  return p;
}

std::pair<double, double> pose_errors(const Problem& p, const EssentialHypothesis& h) {
  const auto [pose, in_front] = select_pose(h.essential, p.x1, p.x2, &h.inlier_mask);
  const double rot = rotation_angle_deg(pose.rotation * p.rotation.transpose());
  const double dir = angle_between_deg(pose.translation, p.translation);
  return {rot, dir};
}

}  // namespace

TEST_CASE("noiseless inputs give an exact essential matrix") {
  std::mt19937_64 rng(1);
  for (int trial = 0; trial < 20; ++trial) {
    const Problem p = make_problem(rng, 200, 0.0, 0.0);
    MarginalizedRansacOptions o;
    o.seed = trial;
    const EssentialHypothesis h = estimate_essential_marginalized(p.x1, p.x2, o);
    double worst = 0.0;
    for (std::size_t k = 0; k < p.x1.size(); ++k) {
      worst = std::max(worst, std::abs(p.x2[k].homogeneous().dot(h.essential * p.x1[k].homogeneous())));
    }
    CHECK(worst < 1e-8);
    CHECK(h.inlier_count == 200);
    const auto [rot, dir] = pose_errors(p, h);
    CHECK(rot < 1e-6);
    CHECK(dir < 1e-6);
  }
}

TEST_CASE("eight-point variant") {
  std::mt19937_64 rng(2);
  const Problem p = make_problem(rng, 100, 0.0, 0.0);
  MarginalizedRansacOptions o;
  o.solver = MinimalSolver::kEightPoint;
  const EssentialHypothesis h = estimate_essential_marginalized(p.x1, p.x2, o);
  CHECK(h.inlier_count == 100);
  CHECK(pose_errors(p, h).first < 1e-6);
}

TEST_CASE("robust to outliers") {
  std::mt19937_64 rng(3);
  std::vector<double> rotation_errors;
  for (int seed = 0; seed < 10; ++seed) {
    const Problem p = make_problem(rng, 500, 0.3, 0.5 / 500.0);
    MarginalizedRansacOptions o;
    o.seed = seed;
    o.tau_max = 4.0 * std::pow(1.0 / 500.0, 2);
    const EssentialHypothesis h = estimate_essential_marginalized(p.x1, p.x2, o);
    rotation_errors.push_back(pose_errors(p, h).first);
  }
  std::sort(rotation_errors.begin(), rotation_errors.end());
  CHECK(rotation_errors[rotation_errors.size() / 2] < 3.0);
}

TEST_CASE("determinism and tie order") {
  std::mt19937_64 rng(4);
  const Problem p = make_problem(rng, 300, 0.4, 1.0 / 500.0);
  MarginalizedRansacOptions o;
  o.seed = 77;
  const EssentialHypothesis a = estimate_essential_marginalized(p.x1, p.x2, o);
  const EssentialHypothesis b = estimate_essential_marginalized(p.x1, p.x2, o);
  CHECK(a.essential == b.essential);
  CHECK(a.score == b.score);
  CHECK(a.sample_index == b.sample_index);
  CHECK(a.inlier_mask == b.inlier_mask);
}

TEST_CASE("winner is invariant under joint scaling of residual units and tau") {
  std::mt19937_64 rng(5);
  const Problem p = make_problem(rng, 300, 0.3, 1.0 / 500.0);
  // Score every candidate of a fixed set of samples at two unit scales.
  std::vector<std::vector<double>> residual_sets;
  std::mt19937_64 pick(6);
  std::uniform_int_distribution<std::size_t> idx(0, p.x1.size() - 1);
  for (int h = 0; h < 32; ++h) {
    std::vector<Eigen::Vector2d> s1, s2;
    while (s1.size() < 5) {
      const std::size_t k = idx(pick);
      s1.push_back(p.x1[k]);
      s2.push_back(p.x2[k]);
    }
    for (const Eigen::Matrix3d& e : essential_five_point(s1, s2)) residual_sets.push_back(sampson_residuals(e, p.x1, p.x2));
  }
  const double tau = 1e-5;
  for (double c : {0.25, 8.0, 1024.0}) {
    std::size_t best_a = 0, best_b = 0;
    std::uint64_t score_a = 0, score_b = 0;
    for (std::size_t k = 0; k < residual_sets.size(); ++k) {
      std::vector<double> scaled = residual_sets[k];
      for (double& r : scaled) r *= c;
      const std::uint64_t sa = marginalized_score(residual_sets[k], tau, 100);
      const std::uint64_t sb = marginalized_score(scaled, c * tau, 100);
      CHECK(sa == sb);
      if (sa > score_a) score_a = sa, best_a = k;
      if (sb > score_b) score_b = sb, best_b = k;
    }
    CHECK(best_a == best_b);
  }
}

TEST_CASE("single-threshold grid reduces to inlier counting") {
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> u(0.0, 2.0);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<double> r(1 + rng() % 300);
    for (double& x : r) x = u(rng);
    const std::vector<double> grid = threshold_grid(1.0, 1);
    REQUIRE(grid.size() == 2);
    CHECK(grid[0] == 0.0);
    CHECK(marginalized_score(r, grid) == binary_score(r, 1.0));
  }
}

TEST_CASE("adding a small residual never lowers the score") {
  std::mt19937_64 rng(8);
  std::uniform_real_distribution<double> u(0.0, 3.0);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<double> r(rng() % 100);
    for (double& x : r) x = u(rng);
    const std::uint64_t before = marginalized_score(r, 2.0, 100);
    r.push_back(std::uniform_real_distribution<double>(0.0, 0.02)(rng));
    CHECK(marginalized_score(r, 2.0, 100) >= before);
  }
}

TEST_CASE("degenerate and invalid inputs") {
  const std::vector<Eigen::Vector2d> same(20, Eigen::Vector2d(0.1, 0.2));
  try {
    estimate_essential_marginalized(same, same, {});
    FAIL("expected NoValidHypothesis");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::kNoValidHypothesis);
  }
  const std::vector<Eigen::Vector2d> four(4, Eigen::Vector2d::Zero());
  CHECK_THROWS_AS(estimate_essential_marginalized(four, four, {}), Error);
  MarginalizedRansacOptions bad;
  bad.hypotheses = 0;
  CHECK_THROWS_AS(estimate_essential_marginalized(same, same, bad), Error);
}
