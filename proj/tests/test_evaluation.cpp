#include <random>

#include "doctest.h"
#include "mba/error.hpp"
#include "mba/evaluation.hpp"
#include "test_support.hpp"

using namespace mba;

namespace {

std::map<int, FrameState> random_states(std::mt19937_64& rng, int count) {
  std::map<int, FrameState> out;
  for (int id = 0; id < count; ++id) {
    FrameState s = testing::random_frame(rng, id);
    const Eigen::Matrix3d r = testing::random_rotation(rng);
    s.pose = CameraPose::from_rotation(r, -r * testing::random_vector(rng, 5.0));
    out[id] = s;
  }
  return out;
}

// World change X' = s Q X + tau applied to every camera.
std::map<int, FrameState> transformed(const std::map<int, FrameState>& states, const Similarity& g) {
  std::map<int, FrameState> out = states;
  for (auto& [id, s] : out) {
    const Eigen::Matrix3d r = s.pose.rotation() * g.rotation.transpose();
    const Eigen::Vector3d c = g.apply(s.pose.center());
    s.pose = CameraPose::from_rotation(r, -r * c);
  }
  return out;
}

Similarity random_similarity(std::mt19937_64& rng) {
  Similarity g;
  g.scale = std::uniform_real_distribution<double>(0.2, 5.0)(rng);
  g.rotation = testing::random_rotation(rng);
  g.translation = testing::random_vector(rng, 10.0);
  return g;
}

}  // namespace

TEST_CASE("auc_pose") {
  const std::vector<double> errors{1.0, 2.0, 10.0};
  CHECK(auc_pose(errors, 5.0) == doctest::Approx(7.0 / 15.0).epsilon(1e-12));
  const std::vector<double> zeros{0.0, 0.0};
  CHECK(auc_pose(zeros, 5.0) == 1.0);
  const std::vector<double> large{6.0, 7.0};
  CHECK(auc_pose(large, 5.0) == 0.0);

  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> u(0.0, 20.0);
  std::vector<double> sample(50);
  for (double& e : sample) e = u(rng);
  double previous = 0.0;
  for (double tau = 0.5; tau < 30.0; tau += 0.5) {
    const double a = auc_pose(sample, tau);
    CHECK(a >= previous - 1e-15);
    previous = a;
  }
}

TEST_CASE("rra and rta") {
  std::mt19937_64 rng(4);
  const auto gt = random_states(rng, 3);
  const RraRta same = rra_rta(gt, gt, 5.0);
  CHECK(same.rra == 100.0);
  CHECK(same.rta == 100.0);
  CHECK(same.pairs == 3);

  auto est = gt;
  const Eigen::Vector3d c = est[2].pose.center();
  const Eigen::Matrix3d r = Eigen::AngleAxisd(10.0 * M_PI / 180.0, Eigen::Vector3d::UnitY()).toRotationMatrix() *
                            est[2].pose.rotation();
  est[2].pose = CameraPose::from_rotation(r, -r * c);
  CHECK(rra_rta(est, gt, 5.0).rra == doctest::Approx(100.0 / 3.0));

  std::map<int, FrameState> one{{0, gt.at(0)}};
  CHECK_THROWS_AS(rra_rta(one, gt, 5.0), Error);
}

TEST_CASE("relative errors are invariant under global similarities") {
  std::mt19937_64 rng(6);
  const auto gt = random_states(rng, 6);
  auto est = gt;
  for (auto& [id, s] : est) {
    const Eigen::Matrix3d r = testing::random_rotation(rng, 0.05) * s.pose.rotation();
    s.pose = CameraPose::from_rotation(r, s.pose.translation + testing::random_vector(rng, 0.1));
  }
  const auto base = relative_pose_errors(est, gt);
  for (int trial = 0; trial < 100; ++trial) {
    const auto moved = relative_pose_errors(transformed(est, random_similarity(rng)), gt);
    REQUIRE(moved.size() == base.size());
    for (std::size_t k = 0; k < base.size(); ++k) {
      CHECK(std::abs(moved[k].rotation_deg - base[k].rotation_deg) < 1e-9);
      CHECK(std::abs(moved[k].translation_deg - base[k].translation_deg) < 1e-9);
    }
  }
}

TEST_CASE("ate") {
  std::mt19937_64 rng(8);
  std::vector<Eigen::Vector3d> gt(200);
  for (auto& p : gt) p = testing::random_vector(rng, 3.0);
  CHECK(ate(gt, gt).ate < 1e-12);

  Similarity g;
  g.scale = 7.0;
  g.rotation = testing::random_rotation(rng);
  g.translation = Eigen::Vector3d(1, 2, 3);
  std::vector<Eigen::Vector3d> est;
  for (const auto& p : gt) est.push_back(g.apply(p));
  const AteResult a = ate(est, gt);
  CHECK(a.ate < 1e-9);
  CHECK(a.alignment.scale == doctest::Approx(1.0 / 7.0));

  // One displaced center: rmse ~ d / sqrt(N), normalized by the diameter.
  std::vector<Eigen::Vector3d> displaced = gt;
  const double diameter = trajectory_diameter(gt);
  const double d = 0.01 * diameter;
  displaced[17] += Eigen::Vector3d(d, 0, 0);
  const double expected = d / (diameter * std::sqrt(200.0));
  CHECK(ate(displaced, gt).ate == doctest::Approx(expected).epsilon(0.05));

  std::vector<Eigen::Vector3d> line;
  for (int k = 0; k < 5; ++k) line.push_back(Eigen::Vector3d(k, 0, 0));
  CHECK(ate(line, line).degenerate);
  CHECK_FALSE(ate(gt, gt).degenerate);

  CHECK_THROWS_AS(ate(std::vector<Eigen::Vector3d>(2), std::vector<Eigen::Vector3d>(2)), Error);
}

TEST_CASE("umeyama recovers a similarity") {
  std::mt19937_64 rng(10);
  for (int trial = 0; trial < 20; ++trial) {
    const Similarity g = random_similarity(rng);
    std::vector<Eigen::Vector3d> src(10), dst;
    for (auto& p : src) {
      p = testing::random_vector(rng, 2.0);
      dst.push_back(g.apply(p));
    }
    const Similarity s = umeyama_alignment(src, dst);
    CHECK(s.scale == doctest::Approx(g.scale).epsilon(1e-9));
    CHECK((s.rotation - g.rotation).norm() < 1e-9);
    CHECK((s.translation - g.translation).norm() < 1e-8);
  }
}

TEST_CASE("reloc accuracy") {
  std::mt19937_64 rng(12);
  const auto gt = random_states(rng, 4);
  CHECK(reloc_accuracy(gt, gt, 0.1, 5.0) == 100.0);

  auto est = gt;
  const Eigen::Matrix3d r0 = est[1].pose.rotation();
  est[1].pose = CameraPose::from_rotation(r0, -r0 * (est[1].pose.center() + Eigen::Vector3d(0.2, 0, 0)));
  CHECK(reloc_accuracy(est, gt, 0.1, 5.0) == doctest::Approx(75.0));

  auto rotated = gt;
  const Eigen::Vector3d c = rotated[2].pose.center();
  const Eigen::Matrix3d r = Eigen::AngleAxisd(6.0 * M_PI / 180.0, Eigen::Vector3d::UnitX()).toRotationMatrix() *
                            rotated[2].pose.rotation();
  rotated[2].pose = CameraPose::from_rotation(r, -r * c);
  CHECK(reloc_accuracy(rotated, gt, 0.1, 5.0) == doctest::Approx(75.0));
}

TEST_CASE("evaluate_poses summary") {
  std::mt19937_64 rng(14);
  const auto gt = random_states(rng, 5);
  auto est = gt;
  est.erase(4);
  const MetricReport m = evaluate_poses(est, gt, 5.0);
  CHECK(m.frames_total == 5);
  CHECK(m.frames_registered == 4);
  CHECK(m.registration_rate == doctest::Approx(80.0));
  CHECK(m.pairs == 6);
  CHECK(m.rra == 100.0);
  CHECK(m.acc == 100.0);
  CHECK(m.auc == doctest::Approx(1.0));
  CHECK(m.has_ate);
  CHECK(m.ate < 1e-9);
}
