#include <cstring>

#include "doctest.h"
#include "mba/error.hpp"
#include "mba/relocalization.hpp"
#include "mba/synthetic.hpp"
#include "test_support.hpp"

using namespace mba;

namespace {

const SyntheticScene& scene() {
  static const SyntheticScene s = [] {
    SyntheticConfig c;
    c.frame_count = 12;
    c.width = 64;
    c.height = 48;
    c.focal = 55.0;
    c.min_pair_matches = 20;
    c.corr_noise_px = 0.5;
    return generate_scene(c);
  }();
  return s;
}

RelocConfig small_config(bool query_query) {
  RelocConfig c;
  c.optimizer.iterations_coarse = 300;
  c.optimizer.iterations_fine = 300;
  c.optimizer.progress_interval = 0;
  c.query_query_edges = query_query;
  return c;
}

// Frames with id % 3 == 1 become queries; the rest form the map at ground truth.
RelocProblem split(const SyntheticScene& s) {
  RelocProblem p;
  for (const FrameState& f : s.truth) {
    if (f.frame_id % 3 == 1) {
      p.queries.push_back({f.frame_id, s.depths.at(f.frame_id), f.intrinsics});
    } else {
      FrameState m = f;
      m.trainable = Trainable::none();
      p.map_frames[f.frame_id] = m;
      p.map_depths[f.frame_id] = s.depths.at(f.frame_id);
    }
  }
  p.correspondences = s.correspondences;
  return p;
}

bool same_bits(const FrameState& a, const FrameState& b) {
  return std::memcmp(a.pose.rotation_6d.data(), b.pose.rotation_6d.data(), 6 * sizeof(double)) == 0 &&
         std::memcmp(a.pose.translation.data(), b.pose.translation.data(), 3 * sizeof(double)) == 0 &&
         a.intrinsics.focal == b.intrinsics.focal && a.correction.log_alpha == b.correction.log_alpha &&
         a.correction.beta == b.correction.beta;
}

double diameter() {
  std::vector<Eigen::Vector3d> c;
  for (const FrameState& f : scene().truth) c.push_back(f.pose.center());
  return trajectory_diameter(c);
}

}  // namespace

TEST_CASE("queries converge and the map is untouched") {
  const RelocProblem p = split(scene());
  const auto map_before = p.map_frames;
  const RelocResult r = relocalize(p, small_config(true));
  CHECK(r.errors.empty());
  CHECK(r.queries.size() == 4);
  const auto truth = scene().truth_map();
  for (const auto& [id, q] : r.queries) {
    CHECK(r.success.at(id));
    CHECK(rotation_angle_deg(q.pose.rotation() * truth.at(id).pose.rotation().transpose()) < 1.0);
    CHECK((q.pose.center() - truth.at(id).pose.center()).norm() < 0.02 * diameter());
    CHECK(q.intrinsics.focal == truth.at(id).intrinsics.focal);
  }
  for (const auto& [id, m] : p.map_frames) CHECK(same_bits(m, map_before.at(id)));
}

TEST_CASE("without query-query edges queries are independent") {
  const RelocProblem all = split(scene());
  RelocProblem fewer = all;
  fewer.queries.resize(2);
  const RelocResult a = relocalize(all, small_config(false));
  const RelocResult b = relocalize(fewer, small_config(false));
  for (const auto& [id, q] : b.queries) CHECK(same_bits(q, a.queries.at(id)));
}

TEST_CASE("query duplicating a map frame") {
  const SyntheticScene& s = scene();
  RelocProblem p = split(s);
  p.queries.clear();
  const int twin = 6;
  const int query = 100;
  const FrameState& g = s.truth[twin];
  p.queries.push_back({query, s.depths.at(twin), g.intrinsics});
  std::vector<CorrespondenceSet> extra;
  for (const CorrespondenceSet& set : s.correspondences) {
    if (set.frame_i == twin && p.map_frames.count(set.frame_j)) {
      CorrespondenceSet c = set;
      c.frame_i = query;
      extra.push_back(c);
    }
    if (set.frame_j == twin && p.map_frames.count(set.frame_i)) {
      CorrespondenceSet c = set;
      c.frame_j = query;
      extra.push_back(c);
    }
  }
  CorrespondenceSet self{query, twin, {}};
  for (int row = 0; row < 48; ++row) {
    for (int col = 0; col < 64; ++col) self.matches.push_back({Eigen::Vector2d(col, row), Eigen::Vector2d(col, row), 0.9});
  }
  extra.push_back(self);
  p.correspondences = extra;
  RelocConfig cfg = small_config(true);
  cfg.optimizer.iterations_coarse = 1000;
  cfg.optimizer.iterations_fine = 1000;
  const RelocResult r = relocalize(p, cfg);
  REQUIRE(r.queries.count(query));
  const FrameState& q = r.queries.at(query);
  CHECK(rotation_angle_deg(q.pose.rotation() * g.pose.rotation().transpose()) < 0.05);
  CHECK((q.pose.center() - g.pose.center()).norm() < 0.002 * diameter());
}

TEST_CASE("unreachable queries are flagged") {
  RelocProblem p = split(scene());
  p.queries.push_back({500, scene().depths.at(0), scene().truth[0].intrinsics});
  const RelocResult r = relocalize(p, small_config(false));
  REQUIRE(r.unreachable.size() == 1);
  CHECK(r.unreachable[0] == 500);
  CHECK_FALSE(r.success.at(500));
  CHECK(r.success.at(1));
  bool flagged = false;
  for (const std::string& e : r.errors) flagged = flagged || e.rfind("QUERY_UNREACHABLE", 0) == 0;
  CHECK(flagged);

  RelocProblem dup = split(scene());
  dup.queries.push_back(dup.queries.front());
  CHECK_THROWS_AS(relocalize(dup, small_config(false)), Error);
}
