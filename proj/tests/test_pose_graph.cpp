#include <algorithm>
#include <map>
#include <random>
#include <set>

#include "doctest.h"
#include "mba/pose_graph.hpp"

using namespace mba;

namespace {

CorrespondenceSet matches(int i, int j, int count, double confidence) {
  CorrespondenceSet s{i, j, {}};
  for (int k = 0; k < count; ++k) {
    s.matches.push_back({Eigen::Vector2d(k % 10, (k / 10) % 10), Eigen::Vector2d(k % 10 + 1, (k / 10) % 10),
                         confidence});
  }
  return s;
}

PoseGraph graph_from(std::vector<int> frames, std::vector<std::pair<int, int>> edges) {
  PoseGraph g(std::move(frames));
  for (const auto& [a, b] : edges) g.add_edge(a, b, 0.5);
  return g;
}

}  // namespace

TEST_CASE("build_pose_graph covisibility") {
  std::map<int, FrameSize> sizes{{0, {10, 10}}, {1, {10, 10}}};
  const std::vector<CorrespondenceSet> full{matches(0, 1, 100, 1.0)};
  const PoseGraph g = build_pose_graph(full, sizes, 1.0, 0.2);
  CHECK(g.has_edge(0, 1));
  CHECK(g.covisibility(1, 0) == doctest::Approx(1.0));

  std::map<int, FrameSize> big{{0, {100, 100}}, {1, {100, 100}}};
  const std::vector<CorrespondenceSet> sparse{matches(0, 1, 1000, 0.9)};
  CHECK(build_pose_graph(sparse, big, 0.15, 0.2).edge_count() == 0);
  CHECK(build_pose_graph(sparse, big, 0.1, 0.2).edge_count() == 1);

  const std::vector<CorrespondenceSet> weak{matches(0, 1, 100, 0.2)};
  CHECK(build_pose_graph(weak, sizes, 0.15, 0.2).edge_count() == 0);

  // Max over directions.
  const std::vector<CorrespondenceSet> both{matches(0, 1, 10, 1.0), matches(1, 0, 40, 1.0)};
  CHECK(build_pose_graph(both, sizes, 0.15, 0.2).covisibility(0, 1) == doctest::Approx(0.4));
}

TEST_CASE("sample_data_matrix") {
  std::map<int, FrameSize> sizes{{0, {10, 10}}, {1, {10, 10}}};
  std::map<int, DepthMap> depths{{0, DepthMap(10, 10, 2.0f)}, {1, DepthMap(10, 10, 3.0f)}};
  CorrespondenceSet one{0, 1, {{Eigen::Vector2d(4, 4), Eigen::Vector2d(5, 5), 0.9}}};
  for (int k = 0; k < 30; ++k) one.matches.push_back({Eigen::Vector2d(1, 1), Eigen::Vector2d(2, 2), 0.1});
  PoseGraph g({0, 1});
  g.add_edge(0, 1, 0.5);
  const std::vector<CorrespondenceSet> sets{one};

  const DataMatrix dm = sample_data_matrix(g, sets, depths, 3, 0.2, 7);
  REQUIRE(dm.blocks.size() == 2);
  CHECK(dm.record_count() == 6);
  for (const DataRecord& r : dm.blocks[0].records) {
    CHECK(r.src_pixel == Eigen::Vector2d(4, 4));
    CHECK(r.src_depth == 2.0);
  }
  // Reverse direction reads frame 1's depth at the destination pixel.
  CHECK(dm.blocks[1].src == 1);
  CHECK(dm.blocks[1].records[0].src_pixel == Eigen::Vector2d(5, 5));
  CHECK(dm.blocks[1].records[0].src_depth == 3.0);

  CorrespondenceSet weak = one;
  for (auto& m : weak.matches) m.confidence = 0.1;
  const std::vector<CorrespondenceSet> weak_sets{weak};
  const DataMatrix dropped = sample_data_matrix(g, weak_sets, depths, 3, 0.2, 7);
  CHECK(dropped.blocks.empty());
  CHECK(dropped.dropped_edges.size() == 1);
  CHECK(dropped.warnings.size() == 1);
}

TEST_CASE("sample_data_matrix is reproducible") {
  std::map<int, DepthMap> depths;
  PoseGraph g({0, 1, 2});
  std::vector<CorrespondenceSet> sets;
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> px(0.0, 19.0);
  for (int f = 0; f < 3; ++f) {
    DepthMap d(20, 20);
    for (float& v : d.values) v = static_cast<float>(1.0 + px(rng));
    depths[f] = d;
  }
  for (const auto& [a, b] : {std::pair{0, 1}, std::pair{1, 2}}) {
    CorrespondenceSet s{a, b, {}};
    for (int k = 0; k < 100; ++k) {
      s.matches.push_back({Eigen::Vector2d(px(rng), px(rng)), Eigen::Vector2d(px(rng), px(rng)), 0.9});
    }
    sets.push_back(s);
    g.add_edge(a, b, 0.5);
  }
  const DataMatrix x = sample_data_matrix(g, sets, depths, 50, 0.2, 99);
  const DataMatrix y = sample_data_matrix(g, sets, depths, 50, 0.2, 99);
  const DataMatrix z = sample_data_matrix(g, sets, depths, 50, 0.2, 100);
  REQUIRE(x.blocks.size() == 4);
  bool differs = false;
  for (std::size_t b = 0; b < x.blocks.size(); ++b) {
    for (std::size_t k = 0; k < 50; ++k) {
      CHECK(x.blocks[b].records[k].src_pixel == y.blocks[b].records[k].src_pixel);
      CHECK(x.blocks[b].records[k].src_depth == y.blocks[b].records[k].src_depth);
      differs |= x.blocks[b].records[k].src_pixel != z.blocks[b].records[k].src_pixel;
    }
  }
  CHECK(differs);
}

TEST_CASE("star decomposition") {
  const PoseGraph path = graph_from({0, 1, 2}, {{0, 1}, {1, 2}});
  const auto stars = star_decomposition(path);
  REQUIRE(stars.size() == 3);
  CHECK(stars[1].edges == std::vector<FramePair>{{0, 1}, {1, 2}});
  CHECK(stars[0].edges == std::vector<FramePair>{{0, 1}});
  CHECK(stars[2].edges == std::vector<FramePair>{{1, 2}});

  const PoseGraph isolated = graph_from({0, 1, 2}, {{0, 1}});
  CHECK(star_decomposition(isolated)[2].edges.empty());

  const PoseGraph k4 = graph_from({0, 1, 2, 3}, {{0, 1}, {0, 2}, {0, 3}, {1, 2}, {1, 3}, {2, 3}});
  std::map<FramePair, int> appearances;
  for (const auto& s : star_decomposition(k4)) {
    CHECK(s.edges.size() == 3);
    for (const auto& e : s.edges) ++appearances[e];
  }
  CHECK(appearances.size() == 6);
  for (const auto& [e, n] : appearances) CHECK(n == 2);
}

TEST_CASE("greedy spanning tree") {
  const PoseGraph star = graph_from({0, 1, 2, 3, 4}, {{2, 0}, {2, 1}, {2, 3}, {2, 4}});
  const SpanningTree st = greedy_spanning_tree(star);
  REQUIRE(st.order.size() == 5);
  CHECK(st.root() == 2);
  for (std::size_t k = 1; k < 5; ++k) CHECK(*st.order[k].parent == 2);
  CHECK(st.order[1].frame == 0);
  CHECK(st.order[4].frame == 4);

  // A=0 (deg 3), B=1, C=2 (deg 2), D=3 (deg 1).
  const PoseGraph hand = graph_from({0, 1, 2, 3}, {{0, 1}, {0, 2}, {0, 3}, {1, 2}});
  const SpanningTree ht = greedy_spanning_tree(hand);
  REQUIRE(ht.order.size() == 4);
  CHECK(ht.order[0].frame == 0);
  CHECK(ht.order[1].frame == 1);
  CHECK(ht.order[2].frame == 2);
  CHECK(ht.order[3].frame == 3);

  const PoseGraph split = graph_from({0, 1, 2, 3, 4}, {{0, 1}, {2, 3}, {3, 4}});
  const SpanningTree sp = greedy_spanning_tree(split);
  CHECK(sp.order.size() == 3);
  CHECK(sp.root() == 3);
  CHECK(sp.unregistered == std::vector<int>{0, 1});
}

TEST_CASE("spanning tree parents precede children on random graphs") {
  std::mt19937_64 rng(8);
  std::bernoulli_distribution coin(0.2);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<int> frames(12);
    for (int k = 0; k < 12; ++k) frames[k] = 3 * k + 1;
    PoseGraph g(frames);
    for (int a = 0; a < 12; ++a) {
      for (int b = a + 1; b < 12; ++b) {
        if (coin(rng)) g.add_edge(frames[a], frames[b], std::uniform_real_distribution<double>(0.2, 1)(rng));
      }
    }
    const SpanningTree t = greedy_spanning_tree(g);
    std::set<int> seen;
    for (const TreeNode& n : t.order) {
      if (n.parent) {
        CHECK(seen.count(*n.parent) == 1);
        CHECK(g.has_edge(n.frame, *n.parent));
      }
      seen.insert(n.frame);
    }
    CHECK(seen.size() + t.unregistered.size() == 12);
    for (const int u : t.unregistered) {
      for (const int n : g.neighbors(u)) CHECK(seen.count(n) == 0);
    }
  }
}
