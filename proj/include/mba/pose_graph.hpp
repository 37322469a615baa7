#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "mba/depth_map.hpp"
#include "mba/geometry.hpp"

namespace mba {

struct Correspondence {
  Eigen::Vector2d src_pixel = Eigen::Vector2d::Zero();
  Eigen::Vector2d dst_pixel = Eigen::Vector2d::Zero();
  double confidence = 0.0;
};

// Matches from frame_i (source) to frame_j (destination).
struct CorrespondenceSet {
  int frame_i = 0;
  int frame_j = 0;
  std::vector<Correspondence> matches;

  CorrespondenceSet reversed() const;
};

struct FrameSize {
  int width = 0;
  int height = 0;
};

using FramePair = std::pair<int, int>;

// Undirected co-visibility graph over frame ids. Edges are stored with the
// smaller id first.
class PoseGraph {
 public:
  struct Edge {
    int a = 0;
    int b = 0;
    double covisibility = 0.0;
  };

  PoseGraph() = default;
  explicit PoseGraph(std::vector<int> frame_ids);

  void add_edge(int a, int b, double covisibility);

  const std::vector<int>& frames() const { return frames_; }
  int frame_count() const { return static_cast<int>(frames_.size()); }
  std::vector<Edge> edges() const;
  std::size_t edge_count() const { return edges_.size(); }
  bool has_edge(int a, int b) const;
  double covisibility(int a, int b) const;
  // Neighbors in ascending id order.
  const std::vector<int>& neighbors(int frame) const;
  int degree(int frame) const { return static_cast<int>(neighbors(frame).size()); }

  PoseGraph without_edges(std::span<const FramePair> removed) const;

 private:
  std::vector<int> frames_;
  std::map<FramePair, double> edges_;
  std::map<int, std::vector<int>> adjacency_;
};

// covisibility(i, j) = max over both directions of
// |{matches with confidence > chi}| / (source width * source height); the edge
// is kept when covisibility >= nu.
PoseGraph build_pose_graph(std::span<const CorrespondenceSet> correspondences,
                           const std::map<int, FrameSize>& frame_sizes, double nu, double chi);

struct DirectedBlock {
  int src = 0;
  int dst = 0;
  std::vector<DataRecord> records;
};

// kappa records per directed pair, both directions per undirected edge.
struct DataMatrix {
  int kappa = 0;
  std::uint64_t seed = 0;
  std::vector<DirectedBlock> blocks;
  std::vector<FramePair> dropped_edges;
  std::vector<std::string> warnings;

  std::size_t record_count() const;
};

// Looks up the matches of a directed pair, reversing the opposite direction
// when only that one was supplied.
class CorrespondenceIndex {
 public:
  explicit CorrespondenceIndex(std::span<const CorrespondenceSet> sets);
  std::optional<CorrespondenceSet> directed(int src, int dst) const;

 private:
  std::map<FramePair, const CorrespondenceSet*> sets_;
};

// Uniform sampling with replacement among matches with confidence >= chi whose
// source pixel has a valid depth. Edges without any eligible match in either
// direction are dropped and reported as warnings.
DataMatrix sample_data_matrix(const PoseGraph& graph, std::span<const CorrespondenceSet> correspondences,
                              const std::map<int, DepthMap>& depth_maps, int kappa, double chi,
                              std::uint64_t seed);

struct StarSubgraph {
  int center = 0;
  std::vector<int> neighbors;
  std::vector<FramePair> edges;  // (smaller id, larger id)
};

std::vector<StarSubgraph> star_decomposition(const PoseGraph& graph);

struct TreeNode {
  int frame = 0;
  std::optional<int> parent;
};

struct SpanningTree {
  std::vector<TreeNode> order;  // root first; parents always precede children
  std::vector<int> unregistered;

  int root() const { return order.front().frame; }
};

// Greedy registration order over the largest connected component: root is the
// highest-degree node, then repeatedly the frontier node of highest degree,
// parented to its registered neighbor of highest co-visibility. Ties go to the
// lowest frame id.
SpanningTree greedy_spanning_tree(const PoseGraph& graph);

}  // namespace mba
