#include "mba/pose_graph.hpp"

#include <algorithm>
#include <random>
#include <set>
#include <string>

#include "mba/error.hpp"

namespace mba {

namespace {

FramePair ordered(int a, int b) { return a < b ? FramePair{a, b} : FramePair{b, a}; }

const std::vector<int>& empty_neighbors() {
  static const std::vector<int> none;
  return none;
}

}  // namespace

CorrespondenceSet CorrespondenceSet::reversed() const {
  CorrespondenceSet out;
  out.frame_i = frame_j;
  out.frame_j = frame_i;
  out.matches.reserve(matches.size());
  for (const Correspondence& m : matches) out.matches.push_back({m.dst_pixel, m.src_pixel, m.confidence});
  return out;
}

PoseGraph::PoseGraph(std::vector<int> frame_ids) : frames_(std::move(frame_ids)) {
  std::sort(frames_.begin(), frames_.end());
  if (std::adjacent_find(frames_.begin(), frames_.end()) != frames_.end()) {
    throw Error(ErrorCode::kInvalidArgument, "pose graph: duplicate frame id");
  }
  for (const int f : frames_) adjacency_[f];
}

void PoseGraph::add_edge(int a, int b, double covisibility) {
  if (a == b) throw Error(ErrorCode::kInvalidArgument, "pose graph: self-loop");
  if (!adjacency_.count(a) || !adjacency_.count(b)) {
    throw Error(ErrorCode::kInvalidArgument, "pose graph: edge references unknown frame");
  }
  const FramePair key = ordered(a, b);
  auto [it, inserted] = edges_.emplace(key, covisibility);
  if (!inserted) {
    it->second = std::max(it->second, covisibility);
    return;
  }
  for (auto [u, v] : {FramePair{a, b}, FramePair{b, a}}) {
    auto& list = adjacency_[u];
    list.insert(std::upper_bound(list.begin(), list.end(), v), v);
  }
}

std::vector<PoseGraph::Edge> PoseGraph::edges() const {
  std::vector<Edge> out;
  out.reserve(edges_.size());
  for (const auto& [key, covis] : edges_) out.push_back({key.first, key.second, covis});
  return out;
}

bool PoseGraph::has_edge(int a, int b) const { return edges_.count(ordered(a, b)) > 0; }

double PoseGraph::covisibility(int a, int b) const {
  const auto it = edges_.find(ordered(a, b));
  return it == edges_.end() ? 0.0 : it->second;
}

const std::vector<int>& PoseGraph::neighbors(int frame) const {
  const auto it = adjacency_.find(frame);
  return it == adjacency_.end() ? empty_neighbors() : it->second;
}

PoseGraph PoseGraph::without_edges(std::span<const FramePair> removed) const {
  std::set<FramePair> drop;
  for (const auto& [a, b] : removed) drop.insert(ordered(a, b));
  PoseGraph out(frames_);
  for (const auto& [key, covis] : edges_) {
    if (!drop.count(key)) out.add_edge(key.first, key.second, covis);
  }
  return out;
}

PoseGraph build_pose_graph(std::span<const CorrespondenceSet> correspondences,
                           const std::map<int, FrameSize>& frame_sizes, double nu, double chi) {
  std::vector<int> ids;
  for (const auto& [id, size] : frame_sizes) ids.push_back(id);
  PoseGraph graph(ids);

  std::map<FramePair, double> covis;
  for (const CorrespondenceSet& set : correspondences) {
    if (set.frame_i == set.frame_j) continue;
    const auto src = frame_sizes.find(set.frame_i);
    if (src == frame_sizes.end() || !frame_sizes.count(set.frame_j)) continue;
    const double pixels = static_cast<double>(src->second.width) * static_cast<double>(src->second.height);
    if (!(pixels > 0.0)) continue;
    const auto confident = std::count_if(set.matches.begin(), set.matches.end(),
                                         [chi](const Correspondence& m) { return m.confidence > chi; });
    const double ratio = static_cast<double>(confident) / pixels;
    double& slot = covis[ordered(set.frame_i, set.frame_j)];
    slot = std::max(slot, ratio);
  }
  for (const auto& [key, value] : covis) {
    if (value >= nu && value > 0.0) graph.add_edge(key.first, key.second, value);
  }
  return graph;
}

std::size_t DataMatrix::record_count() const {
  std::size_t n = 0;
  for (const DirectedBlock& b : blocks) n += b.records.size();
  return n;
}

CorrespondenceIndex::CorrespondenceIndex(std::span<const CorrespondenceSet> sets) {
  for (const CorrespondenceSet& s : sets) sets_.emplace(FramePair{s.frame_i, s.frame_j}, &s);
}

std::optional<CorrespondenceSet> CorrespondenceIndex::directed(int src, int dst) const {
  if (const auto it = sets_.find({src, dst}); it != sets_.end()) return *it->second;
  if (const auto it = sets_.find({dst, src}); it != sets_.end()) return it->second->reversed();
  return std::nullopt;
}

namespace {

std::vector<DataRecord> eligible_records(const std::optional<CorrespondenceSet>& set, const DepthMap* depth,
                                         double chi) {
  std::vector<DataRecord> out;
  if (!set || depth == nullptr) return out;
  for (const Correspondence& m : set->matches) {
    if (!(m.confidence >= chi)) continue;
    const double d = depth->sample_nearest(m.src_pixel);
    if (!std::isfinite(d)) continue;
    out.push_back({m.src_pixel, m.dst_pixel, d});
  }
  return out;
}

std::vector<DataRecord> draw(const std::vector<DataRecord>& pool, int kappa, std::uint64_t seed, int src,
                             int dst) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(src), static_cast<std::uint32_t>(dst)};
  std::mt19937_64 rng(seq);
  std::uniform_int_distribution<std::size_t> pick(0, pool.size() - 1);
  std::vector<DataRecord> out;
  out.reserve(static_cast<std::size_t>(kappa));
  for (int k = 0; k < kappa; ++k) out.push_back(pool[pick(rng)]);
  return out;
}

}  // namespace

DataMatrix sample_data_matrix(const PoseGraph& graph, std::span<const CorrespondenceSet> correspondences,
                              const std::map<int, DepthMap>& depth_maps, int kappa, double chi,
                              std::uint64_t seed) {
  if (kappa < 1) throw Error(ErrorCode::kInvalidArgument, "data matrix: kappa must be >= 1");
  DataMatrix dm;
  dm.kappa = kappa;
  dm.seed = seed;
  const CorrespondenceIndex index(correspondences);
  const auto depth_of = [&](int frame) -> const DepthMap* {
    const auto it = depth_maps.find(frame);
    return it == depth_maps.end() ? nullptr : &it->second;
  };

  for (const PoseGraph::Edge& e : graph.edges()) {
    const auto forward = eligible_records(index.directed(e.a, e.b), depth_of(e.a), chi);
    const auto backward = eligible_records(index.directed(e.b, e.a), depth_of(e.b), chi);
    if (forward.empty() || backward.empty()) {
      dm.dropped_edges.push_back({e.a, e.b});
      dm.warnings.push_back("NO_VALID_SAMPLES: edge (" + std::to_string(e.a) + ", " + std::to_string(e.b) +
                            ") has no eligible correspondence and was dropped");
      continue;
    }
    dm.blocks.push_back({e.a, e.b, draw(forward, kappa, seed, e.a, e.b)});
    dm.blocks.push_back({e.b, e.a, draw(backward, kappa, seed, e.b, e.a)});
  }
  return dm;
}

std::vector<StarSubgraph> star_decomposition(const PoseGraph& graph) {
  std::vector<StarSubgraph> stars;
  stars.reserve(graph.frames().size());
  for (const int f : graph.frames()) {
    StarSubgraph s;
    s.center = f;
    s.neighbors = graph.neighbors(f);
    for (const int n : s.neighbors) s.edges.push_back(ordered(f, n));
    stars.push_back(std::move(s));
  }
  return stars;
}

SpanningTree greedy_spanning_tree(const PoseGraph& graph) {
  SpanningTree tree;
  if (graph.frames().empty()) return tree;

  // Connected components in ascending id order of their smallest member.
  std::map<int, int> component;
  std::vector<std::vector<int>> members;
  for (const int f : graph.frames()) {
    if (component.count(f)) continue;
    const int c = static_cast<int>(members.size());
    members.emplace_back();
    std::vector<int> stack{f};
    component[f] = c;
    while (!stack.empty()) {
      const int u = stack.back();
      stack.pop_back();
      members[c].push_back(u);
      for (const int v : graph.neighbors(u)) {
        if (component.emplace(v, c).second) stack.push_back(v);
      }
    }
  }
  int largest = 0;
  for (int c = 1; c < static_cast<int>(members.size()); ++c) {
    if (members[c].size() > members[largest].size()) largest = c;
  }

  // Higher degree first, then lower id.
  const auto better = [&](int a, int b) {
    const int da = graph.degree(a);
    const int db = graph.degree(b);
    return da != db ? da > db : a < b;
  };

  std::vector<int> comp = members[largest];
  std::sort(comp.begin(), comp.end());
  int root = comp.front();
  for (const int f : comp) {
    if (better(f, root)) root = f;
  }

  std::set<int> registered{root};
  tree.order.push_back({root, std::nullopt});
  std::set<int> frontier(graph.neighbors(root).begin(), graph.neighbors(root).end());
  while (!frontier.empty()) {
    int next = *frontier.begin();
    for (const int f : frontier) {
      if (better(f, next)) next = f;
    }
    int parent = -1;
    double best_covis = -1.0;
    for (const int n : graph.neighbors(next)) {
      if (!registered.count(n)) continue;
      const double c = graph.covisibility(next, n);
      if (c > best_covis) {
        best_covis = c;
        parent = n;
      }
    }
    tree.order.push_back({next, parent});
    registered.insert(next);
    frontier.erase(next);
    for (const int n : graph.neighbors(next)) {
      if (!registered.count(n)) frontier.insert(n);
    }
  }

  for (const int f : graph.frames()) {
    if (!registered.count(f)) tree.unregistered.push_back(f);
  }
  return tree;
}

}  // namespace mba
