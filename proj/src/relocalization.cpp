#include "mba/relocalization.hpp"

#include <algorithm>
#include <set>

#include "mba/error.hpp"

namespace mba {

namespace {

std::string describe(const Error& e) { return std::string(error_code_name(e.code())) + ": " + e.what(); }

const DirectedBlock* find_block(const DataMatrix& data, int src, int dst) {
  for (const DirectedBlock& b : data.blocks) {
    if (b.src == src && b.dst == dst) return &b;
  }
  return nullptr;
}

}  // namespace

RelocResult relocalize(const RelocProblem& problem, const RelocConfig& config, const StageControl& control) {
  config.optimizer.validate();
  RelocResult result;
  const OptimizerConfig& opt = config.optimizer;

  std::set<int> query_ids;
  std::map<int, FrameSize> sizes;
  std::map<int, DepthMap> depths = problem.map_depths;
  for (const auto& [id, s] : problem.map_frames) sizes[id] = {s.intrinsics.width, s.intrinsics.height};
  for (const RelocQuery& q : problem.queries) {
    if (problem.map_frames.count(q.frame_id) || !query_ids.insert(q.frame_id).second) {
      throw Error(ErrorCode::kInvalidArgument, "reloc: duplicate frame id " + std::to_string(q.frame_id));
    }
    sizes[q.frame_id] = {q.intrinsics.width, q.intrinsics.height};
    depths[q.frame_id] = q.depth;
  }
  const auto is_query = [&](int id) { return query_ids.count(id) > 0; };

  // Map-map edges carry no trainable parameter and are left out.
  std::vector<int> ids;
  for (const auto& [id, size] : sizes) ids.push_back(id);
  PoseGraph graph(ids);
  for (const PoseGraph::Edge& e : build_pose_graph(problem.correspondences, sizes, config.nu, config.chi).edges()) {
    if (!sizes.count(e.a) || !sizes.count(e.b)) continue;
    const int queries = is_query(e.a) + is_query(e.b);
    if (queries == 0 || (queries == 2 && !config.query_query_edges)) continue;
    graph.add_edge(e.a, e.b, e.covisibility);
  }
  const DataMatrix data = sample_data_matrix(graph, problem.correspondences, depths, config.kappa, config.chi, opt.seed);
  result.warnings = data.warnings;
  const PoseGraph used = graph.without_edges(data.dropped_edges);

  TwoViewOptions two_view = config.two_view;
  two_view.seed = config.two_view.seed ^ opt.seed;
  for (const RelocQuery& q : problem.queries) {
    std::vector<int> anchors;
    for (const int n : used.neighbors(q.frame_id)) {
      if (!is_query(n)) anchors.push_back(n);
    }
    result.success[q.frame_id] = false;
    if (anchors.empty()) {
      result.unreachable.push_back(q.frame_id);
      result.errors.push_back("QUERY_UNREACHABLE: query " + std::to_string(q.frame_id) + " has no edge to the map");
      continue;
    }
    std::stable_sort(anchors.begin(), anchors.end(), [&](int a, int b) {
      return used.covisibility(q.frame_id, a) > used.covisibility(q.frame_id, b);
    });
    FrameState seed;
    seed.frame_id = q.frame_id;
    seed.intrinsics = q.intrinsics;
    std::string last_error;
    for (const int anchor : anchors) {
      const DirectedBlock* fwd = find_block(data, anchor, q.frame_id);
      const DirectedBlock* bwd = find_block(data, q.frame_id, anchor);
      if (!fwd || !bwd) continue;
      try {
        FrameState s = register_from_parent(problem.map_frames.at(anchor), seed, *fwd, *bwd, two_view);
        s.trainable = Trainable{true, false, true, true};
        result.queries[q.frame_id] = s;
        break;
      } catch (const Error& e) {
        last_error = describe(e);
      }
    }
    if (!result.queries.count(q.frame_id)) {
      result.errors.push_back("REGISTRATION_FAILURE: query " + std::to_string(q.frame_id) + ": " + last_error);
    }
  }

  // Optimization groups: one per query, or all queries jointly.
  std::vector<std::vector<int>> groups;
  if (config.query_query_edges) {
    groups.emplace_back();
    for (const auto& [id, s] : result.queries) groups.back().push_back(id);
  } else {
    for (const auto& [id, s] : result.queries) groups.push_back({id});
  }

  for (const std::vector<int>& group : groups) {
    if (group.empty() || result.cancelled) continue;
    std::map<int, FrameState> states;
    for (const int id : group) states[id] = result.queries.at(id);
    for (const int id : group) {
      for (const int n : used.neighbors(id)) {
        if (is_query(n)) continue;
        FrameState m = problem.map_frames.at(n);
        m.trainable = Trainable::none();
        states[n] = m;
      }
    }
    std::vector<int> members;
    for (const auto& [id, s] : states) members.push_back(id);
    PoseGraph sub(members);
    for (const PoseGraph::Edge& e : used.edges()) {
      if (states.count(e.a) && states.count(e.b)) sub.add_edge(e.a, e.b, e.covisibility);
    }
    const std::vector<StarSubgraph> stars = star_decomposition(sub);

    bool ok = true;
    try {
      result.coarse.push_back(coarse_stage(states, data, stars, opt, control));
      result.cancelled = result.coarse.back().cancelled;
      if (!result.cancelled) {
        result.fine.push_back(fine_stage(states, data, opt, control));
        result.cancelled = result.fine.back().cancelled;
      }
    } catch (const Error& e) {
      ok = false;
      result.errors.push_back(describe(e));
    }
    for (const int id : group) {
      result.queries[id] = states.at(id);
      result.success[id] = ok && !result.cancelled;
    }
  }
  return result;
}

}  // namespace mba
