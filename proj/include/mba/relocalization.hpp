#pragma once

#include <map>
#include <string>
#include <vector>

#include "mba/depth_map.hpp"
#include "mba/geometry.hpp"
#include "mba/initialization.hpp"
#include "mba/pose_graph.hpp"
#include "mba/solver.hpp"

namespace mba {

struct RelocQuery {
  int frame_id = 0;
  DepthMap depth;
  CameraIntrinsics intrinsics;  // known, kept fixed
};

struct RelocProblem {
  std::map<int, FrameState> map_frames;  // registered map; never modified
  std::map<int, DepthMap> map_depths;
  std::vector<RelocQuery> queries;
  std::vector<CorrespondenceSet> correspondences;  // query-map and query-query
};

struct RelocConfig {
  OptimizerConfig optimizer = [] {
    OptimizerConfig c;
    c.iterations_coarse = 5000;
    c.iterations_fine = 5000;
    return c;
  }();
  int kappa = 200;
  double nu = 0.15;
  double chi = 0.2;
  // Without query-query edges every query is optimized on its own against the
  // map, so its answer does not depend on the other queries.
  bool query_query_edges = true;
  TwoViewOptions two_view;
};

struct RelocResult {
  std::map<int, FrameState> queries;  // initialized queries, optimized
  std::map<int, bool> success;        // per query id
  std::vector<int> unreachable;       // no edge to any map frame
  std::vector<std::string> warnings;
  std::vector<std::string> errors;    // "CODE: message"
  std::vector<StageReport> coarse;    // one per optimized group
  std::vector<StageReport> fine;
  bool cancelled = false;
};

// Initializes each query from its highest co-visibility map frame (falling
// back to the next ones on failure), then runs the coarse and fine stages with
// every map parameter frozen. Unreachable queries are flagged, not fatal.
RelocResult relocalize(const RelocProblem& problem, const RelocConfig& config, const StageControl& control = {});

}  // namespace mba
