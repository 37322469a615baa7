#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "mba/depth_map.hpp"
#include "mba/evaluation.hpp"
#include "mba/geometry.hpp"
#include "mba/pose_graph.hpp"

namespace mba {

enum class Trajectory { kOrbit, kLine, kRandomInsideSphere };
enum class Surface { kPlane, kSinusoidHeightfield };
enum class OutlierMode { kUniformPixel, kWrongFrame };

struct SyntheticConfig {
  int frame_count = 20;
  int width = 256;
  int height = 192;
  double focal = 220.0;
  Trajectory trajectory = Trajectory::kOrbit;
  Surface surface = Surface::kSinusoidHeightfield;
  double depth_noise_sigma = 0.0;  // relative, multiplies the true depth
  std::pair<double, double> alpha_range{0.8, 1.2};
  std::pair<double, double> beta_range{-0.05, 0.05};  // fraction of the depth scale
  double corr_noise_px = 0.0;
  double outlier_fraction = 0.0;
  OutlierMode outlier_mode = OutlierMode::kUniformPixel;
  std::uint64_t seed = 0;
  int grid_stride = 1;         // source pixels sampled for correspondences
  int min_pair_matches = 100;  // directed pairs with fewer matches are not emitted
  bool write_intrinsics = false;
};

SyntheticConfig synthetic_config_from_json(const nlohmann::json& j);
nlohmann::json synthetic_config_to_json(const SyntheticConfig& config);

struct SyntheticScene {
  SyntheticConfig config;
  std::vector<FrameState> truth;                   // frame ids 0..N-1
  std::map<int, DepthMap> depths;                  // published, affine-distorted
  std::map<int, std::vector<double>> true_depths;  // exact camera z, NaN where the ray missed
  std::map<int, PointMap> pointmaps;               // published depth times (x/z, y/z, 1)
  std::vector<CorrespondenceSet> correspondences;  // both directions of each pair
  double depth_scale = 1.0;                        // mean true depth over all hits

  std::map<int, FrameState> truth_map() const;
  std::map<int, FrameSize> frame_sizes() const;
};

// Throws InvalidArgument for malformed configs and ConfigInfeasible when a
// camera sees the surface in fewer than 80% of its pixels.
SyntheticScene generate_scene(const SyntheticConfig& config);

// Writes depth_NNN.mbad, points_NNN.mbap, corr_III_JJJ.mbac, manifest.json and
// truth.json into `dir` (created if needed).
void write_scene(const SyntheticScene& scene, const std::filesystem::path& dir);

struct FrameOracleError {
  int frame_id = 0;
  double rotation_deg = 0.0;
  double center_error = 0.0;  // ground-truth units
  double alpha_error = 0.0;   // relative to the true alpha
  double beta_error = 0.0;    // fraction of the depth scale
};

struct OracleReport {
  bool aligned = false;
  std::string message;
  Similarity alignment;  // estimate -> ground truth
  std::vector<FrameOracleError> frames;
  double max_rotation_deg = 0.0;
  double max_center_error = 0.0;
  double max_alpha_error = 0.0;
  double max_beta_error = 0.0;
};

// Compares estimated states with the scene's ground truth after aligning the
// estimated camera centers to the true ones. Depth corrections are compared
// after multiplying by the alignment scale. With fewer than three common
// frames the report is returned unaligned and empty.
OracleReport oracle_metrics(const SyntheticScene& scene, const std::map<int, FrameState>& states);
OracleReport oracle_metrics(const std::map<int, FrameState>& truth, double depth_scale,
                            const std::map<int, FrameState>& states);

}  // namespace mba
