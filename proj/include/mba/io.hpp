#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "json.hpp"
#include "mba/depth_map.hpp"
#include "mba/geometry.hpp"
#include "mba/histogram.hpp"
#include "mba/pose_graph.hpp"

namespace mba {

namespace fs = std::filesystem;

// Binary layouts (all little-endian):
//   depth        "MBAD" u16 version=1 u16 reserved u32 height u32 width, f32[h*w]
//   pointmap     "MBAP" u16 version=1 u16 reserved u32 height u32 width, f32[h*w*3]
//   matches      "MBAC" u16 version=1 u16 reserved u32 frame_i u32 frame_j u64 count,
//                count * f32 (u_i, v_i, u_j, v_j, confidence)
// Readers require the file length to match the header exactly.

DepthMap read_depth(const fs::path& path);
void write_depth(const fs::path& path, const DepthMap& depth);

PointMap read_pointmap(const fs::path& path);
void write_pointmap(const fs::path& path, const PointMap& points);

CorrespondenceSet read_correspondences(const fs::path& path);
void write_correspondences(const fs::path& path, const CorrespondenceSet& set);

// In-memory variants used by the file functions; exposed for fuzzing.
DepthMap parse_depth(const std::vector<unsigned char>& bytes);
std::vector<unsigned char> serialize_depth(const DepthMap& depth);
CorrespondenceSet parse_correspondences(const std::vector<unsigned char>& bytes);
std::vector<unsigned char> serialize_correspondences(const CorrespondenceSet& set);
PointMap parse_pointmap(const std::vector<unsigned char>& bytes);
std::vector<unsigned char> serialize_pointmap(const PointMap& points);

struct ManifestIntrinsics {
  double focal = 0.0;
  double cx = 0.0;
  double cy = 0.0;
};

struct ManifestFrame {
  int frame_id = 0;
  int width = 0;
  int height = 0;
  std::string depth_path;
  std::optional<std::string> pointmap_path;
  std::optional<ManifestIntrinsics> intrinsics;
};

struct ManifestPair {
  int i = 0;
  int j = 0;
  std::string correspondence_path;
};

struct SceneManifest {
  std::vector<ManifestFrame> frames;
  std::vector<ManifestPair> pairs;
  bool shared_intrinsics = false;
  fs::path base_dir;  // relative paths resolve against this directory

  fs::path resolve(const std::string& relative) const;
};

// Validates unique frame ids and that pairs reference known frames.
SceneManifest read_manifest(const fs::path& path);
void write_manifest(const fs::path& path, const SceneManifest& manifest);

struct ResultFrame {
  int frame_id = 0;
  bool registered = false;
  Eigen::Matrix3d rotation = Eigen::Matrix3d::Identity();  // world-to-camera
  Eigen::Vector3d translation = Eigen::Vector3d::Zero();
  double focal = 0.0;
  double cx = 0.0;
  double cy = 0.0;
  int width = 0;
  int height = 0;
  double alpha = 1.0;
  double beta = 0.0;

  static ResultFrame from_state(const FrameState& state, bool registered);
  FrameState to_state() const;
};

struct ResultDocument {
  std::vector<ResultFrame> frames;
  nlohmann::json metadata = nlohmann::json::object();

  const ResultFrame* find(int frame_id) const;
};

// JSON with shortest round-trip doubles; unregistered frames omit their pose
// and depth correction.
std::string result_to_string(const ResultDocument& doc);
ResultDocument result_from_string(const std::string& text);
void write_result(const fs::path& path, const ResultDocument& doc);
ResultDocument read_result(const fs::path& path);

// Columns: bin, lower, upper, count, cumulative, cdf.
void write_histogram_csv(const fs::path& path, const ResidualHistogram& histogram);

// ASCII PLY of every valid depth pixel on a stride grid, back-projected with
// the corrected depth and moved to world coordinates. Grayscale color from the
// normalized depth. Frames without a state are skipped.
void export_ply(const fs::path& path, const std::map<int, FrameState>& states, const std::map<int, DepthMap>& depths,
                int stride);

std::vector<unsigned char> read_file_bytes(const fs::path& path);
void write_file_bytes(const fs::path& path, const std::vector<unsigned char>& bytes);

}  // namespace mba
