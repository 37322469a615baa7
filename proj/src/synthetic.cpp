#include "mba/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <random>

#include "mba/error.hpp"
#include "mba/io.hpp"

namespace mba {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();
constexpr double kWaveAmplitude = 1.0;
constexpr double kWaveNumber = 1.5;
constexpr double kBowl = 0.08;
constexpr double kMarchStep = 0.05;
constexpr double kMarchLimit = 60.0;
constexpr double kOcclusionTolerance = 0.01;
constexpr double kMinVisibleFraction = 0.8;
// Scenes are laid out in the units below and then shrunk uniformly so that
// typical depths are of order one.
constexpr double kWorldScale = 0.25;

double surface_height(Surface surface, double x, double y) {
  if (surface == Surface::kPlane) return 0.0;
  return kWaveAmplitude * std::sin(kWaveNumber * x) * std::cos(kWaveNumber * y) + kBowl * (x * x + y * y);
}

// Ray parameter s of the first hit of c + s d with the surface. With d scaled
// to unit camera z, s is the camera-frame depth of the hit.
double cast_ray(Surface surface, const Eigen::Vector3d& c, const Eigen::Vector3d& d) {
  const auto gap = [&](double s) {
    const Eigen::Vector3d p = c + s * d;
    return p.z() - surface_height(surface, p.x(), p.y());
  };
  if (surface == Surface::kPlane) {
    if (!(d.z() < 0.0)) return kNaN;
    return -c.z() / d.z();
  }
  if (!(gap(0.0) > 0.0)) return kNaN;
  double lo = 0.0;
  for (double hi = kMarchStep; hi <= kMarchLimit; hi += kMarchStep) {
    if (gap(hi) <= 0.0) {
      for (int it = 0; it < 60; ++it) {
        const double mid = 0.5 * (lo + hi);
        (gap(mid) > 0.0 ? lo : hi) = mid;
      }
      return 0.5 * (lo + hi);
    }
    lo = hi;
  }
  return kNaN;
}

Eigen::Matrix3d look_at(const Eigen::Vector3d& center, const Eigen::Vector3d& target) {
  const Eigen::Vector3d forward = (target - center).normalized();
  const Eigen::Vector3d right = forward.cross(Eigen::Vector3d::UnitZ()).normalized();
  const Eigen::Vector3d down = forward.cross(right);
  Eigen::Matrix3d r;
  r.row(0) = right;
  r.row(1) = down;
  r.row(2) = forward;
  return r;
}

std::vector<std::pair<Eigen::Vector3d, Eigen::Vector3d>> camera_placements(const SyntheticConfig& cfg,
                                                                           std::mt19937_64& rng) {
  std::vector<std::pair<Eigen::Vector3d, Eigen::Vector3d>> out;
  const int n = cfg.frame_count;
  std::uniform_real_distribution<double> unit(-1.0, 1.0);
  for (int k = 0; k < n; ++k) {
    switch (cfg.trajectory) {
      case Trajectory::kOrbit: {
        const double theta = 2.0 * M_PI * k / n;
        const Eigen::Vector2d dir(std::cos(theta), std::sin(theta));
        out.emplace_back(Eigen::Vector3d(2.5 * dir.x(), 2.5 * dir.y(), 5.0), Eigen::Vector3d(6.0 * dir.x(), 6.0 * dir.y(), 1.5));
        break;
      }
      case Trajectory::kLine: {
        const double x = -2.0 + 4.0 * k / std::max(n - 1, 1);
        out.emplace_back(Eigen::Vector3d(x, -4.0, 5.0), Eigen::Vector3d(x, 0.0, 0.0));
        break;
      }
      case Trajectory::kRandomInsideSphere: {
        Eigen::Vector3d offset;
        do {
          offset = Eigen::Vector3d(unit(rng), unit(rng), unit(rng));
        } while (offset.squaredNorm() > 1.0);
        Eigen::Vector2d aim;
        do {
          aim = Eigen::Vector2d(unit(rng), unit(rng));
        } while (aim.squaredNorm() > 1.0);
        out.emplace_back(Eigen::Vector3d(0.0, -3.0, 5.0) + 1.5 * offset, Eigen::Vector3d(0.5 * aim.x(), 0.5 * aim.y(), 0.0));
        break;
      }
    }
  }
  return out;
}

void validate(const SyntheticConfig& cfg) {
  const auto bad = [](const std::string& what) { throw Error(ErrorCode::kInvalidArgument, "synthetic config: " + what); };
  if (cfg.frame_count < 2) bad("frame_count must be at least 2");
  if (cfg.width < 8 || cfg.height < 8) bad("image_size must be at least 8x8");
  if (!(cfg.focal > 0.0)) bad("focal_true must be positive");
  if (!(cfg.outlier_fraction >= 0.0 && cfg.outlier_fraction < 1.0)) bad("outlier_fraction must lie in [0, 1)");
  if (!(cfg.alpha_range.first > 0.0 && cfg.alpha_range.first <= cfg.alpha_range.second)) bad("bad affine_alpha_range");
  if (!(cfg.beta_range.first <= cfg.beta_range.second)) bad("bad affine_beta_range");
  if (!(cfg.depth_noise_sigma >= 0.0) || !(cfg.corr_noise_px >= 0.0)) bad("noise levels must be non-negative");
  if (cfg.grid_stride < 1) bad("grid_stride must be positive");
  if (cfg.min_pair_matches < 1) bad("min_pair_matches must be positive");
}

// Bilinear true depth at a pixel; NaN when any tap is a miss or outside.
double bilinear_depth(const std::vector<double>& depth, int width, int height, const Eigen::Vector2d& p) {
  const int c0 = static_cast<int>(std::floor(p.x()));
  const int r0 = static_cast<int>(std::floor(p.y()));
  if (c0 < 0 || r0 < 0 || c0 >= width || r0 >= height) return kNaN;
  const int c1 = std::min(c0 + 1, width - 1);
  const int r1 = std::min(r0 + 1, height - 1);
  const double fx = p.x() - c0;
  const double fy = p.y() - r0;
  const auto at = [&](int r, int c) { return depth[static_cast<std::size_t>(r) * width + c]; };
  return (1 - fy) * ((1 - fx) * at(r0, c0) + fx * at(r0, c1)) + fy * ((1 - fx) * at(r1, c0) + fx * at(r1, c1));
}

template <typename E>
E parse_enum(const nlohmann::json& j, const char* key, std::initializer_list<std::pair<const char*, E>> options) {
  const std::string name = j.at(key).get<std::string>();
  for (const auto& [text, value] : options) {
    if (name == text) return value;
  }
  throw Error(ErrorCode::kParseError, std::string("synthetic config: unknown ") + key + " '" + name + "'");
}

const char* trajectory_name(Trajectory t) {
  switch (t) {
    case Trajectory::kOrbit: return "orbit";
    case Trajectory::kLine: return "line";
    case Trajectory::kRandomInsideSphere: return "random_inside_sphere";
  }
  return "orbit";
}

const char* surface_name(Surface s) { return s == Surface::kPlane ? "plane" : "sinusoid_heightfield"; }
const char* outlier_mode_name(OutlierMode m) { return m == OutlierMode::kUniformPixel ? "uniform_pixel" : "wrong_frame"; }

std::string numbered(const char* prefix, int id, const char* suffix) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%s%03d%s", prefix, id, suffix);
  return buf;
}

}  // namespace

SyntheticConfig synthetic_config_from_json(const nlohmann::json& j) {
  static const std::vector<std::string> known = {
      "frame_count",      "image_size",         "focal_true", "trajectory",    "surface",
      "depth_noise_sigma", "affine_alpha_range", "affine_beta_range", "corr_noise_px", "outlier_fraction",
      "outlier_mode",     "seed",               "grid_stride", "min_pair_matches", "write_intrinsics"};
  if (!j.is_object()) throw Error(ErrorCode::kParseError, "synthetic config must be a JSON object");
  for (const auto& [key, value] : j.items()) {
    if (std::find(known.begin(), known.end(), key) == known.end()) {
      throw Error(ErrorCode::kParseError, "synthetic config: unknown key '" + key + "'");
    }
  }
  SyntheticConfig c;
  try {
    if (j.contains("frame_count")) c.frame_count = j["frame_count"].get<int>();
    if (j.contains("image_size")) {
      c.width = j["image_size"].at(0).get<int>();
      c.height = j["image_size"].at(1).get<int>();
    }
    if (j.contains("focal_true")) c.focal = j["focal_true"].get<double>();
    if (j.contains("trajectory")) {
      c.trajectory = parse_enum<Trajectory>(j, "trajectory",
                                            {{"orbit", Trajectory::kOrbit},
                                             {"line", Trajectory::kLine},
                                             {"random_inside_sphere", Trajectory::kRandomInsideSphere}});
    }
    if (j.contains("surface")) {
      c.surface = parse_enum<Surface>(
          j, "surface", {{"plane", Surface::kPlane}, {"sinusoid_heightfield", Surface::kSinusoidHeightfield}});
    }
    if (j.contains("depth_noise_sigma")) c.depth_noise_sigma = j["depth_noise_sigma"].get<double>();
    if (j.contains("affine_alpha_range")) {
      c.alpha_range = {j["affine_alpha_range"].at(0).get<double>(), j["affine_alpha_range"].at(1).get<double>()};
    }
    if (j.contains("affine_beta_range")) {
      c.beta_range = {j["affine_beta_range"].at(0).get<double>(), j["affine_beta_range"].at(1).get<double>()};
    }
    if (j.contains("corr_noise_px")) c.corr_noise_px = j["corr_noise_px"].get<double>();
    if (j.contains("outlier_fraction")) c.outlier_fraction = j["outlier_fraction"].get<double>();
    if (j.contains("outlier_mode")) {
      c.outlier_mode = parse_enum<OutlierMode>(
          j, "outlier_mode", {{"uniform_pixel", OutlierMode::kUniformPixel}, {"wrong_frame", OutlierMode::kWrongFrame}});
    }
    if (j.contains("seed")) c.seed = j["seed"].get<std::uint64_t>();
    if (j.contains("grid_stride")) c.grid_stride = j["grid_stride"].get<int>();
    if (j.contains("min_pair_matches")) c.min_pair_matches = j["min_pair_matches"].get<int>();
    if (j.contains("write_intrinsics")) c.write_intrinsics = j["write_intrinsics"].get<bool>();
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kParseError, std::string("synthetic config: ") + e.what());
  }
  return c;
}

nlohmann::json synthetic_config_to_json(const SyntheticConfig& c) {
  return {{"frame_count", c.frame_count},
          {"image_size", {c.width, c.height}},
          {"focal_true", c.focal},
          {"trajectory", trajectory_name(c.trajectory)},
          {"surface", surface_name(c.surface)},
          {"depth_noise_sigma", c.depth_noise_sigma},
          {"affine_alpha_range", {c.alpha_range.first, c.alpha_range.second}},
          {"affine_beta_range", {c.beta_range.first, c.beta_range.second}},
          {"corr_noise_px", c.corr_noise_px},
          {"outlier_fraction", c.outlier_fraction},
          {"outlier_mode", outlier_mode_name(c.outlier_mode)},
          {"seed", c.seed},
          {"grid_stride", c.grid_stride},
          {"min_pair_matches", c.min_pair_matches},
          {"write_intrinsics", c.write_intrinsics}};
}

std::map<int, FrameState> SyntheticScene::truth_map() const {
  std::map<int, FrameState> out;
  for (const FrameState& s : truth) out[s.frame_id] = s;
  return out;
}

std::map<int, FrameSize> SyntheticScene::frame_sizes() const {
  std::map<int, FrameSize> out;
  for (const FrameState& s : truth) out[s.frame_id] = {s.intrinsics.width, s.intrinsics.height};
  return out;
}

SyntheticScene generate_scene(const SyntheticConfig& cfg) {
  validate(cfg);
  SyntheticScene scene;
  scene.config = cfg;
  std::mt19937_64 rng(cfg.seed);
  const int w = cfg.width;
  const int h = cfg.height;
  const std::size_t pixels = static_cast<std::size_t>(w) * h;
  const CameraIntrinsics k = CameraIntrinsics::centered(cfg.focal, w, h);

  // Cameras and exact depth.
  double depth_sum = 0.0;
  std::size_t depth_hits = 0;
  const auto placements = camera_placements(cfg, rng);
  for (int id = 0; id < cfg.frame_count; ++id) {
    const auto& [center, target] = placements[id];
    const Eigen::Matrix3d r = look_at(center, target);
    FrameState s;
    s.frame_id = id;
    s.intrinsics = k;
    s.pose = CameraPose::from_rotation(r, -r * (kWorldScale * center));
    std::vector<double> depth(pixels, kNaN);
    std::size_t hits = 0;
    for (int row = 0; row < h; ++row) {
      for (int col = 0; col < w; ++col) {
        const Eigen::Vector2d xy = k.normalize(Eigen::Vector2d(col, row));
        const Eigen::Vector3d dir = r.transpose() * Eigen::Vector3d(xy.x(), xy.y(), 1.0);
        const double z = kWorldScale * cast_ray(cfg.surface, center, dir);
        if (std::isfinite(z) && z > 0.0) {
          depth[static_cast<std::size_t>(row) * w + col] = z;
          depth_sum += z;
          ++hits;
        }
      }
    }
    if (static_cast<double>(hits) < kMinVisibleFraction * static_cast<double>(pixels)) {
      throw Error(ErrorCode::kConfigInfeasible,
                  "frame " + std::to_string(id) + " sees the surface in only " + std::to_string(hits) + " of " +
                      std::to_string(pixels) + " pixels");
    }
    depth_hits += hits;
    scene.truth.push_back(s);
    scene.true_depths[id] = std::move(depth);
  }
  scene.depth_scale = depth_sum / static_cast<double>(depth_hits);

  // Affine distortion of the published depth and the matching pointmap.
  std::uniform_real_distribution<double> alpha_dist(cfg.alpha_range.first, cfg.alpha_range.second);
  std::uniform_real_distribution<double> beta_dist(cfg.beta_range.first, cfg.beta_range.second);
  std::normal_distribution<double> gauss(0.0, 1.0);
  for (FrameState& s : scene.truth) {
    const double alpha = alpha_dist(rng);
    const double beta = beta_dist(rng) * scene.depth_scale;
    s.correction = AffineDepthCorrection::from_alpha(alpha, beta);
    const std::vector<double>& truth = scene.true_depths[s.frame_id];
    DepthMap published(w, h, std::numeric_limits<float>::quiet_NaN());
    PointMap points;
    points.width = w;
    points.height = h;
    points.points.assign(pixels, Eigen::Vector3f::Constant(std::numeric_limits<float>::quiet_NaN()));
    for (std::size_t p = 0; p < pixels; ++p) {
      if (!std::isfinite(truth[p])) continue;
      double noisy = truth[p];
      if (cfg.depth_noise_sigma > 0.0) noisy *= 1.0 + cfg.depth_noise_sigma * gauss(rng);
      const double d = (noisy - beta) / alpha;
      if (!(d > 0.0)) {
        throw Error(ErrorCode::kConfigInfeasible, "published depth is not positive; shrink the beta range or noise");
      }
      published.values[p] = static_cast<float>(d);
      const Eigen::Vector2d xy =
          k.normalize(Eigen::Vector2d(static_cast<double>(p % w), static_cast<double>(p / w)));
      points.points[p] = Eigen::Vector3f(static_cast<float>(d * xy.x()), static_cast<float>(d * xy.y()),
                                         static_cast<float>(d));
    }
    scene.depths.emplace(s.frame_id, std::move(published));
    scene.pointmaps.emplace(s.frame_id, std::move(points));
  }

  // Correspondences by exact cross-projection of grid pixels.
  std::bernoulli_distribution is_outlier(cfg.outlier_fraction);
  std::uniform_real_distribution<double> confidence(0.5, 1.0);
  std::uniform_real_distribution<double> any_col(0.0, w - 1.0);
  std::uniform_real_distribution<double> any_row(0.0, h - 1.0);
  std::uniform_int_distribution<int> other_frame(0, cfg.frame_count - 1);
  const auto project = [&](const FrameState& s, const Eigen::Vector3d& world) -> std::optional<Eigen::Vector2d> {
    const Eigen::Vector3d cam = s.pose.to_camera(world);
    if (!(cam.z() > 1e-6)) return std::nullopt;
    const Eigen::Vector2d px = s.intrinsics.denormalize(cam.head<2>() / cam.z());
    if (!s.intrinsics.contains(px)) return std::nullopt;
    return px;
  };
  for (const FrameState& src : scene.truth) {
    const std::vector<double>& src_depth = scene.true_depths[src.frame_id];
    for (const FrameState& dst : scene.truth) {
      if (dst.frame_id == src.frame_id) continue;
      const std::vector<double>& dst_depth = scene.true_depths[dst.frame_id];
      CorrespondenceSet set{src.frame_id, dst.frame_id, {}};
      for (int row = 0; row < h; row += cfg.grid_stride) {
        for (int col = 0; col < w; col += cfg.grid_stride) {
          const double z = src_depth[static_cast<std::size_t>(row) * w + col];
          if (!std::isfinite(z)) continue;
          const Eigen::Vector2d pixel(col, row);
          const Eigen::Vector2d xy = k.normalize(pixel);
          const Eigen::Vector3d world = src.pose.to_world(Eigen::Vector3d(z * xy.x(), z * xy.y(), z));
          const auto px = project(dst, world);
          if (!px) continue;
          const double visible = bilinear_depth(dst_depth, w, h, *px);
          const double z_dst = dst.pose.to_camera(world).z();
          if (!std::isfinite(visible) || std::abs(visible - z_dst) > kOcclusionTolerance * z_dst) continue;
          set.matches.push_back({pixel, *px, 0.0});
        }
      }
      if (static_cast<int>(set.matches.size()) < cfg.min_pair_matches) continue;
      for (Correspondence& m : set.matches) {
        if (cfg.corr_noise_px > 0.0) {
          m.dst_pixel += cfg.corr_noise_px * Eigen::Vector2d(gauss(rng), gauss(rng));
        }
        if (cfg.outlier_fraction > 0.0 && is_outlier(rng)) {
          std::optional<Eigen::Vector2d> wrong;
          if (cfg.outlier_mode == OutlierMode::kWrongFrame && cfg.frame_count > 2) {
            int other = src.frame_id;
            while (other == src.frame_id || other == dst.frame_id) other = other_frame(rng);
            const double z = src_depth[static_cast<std::size_t>(m.src_pixel.y()) * w +
                                       static_cast<std::size_t>(m.src_pixel.x())];
            const Eigen::Vector2d xy = k.normalize(m.src_pixel);
            wrong = project(scene.truth[other], src.pose.to_world(Eigen::Vector3d(z * xy.x(), z * xy.y(), z)));
          }
          m.dst_pixel = wrong ? *wrong : Eigen::Vector2d(any_col(rng), any_row(rng));
        }
        m.confidence = confidence(rng);
      }
      scene.correspondences.push_back(std::move(set));
    }
  }
  return scene;
}

void write_scene(const SyntheticScene& scene, const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw Error(ErrorCode::kIoError, "cannot create " + dir.string() + ": " + ec.message());
  SceneManifest manifest;
  manifest.shared_intrinsics = true;
  ResultDocument truth;
  for (const FrameState& s : scene.truth) {
    ManifestFrame f;
    f.frame_id = s.frame_id;
    f.width = s.intrinsics.width;
    f.height = s.intrinsics.height;
    f.depth_path = numbered("depth_", s.frame_id, ".mbad");
    f.pointmap_path = numbered("points_", s.frame_id, ".mbap");
    if (scene.config.write_intrinsics) {
      f.intrinsics = ManifestIntrinsics{s.intrinsics.focal, s.intrinsics.principal_point.x(),
                                        s.intrinsics.principal_point.y()};
    }
    write_depth(dir / f.depth_path, scene.depths.at(s.frame_id));
    write_pointmap(dir / *f.pointmap_path, scene.pointmaps.at(s.frame_id));
    manifest.frames.push_back(f);
    truth.frames.push_back(ResultFrame::from_state(s, true));
  }
  for (const CorrespondenceSet& set : scene.correspondences) {
    ManifestPair p;
    p.i = set.frame_i;
    p.j = set.frame_j;
    p.correspondence_path = numbered("corr_", set.frame_i, "") + numbered("_", set.frame_j, ".mbac");
    write_correspondences(dir / p.correspondence_path, set);
    manifest.pairs.push_back(p);
  }
  write_manifest(dir / "manifest.json", manifest);
  truth.metadata["generator"] = synthetic_config_to_json(scene.config);
  truth.metadata["depth_scale"] = scene.depth_scale;
  write_result(dir / "truth.json", truth);
}

OracleReport oracle_metrics(const SyntheticScene& scene, const std::map<int, FrameState>& states) {
  return oracle_metrics(scene.truth_map(), scene.depth_scale, states);
}

OracleReport oracle_metrics(const std::map<int, FrameState>& truth, double depth_scale,
                            const std::map<int, FrameState>& states) {
  OracleReport report;
  std::vector<int> ids;
  std::vector<Eigen::Vector3d> est_centers, gt_centers;
  for (const auto& [id, s] : states) {
    const auto it = truth.find(id);
    if (it == truth.end()) continue;
    ids.push_back(id);
    est_centers.push_back(s.pose.center());
    gt_centers.push_back(it->second.pose.center());
  }
  if (ids.size() < 3) {
    report.message = "alignment needs at least three registered frames, got " + std::to_string(ids.size());
    return report;
  }
  report.alignment = umeyama_alignment(est_centers, gt_centers);
  report.aligned = true;
  const Similarity& a = report.alignment;
  for (std::size_t k = 0; k < ids.size(); ++k) {
    const FrameState& est = states.at(ids[k]);
    const FrameState& gt = truth.at(ids[k]);
    FrameOracleError e;
    e.frame_id = ids[k];
    e.rotation_deg = rotation_angle_deg(gt.pose.rotation() * a.rotation * est.pose.rotation().transpose());
    e.center_error = (a.apply(est_centers[k]) - gt_centers[k]).norm();
    e.alpha_error = std::abs(a.scale * est.correction.alpha() - gt.correction.alpha()) / gt.correction.alpha();
    e.beta_error = std::abs(a.scale * est.correction.beta - gt.correction.beta) / depth_scale;
    report.max_rotation_deg = std::max(report.max_rotation_deg, e.rotation_deg);
    report.max_center_error = std::max(report.max_center_error, e.center_error);
    report.max_alpha_error = std::max(report.max_alpha_error, e.alpha_error);
    report.max_beta_error = std::max(report.max_beta_error, e.beta_error);
    report.frames.push_back(e);
  }
  return report;
}

}  // namespace mba
