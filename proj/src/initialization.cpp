#include "mba/initialization.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <set>

#include "mba/error.hpp"
#include "mba/ransac.hpp"

namespace mba {

namespace {

double median_of(std::vector<double> values) {
  const auto mid = values.begin() + static_cast<std::ptrdiff_t>((values.size() - 1) / 2);
  std::nth_element(values.begin(), mid, values.end());
  return *mid;
}

std::uint64_t pair_seed(std::uint64_t seed, int a, int b) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(a), static_cast<std::uint32_t>(b), 0x2f1u};
  std::uint64_t out[1];
  std::uint32_t words[2];
  seq.generate(words, words + 2);
  out[0] = (static_cast<std::uint64_t>(words[0]) << 32) | words[1];
  return out[0];
}

double image_cost(const Eigen::Vector3d& a, const Eigen::Vector3d& b, const Eigen::Vector2d& m, double s) {
  const Eigen::Vector3d y = a + s * b;
  if (!(y.z() > 0.0)) return std::numeric_limits<double>::infinity();
  return (y.head<2>() / y.z() - m).squaredNorm();
}

}  // namespace

double calibrate_from_pointmap(const PointMap& pointmap, const CalibrationOptions& options) {
  const double cx = pointmap.width / 2.0;
  const double cy = pointmap.height / 2.0;
  std::vector<double> candidates;
  std::size_t usable = 0;
  for (int row = 0; row < pointmap.height; ++row) {
    for (int col = 0; col < pointmap.width; ++col) {
      const Eigen::Vector3f& p = pointmap.at(row, col);
      if (!PointMap::is_valid(p)) continue;
      const double xz = static_cast<double>(p.x()) / p.z();
      const double yz = static_cast<double>(p.y()) / p.z();
      bool any = false;
      if (std::abs(xz) > options.axis_margin) {
        candidates.push_back((col - cx) / xz);
        any = true;
      }
      if (std::abs(yz) > options.axis_margin) {
        candidates.push_back((row - cy) / yz);
        any = true;
      }
      if (any) ++usable;
    }
  }
  std::erase_if(candidates, [](double f) { return !(f > 0.0) || !std::isfinite(f); });
  if (usable < 100 || candidates.empty()) {
    throw Error(ErrorCode::kInsufficientCalibrationPoints,
                "calibration: fewer than 100 usable off-axis points in the pointmap");
  }

  std::sort(candidates.begin(), candidates.end());
  std::vector<double> prefix(candidates.size() + 1, 0.0);
  std::partial_sum(candidates.begin(), candidates.end(), prefix.begin() + 1);
  const auto support = [&](double f) {
    const auto lo = std::lower_bound(candidates.begin(), candidates.end(), f * (1.0 - options.inlier_tol));
    const auto hi = std::upper_bound(candidates.begin(), candidates.end(), f * (1.0 + options.inlier_tol));
    return std::pair{lo - candidates.begin(), hi - candidates.begin()};
  };

  std::mt19937_64 rng(options.seed);
  std::uniform_int_distribution<std::size_t> pick(0, candidates.size() - 1);
  std::ptrdiff_t best_count = -1;
  double best_mean = 0.0;
  for (int t = 0; t < std::max(1, options.trials); ++t) {
    const auto [lo, hi] = support(candidates[pick(rng)]);
    if (hi - lo > best_count) {
      best_count = hi - lo;
      best_mean = (prefix[hi] - prefix[lo]) / static_cast<double>(hi - lo);
    }
  }
  return best_mean;
}

double shared_focal(std::span<const double> focals) {
  if (focals.empty()) throw Error(ErrorCode::kInvalidArgument, "shared focal: no focal lengths");
  return median_of(std::vector<double>(focals.begin(), focals.end()));
}

TwoViewEstimate two_view_pose(std::span<const Eigen::Vector2d> src_pixels, std::span<const Eigen::Vector2d> dst_pixels,
                              const CameraIntrinsics& k_src, const CameraIntrinsics& k_dst,
                              const TwoViewOptions& options) {
  if (src_pixels.size() < 5 || src_pixels.size() != dst_pixels.size()) {
    throw Error(ErrorCode::kTwoViewFailure, "two-view: fewer than five correspondences");
  }
  std::vector<Eigen::Vector2d> x1, x2;
  x1.reserve(src_pixels.size());
  x2.reserve(src_pixels.size());
  for (std::size_t k = 0; k < src_pixels.size(); ++k) {
    x1.push_back(k_src.normalize(src_pixels[k]));
    x2.push_back(k_dst.normalize(dst_pixels[k]));
  }
  const double focal = 0.5 * (k_src.focal + k_dst.focal);
  MarginalizedRansacOptions ro;
  ro.hypotheses = options.ransac_iters;
  ro.tau_max = std::pow(options.inlier_tau_px / focal, 2);
  ro.threshold_count = options.threshold_count;
  ro.seed = options.seed;
  ro.solver = options.solver;

  EssentialHypothesis best;
  try {
    best = estimate_essential_marginalized(x1, x2, ro);
  } catch (const Error& e) {
    if (e.code() == ErrorCode::kNoValidHypothesis || e.code() == ErrorCode::kInvalidArgument) {
      throw Error(ErrorCode::kTwoViewFailure, std::string("two-view: ") + e.what());
    }
    throw;
  }
  const auto [pose, in_front] = select_pose(best.essential, x1, x2, &best.inlier_mask);
  if (in_front < 5) throw Error(ErrorCode::kTwoViewFailure, "two-view: fewer than five cheirality-consistent inliers");

  TwoViewEstimate out;
  out.rotation = pose.rotation;
  out.translation_dir = pose.translation.normalized();
  out.inlier_mask = best.inlier_mask;
  out.inlier_count = best.inlier_count;
  return out;
}

std::optional<double> solve_ray_scale(const Eigen::Vector3d& a, const Eigen::Vector3d& b, const Eigen::Vector2d& m) {
  // (proj - m) = (A + s B) / (a_z + s b_z); the stationarity condition of its
  // squared norm is linear in s.
  const Eigen::Vector2d big_a(a.x() - m.x() * a.z(), a.y() - m.y() * a.z());
  const Eigen::Vector2d big_b(b.x() - m.x() * b.z(), b.y() - m.y() * b.z());
  const double ab = big_a.dot(big_b);
  const double num = b.z() * big_a.squaredNorm() - a.z() * ab;
  const double den = a.z() * big_b.squaredNorm() - b.z() * ab;
  const double magnitude = std::abs(a.z()) * big_b.squaredNorm() + std::abs(b.z() * ab);
  if (std::abs(den) > 1e-9 * magnitude && magnitude > 0.0) {
    const double s = num / den;
    if (s > 0.0 && std::isfinite(s) && a.z() + s * b.z() > 0.0) {
      const double c = image_cost(a, b, m, s);
      if (c <= image_cost(a, b, m, s * 1.001) && c <= image_cost(a, b, m, s / 1.001)) return s;
    }
  }

  // Golden-section search over log s in [1e-4, 1e4], seeded by a coarse scan
  // so that a bracket around the best grid point is refined.
  const double lo = std::log(1e-4);
  const double hi = std::log(1e4);
  const int grid = 200;
  int best = -1;
  double best_cost = std::numeric_limits<double>::infinity();
  for (int g = 0; g <= grid; ++g) {
    const double c = image_cost(a, b, m, std::exp(lo + (hi - lo) * g / grid));
    if (c < best_cost) {
      best_cost = c;
      best = g;
    }
  }
  if (best < 0) return std::nullopt;
  double left = lo + (hi - lo) * std::max(0, best - 1) / grid;
  double right = lo + (hi - lo) * std::min(grid, best + 1) / grid;
  const double phi = (std::sqrt(5.0) - 1.0) / 2.0;
  double x1 = right - phi * (right - left);
  double x2 = left + phi * (right - left);
  double f1 = image_cost(a, b, m, std::exp(x1));
  double f2 = image_cost(a, b, m, std::exp(x2));
  for (int it = 0; it < 100 && right - left > 1e-12; ++it) {
    if (f1 <= f2) {
      right = x2;
      x2 = x1;
      f2 = f1;
      x1 = right - phi * (right - left);
      f1 = image_cost(a, b, m, std::exp(x1));
    } else {
      left = x1;
      x1 = x2;
      f1 = f2;
      x2 = left + phi * (right - left);
      f2 = image_cost(a, b, m, std::exp(x2));
    }
  }
  const double s = std::exp(0.5 * (left + right));
  if (!std::isfinite(image_cost(a, b, m, s))) return std::nullopt;
  return s;
}

double resolve_translation_scale(const TwoViewEstimate& estimate, std::span<const DataRecord> records,
                                 const CameraIntrinsics& k_src, const CameraIntrinsics& k_dst,
                                 const AffineDepthCorrection& src_correction) {
  const bool masked = estimate.inlier_mask.size() == records.size();
  std::vector<double> scales;
  for (std::size_t k = 0; k < records.size(); ++k) {
    if (masked && !estimate.inlier_mask[k]) continue;
    const double depth = src_correction.apply(records[k].src_depth);
    if (!(depth > 0.0) || !std::isfinite(depth)) continue;
    const Eigen::Vector2d xn = k_src.normalize(records[k].src_pixel);
    const Eigen::Vector3d a = estimate.rotation * (depth * Eigen::Vector3d(xn.x(), xn.y(), 1.0));
    const auto s = solve_ray_scale(a, estimate.translation_dir, k_dst.normalize(records[k].dst_pixel));
    if (s) scales.push_back(*s);
  }
  if (scales.empty()) {
    throw Error(ErrorCode::kScaleResolutionFailure, "scale resolution: no sample yields a positive-depth minimizer");
  }
  return median_of(std::move(scales));
}

FrameState register_from_parent(const FrameState& parent, const FrameState& child_template,
                                const DirectedBlock& parent_to_child, const DirectedBlock& child_to_parent,
                                const TwoViewOptions& options) {
  std::vector<Eigen::Vector2d> p_px, c_px;
  for (const DataRecord& r : parent_to_child.records) {
    p_px.push_back(r.src_pixel);
    c_px.push_back(r.dst_pixel);
  }
  TwoViewOptions local = options;
  local.seed = pair_seed(options.seed, parent.frame_id, child_template.frame_id);
  TwoViewEstimate est = two_view_pose(p_px, c_px, parent.intrinsics, child_template.intrinsics, local);
  const double scale = resolve_translation_scale(est, parent_to_child.records, parent.intrinsics,
                                                 child_template.intrinsics, parent.correction);
  est.scale = scale;

  const Eigen::Matrix3d r_parent = parent.pose.rotation();
  FrameState child = child_template;
  const Eigen::Matrix3d r_child = est.rotation * r_parent;
  child.pose = CameraPose::from_rotation(r_child, est.rotation * parent.pose.translation + scale * est.translation_dir);
  child.correction = AffineDepthCorrection{};

  // Reverse direction: depth along each child ray that lands on its match in
  // the parent, relative to the child's raw depth.
  const Eigen::Matrix3d r_cp = r_parent * r_child.transpose();
  const Eigen::Vector3d t_cp = parent.pose.translation - r_cp * child.pose.translation;
  const Eigen::Matrix3d e_cp = skew(t_cp.normalized()) * r_cp;
  const double focal = 0.5 * (parent.intrinsics.focal + child.intrinsics.focal);
  const double tau = std::pow(options.inlier_tau_px / focal, 2);
  std::vector<double> ratios;
  for (const DataRecord& r : child_to_parent.records) {
    if (!(r.src_depth > 0.0)) continue;
    const Eigen::Vector2d xc = child.intrinsics.normalize(r.src_pixel);
    const Eigen::Vector2d xp = parent.intrinsics.normalize(r.dst_pixel);
    if (!(sampson_residual(e_cp, xc, xp) < tau)) continue;
    const auto depth = solve_ray_scale(t_cp, r_cp * Eigen::Vector3d(xc.x(), xc.y(), 1.0), xp);
    if (depth) ratios.push_back(*depth / r.src_depth);
  }
  if (ratios.empty()) {
    throw Error(ErrorCode::kScaleResolutionFailure, "registration: no reverse sample resolves the depth scale");
  }
  child.correction = AffineDepthCorrection::from_alpha(median_of(std::move(ratios)), 0.0);
  return child;
}

RegistrationResult register_spanning_tree(const SpanningTree& tree, const PoseGraph& graph, const DataMatrix& data,
                                          const std::map<int, FrameState>& initial, const TwoViewOptions& options) {
  RegistrationResult result;
  if (tree.order.empty()) return result;
  std::map<FramePair, const DirectedBlock*> blocks;
  for (const DirectedBlock& b : data.blocks) blocks[{b.src, b.dst}] = &b;

  const auto template_of = [&](int frame) {
    const auto it = initial.find(frame);
    if (it == initial.end()) throw Error(ErrorCode::kInvalidArgument, "registration: missing frame state");
    return it->second;
  };

  FrameState root = template_of(tree.root());
  root.pose = CameraPose::identity();
  root.correction = AffineDepthCorrection{};
  root.trainable.pose = false;
  result.states[root.frame_id] = root;
  result.order.push_back(root.frame_id);

  for (std::size_t k = 1; k < tree.order.size(); ++k) {
    const int frame = tree.order[k].frame;
    std::vector<int> parents;
    if (tree.order[k].parent) parents.push_back(*tree.order[k].parent);
    std::vector<int> others;
    for (const int n : graph.neighbors(frame)) {
      if (result.states.count(n) && (parents.empty() || n != parents.front())) others.push_back(n);
    }
    std::stable_sort(others.begin(), others.end(),
                     [&](int a, int b) { return graph.covisibility(frame, a) > graph.covisibility(frame, b); });
    parents.insert(parents.end(), others.begin(), others.end());

    std::string last_error = "no registered neighbor";
    bool done = false;
    for (const int parent : parents) {
      const auto ps = result.states.find(parent);
      const auto fwd = blocks.find({parent, frame});
      const auto bwd = blocks.find({frame, parent});
      if (ps == result.states.end() || fwd == blocks.end() || bwd == blocks.end()) continue;
      try {
        result.states[frame] = register_from_parent(ps->second, template_of(frame), *fwd->second, *bwd->second, options);
        result.order.push_back(frame);
        done = true;
        break;
      } catch (const Error& e) {
        last_error = std::string(error_code_name(e.code())) + ": " + e.what();
      }
    }
    if (!done) {
      result.failures.push_back({frame, "REGISTRATION_FAILURE: frame " + std::to_string(frame) + " (" + last_error + ")"});
    }
  }
  for (const int f : graph.frames()) {
    if (!result.states.count(f)) result.unregistered.push_back(f);
  }
  return result;
}

}  // namespace mba
