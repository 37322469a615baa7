#include "mba/evaluation.hpp"

#include <algorithm>
#include <cmath>

#include <Eigen/Dense>
#include <Eigen/Geometry>

#include "mba/error.hpp"

namespace mba {

namespace {

double median_of(std::vector<double> v) {
  if (v.empty()) return 0.0;
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

Eigen::Matrix3Xd as_matrix(std::span<const Eigen::Vector3d> points) {
  Eigen::Matrix3Xd m(3, static_cast<Eigen::Index>(points.size()));
  for (std::size_t k = 0; k < points.size(); ++k) m.col(static_cast<Eigen::Index>(k)) = points[k];
  return m;
}

double direction_error_deg(const Eigen::Vector3d& a, const Eigen::Vector3d& b) {
  const double na = a.norm();
  const double nb = b.norm();
  if (na < 1e-12 || nb < 1e-12) return (na < 1e-12 && nb < 1e-12) ? 0.0 : 180.0;
  return angle_between_deg(a, b);
}

}  // namespace

Similarity umeyama_alignment(std::span<const Eigen::Vector3d> src, std::span<const Eigen::Vector3d> dst) {
  if (src.size() != dst.size()) throw Error(ErrorCode::kInvalidArgument, "alignment: point counts differ");
  if (src.size() < 3) throw Error(ErrorCode::kInsufficientFrames, "alignment needs at least three points");
  const Eigen::Matrix4d t = Eigen::umeyama(as_matrix(src), as_matrix(dst), true);
  Similarity s;
  const Eigen::Matrix3d sr = t.topLeftCorner<3, 3>();
  s.scale = std::cbrt(sr.determinant());
  s.rotation = sr / s.scale;
  s.translation = t.topRightCorner<3, 1>();
  return s;
}

double trajectory_diameter(std::span<const Eigen::Vector3d> points) {
  double d = 0.0;
  for (std::size_t a = 0; a < points.size(); ++a) {
    for (std::size_t b = a + 1; b < points.size(); ++b) d = std::max(d, (points[a] - points[b]).norm());
  }
  return d;
}

std::vector<PairError> relative_pose_errors(const std::map<int, FrameState>& est,
                                            const std::map<int, FrameState>& gt) {
  std::vector<int> common;
  for (const auto& [id, s] : est) {
    if (gt.count(id)) common.push_back(id);
  }
  std::vector<PairError> out;
  for (std::size_t a = 0; a < common.size(); ++a) {
    for (std::size_t b = a + 1; b < common.size(); ++b) {
      const int i = common[a];
      const int j = common[b];
      const auto relative = [&](const std::map<int, FrameState>& m) {
        const Eigen::Matrix3d ri = m.at(i).pose.rotation();
        const Eigen::Matrix3d rj = m.at(j).pose.rotation();
        const Eigen::Matrix3d r = rj * ri.transpose();
        return std::pair<Eigen::Matrix3d, Eigen::Vector3d>{r, m.at(j).pose.translation - r * m.at(i).pose.translation};
      };
      const auto [re, te] = relative(est);
      const auto [rg, tg] = relative(gt);
      out.push_back({i, j, rotation_angle_deg(rg.transpose() * re), direction_error_deg(te, tg)});
    }
  }
  return out;
}

RraRta rra_rta(const std::map<int, FrameState>& est, const std::map<int, FrameState>& gt, double tau_deg) {
  const std::vector<PairError> errors = relative_pose_errors(est, gt);
  if (errors.empty()) throw Error(ErrorCode::kInsufficientFrames, "RRA/RTA need two frames registered in both sets");
  RraRta out;
  out.pairs = static_cast<int>(errors.size());
  int rot = 0;
  int trans = 0;
  for (const PairError& e : errors) {
    rot += e.rotation_deg < tau_deg ? 1 : 0;
    trans += e.translation_deg < tau_deg ? 1 : 0;
  }
  out.rra = 100.0 * rot / out.pairs;
  out.rta = 100.0 * trans / out.pairs;
  return out;
}

double auc_pose(std::span<const double> errors_deg, double tau_deg) {
  if (errors_deg.empty() || !(tau_deg > 0.0)) return 0.0;
  double area = 0.0;
  for (const double e : errors_deg) area += std::max(0.0, tau_deg - e);
  return area / (tau_deg * static_cast<double>(errors_deg.size()));
}

AteResult ate(std::span<const Eigen::Vector3d> est_centers, std::span<const Eigen::Vector3d> gt_centers) {
  if (est_centers.size() != gt_centers.size()) throw Error(ErrorCode::kInvalidArgument, "ATE: point counts differ");
  if (est_centers.size() < 3) throw Error(ErrorCode::kInsufficientFrames, "ATE needs at least three centers");
  AteResult out;
  out.alignment = umeyama_alignment(est_centers, gt_centers);
  double sq = 0.0;
  for (std::size_t k = 0; k < est_centers.size(); ++k) {
    sq += (out.alignment.apply(est_centers[k]) - gt_centers[k]).squaredNorm();
  }
  out.rmse = std::sqrt(sq / static_cast<double>(est_centers.size()));
  out.diameter = trajectory_diameter(gt_centers);
  out.ate = out.diameter > 0.0 ? out.rmse / out.diameter : out.rmse;

  Eigen::Matrix3Xd centered = as_matrix(gt_centers);
  centered.colwise() -= centered.rowwise().mean();
  const Eigen::JacobiSVD<Eigen::Matrix3Xd> svd(centered);
  out.degenerate = !(svd.singularValues()[1] > 1e-9 * svd.singularValues()[0]);
  return out;
}

double reloc_accuracy(const std::map<int, FrameState>& est, const std::map<int, FrameState>& gt, double trans_tol,
                      double rot_tol_deg) {
  int total = 0;
  int good = 0;
  for (const auto& [id, e] : est) {
    const auto it = gt.find(id);
    if (it == gt.end()) continue;
    ++total;
    const double rot = rotation_angle_deg(it->second.pose.rotation().transpose() * e.pose.rotation());
    const double trans = (e.pose.center() - it->second.pose.center()).norm();
    if (rot < rot_tol_deg && trans < trans_tol) ++good;
  }
  return total == 0 ? 0.0 : 100.0 * good / total;
}

MetricReport evaluate_poses(const std::map<int, FrameState>& est, const std::map<int, FrameState>& gt,
                            double tau_deg) {
  MetricReport r;
  r.tau_deg = tau_deg;
  r.frames_total = static_cast<int>(gt.size());
  for (const auto& [id, s] : est) r.frames_registered += gt.count(id) ? 1 : 0;
  r.registration_rate = r.frames_total ? 100.0 * r.frames_registered / r.frames_total : 0.0;

  const RraRta rr = rra_rta(est, gt, tau_deg);
  r.rra = rr.rra;
  r.rta = rr.rta;
  r.pairs = rr.pairs;
  std::vector<double> rot, trans, worst;
  int acc = 0;
  for (const PairError& e : relative_pose_errors(est, gt)) {
    rot.push_back(e.rotation_deg);
    trans.push_back(e.translation_deg);
    worst.push_back(std::max(e.rotation_deg, e.translation_deg));
    acc += worst.back() < tau_deg ? 1 : 0;
  }
  r.acc = 100.0 * acc / static_cast<double>(worst.size());
  r.auc = auc_pose(worst, tau_deg);
  r.median_rotation_deg = median_of(rot);
  r.median_translation_deg = median_of(trans);

  std::vector<Eigen::Vector3d> ce, cg;
  for (const auto& [id, s] : est) {
    if (!gt.count(id)) continue;
    ce.push_back(s.pose.center());
    cg.push_back(gt.at(id).pose.center());
  }
  if (ce.size() >= 3) {
    const AteResult a = ate(ce, cg);
    r.has_ate = true;
    r.ate = a.ate;
    r.ate_degenerate = a.degenerate;
  }
  return r;
}

}  // namespace mba
