#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>

#include <Eigen/Core>
#include <Eigen/Geometry>

#include "mba/error.hpp"

namespace mba {

template <typename Scalar>
using Vector2 = Eigen::Matrix<Scalar, 2, 1>;
template <typename Scalar>
using Vector3 = Eigen::Matrix<Scalar, 3, 1>;
template <typename Scalar>
using Vector6 = Eigen::Matrix<Scalar, 6, 1>;
template <typename Scalar>
using Matrix3 = Eigen::Matrix<Scalar, 3, 3>;

using Vector6d = Vector6<double>;

// Pinhole camera with square pixels and zero skew. The principal point is
// held fixed; only the focal length is ever optimized.
template <typename Scalar>
struct CameraIntrinsicsT {
  Scalar focal = Scalar(1);
  Vector2<Scalar> principal_point = Vector2<Scalar>::Zero();
  int width = 0;
  int height = 0;

  // Principal point at the image center (width / 2, height / 2).
  static CameraIntrinsicsT centered(Scalar focal, int width, int height) {
    CameraIntrinsicsT k;
    k.focal = focal;
    k.principal_point = Vector2<Scalar>(Scalar(width) / 2, Scalar(height) / 2);
    k.width = width;
    k.height = height;
    return k;
  }

  Vector2<Scalar> normalize(const Vector2<Scalar>& pixel) const {
    return (pixel - principal_point) / focal;
  }
  Vector2<Scalar> denormalize(const Vector2<Scalar>& xy) const {
    return focal * xy + principal_point;
  }
  bool contains(const Vector2<Scalar>& pixel) const {
    return pixel.x() >= Scalar(0) && pixel.y() >= Scalar(0) &&
           pixel.x() <= Scalar(width - 1) && pixel.y() <= Scalar(height - 1);
  }
};

// Gram-Schmidt map from two unnormalized column seeds (a, b) to a proper
// rotation: c1 = a/|a|, c2 = normalize(b - (b.c1) c1), c3 = c1 x c2.
template <typename Scalar>
Matrix3<Scalar> rotation_from_6d(const Vector6<Scalar>& seed) {
  using std::sqrt;
  const Vector3<Scalar> a = seed.template head<3>();
  const Vector3<Scalar> b = seed.template tail<3>();
  const Scalar a_norm = a.norm();
  if (!(a_norm > Scalar(1e-12))) {
    throw Error(ErrorCode::kDegenerateRotationSeed, "rotation seed: first column has zero norm");
  }
  const Vector3<Scalar> c1 = a / a_norm;
  const Vector3<Scalar> u = b - b.dot(c1) * c1;
  const Scalar u_norm = u.norm();
  if (!(u_norm > Scalar(1e-12) * b.norm()) || !(u_norm > Scalar(0))) {
    throw Error(ErrorCode::kDegenerateRotationSeed, "rotation seed: columns are parallel");
  }
  const Vector3<Scalar> c2 = u / u_norm;
  Matrix3<Scalar> r;
  r.col(0) = c1;
  r.col(1) = c2;
  r.col(2) = c1.cross(c2);
  return r;
}

template <typename Scalar>
Vector6<Scalar> rotation_to_6d(const Matrix3<Scalar>& r) {
  Vector6<Scalar> seed;
  seed << r.col(0), r.col(1);
  return seed;
}

// Vector-Jacobian product of rotation_from_6d: maps dL/dR (3x3) to dL/dseed.
template <typename Scalar>
Vector6<Scalar> rotation_6d_vjp(const Vector6<Scalar>& seed, const Matrix3<Scalar>& grad_r) {
  const Vector3<Scalar> a = seed.template head<3>();
  const Vector3<Scalar> b = seed.template tail<3>();
  const Scalar a_norm = a.norm();
  const Vector3<Scalar> c1 = a / a_norm;
  const Scalar bc = b.dot(c1);
  const Vector3<Scalar> u = b - bc * c1;
  const Scalar u_norm = u.norm();
  const Vector3<Scalar> c2 = u / u_norm;

  const Vector3<Scalar> g1 = grad_r.col(0);
  const Vector3<Scalar> g2 = grad_r.col(1);
  const Vector3<Scalar> g3 = grad_r.col(2);

  // c3 = c1 x c2:  dL/dc1 += c2 x g3,  dL/dc2 += g3 x c1.
  const Vector3<Scalar> gc2 = g2 + g3.cross(c1);
  Vector3<Scalar> gc1 = g1 + c2.cross(g3);

  // c2 = u / |u|
  const Vector3<Scalar> gu = (gc2 - c2 * c2.dot(gc2)) / u_norm;
  // u = b - (b.c1) c1
  const Vector3<Scalar> gb = gu - c1 * c1.dot(gu);
  gc1 += -bc * gu - b * c1.dot(gu);
  // c1 = a / |a|
  const Vector3<Scalar> ga = (gc1 - c1 * c1.dot(gc1)) / a_norm;

  Vector6<Scalar> out;
  out << ga, gb;
  return out;
}

// World-to-camera pose: X_cam = R X_world + t, R materialized from a 6D seed.
template <typename Scalar>
struct CameraPoseT {
  Vector6<Scalar> rotation_6d = (Vector6<Scalar>() << 1, 0, 0, 0, 1, 0).finished();
  Vector3<Scalar> translation = Vector3<Scalar>::Zero();

  static CameraPoseT identity() { return CameraPoseT(); }
  static CameraPoseT from_rotation(const Matrix3<Scalar>& r, const Vector3<Scalar>& t) {
    CameraPoseT pose;
    pose.rotation_6d = rotation_to_6d(r);
    pose.translation = t;
    return pose;
  }

  Matrix3<Scalar> rotation() const { return rotation_from_6d(rotation_6d); }
  Vector3<Scalar> center() const { return -(rotation().transpose() * translation); }
  Vector3<Scalar> to_camera(const Vector3<Scalar>& world) const {
    return rotation() * world + translation;
  }
  Vector3<Scalar> to_world(const Vector3<Scalar>& cam) const {
    return rotation().transpose() * (cam - translation);
  }
};

// D' = alpha * D + beta, with alpha stored as log(alpha).
template <typename Scalar>
struct AffineDepthCorrectionT {
  Scalar log_alpha = Scalar(0);
  Scalar beta = Scalar(0);

  static AffineDepthCorrectionT from_alpha(Scalar alpha, Scalar beta) {
    using std::log;
    return {log(alpha), beta};
  }
  Scalar alpha() const {
    using std::exp;
    return exp(log_alpha);
  }
  Scalar apply(Scalar depth) const { return alpha() * depth + beta; }
};

struct Trainable {
  bool pose = true;
  bool focal = true;
  bool alpha = true;
  bool beta = true;

  static Trainable none() { return {false, false, false, false}; }
  bool any() const { return pose || focal || alpha || beta; }
};

template <typename Scalar>
struct FrameStateT {
  int frame_id = 0;
  CameraIntrinsicsT<Scalar> intrinsics;
  CameraPoseT<Scalar> pose;
  AffineDepthCorrectionT<Scalar> correction;
  Trainable trainable;
};

using CameraIntrinsics = CameraIntrinsicsT<double>;
using CameraPose = CameraPoseT<double>;
using AffineDepthCorrection = AffineDepthCorrectionT<double>;
using FrameState = FrameStateT<double>;

// One sampled correspondence of a directed frame pair (src -> dst): a source
// pixel, its matched destination pixel and the raw (uncorrected) source depth.
struct DataRecord {
  Eigen::Vector2d src_pixel = Eigen::Vector2d::Zero();
  Eigen::Vector2d dst_pixel = Eigen::Vector2d::Zero();
  double src_depth = 0.0;
};

struct ProjectionOptions {
  double depth_floor = 1e-6;
  double z_floor = 1e-6;
};

// Back-projects `pixel` with the corrected source depth, moves it through the
// world frame into `dst` and projects it. Empty when the corrected depth or the
// destination z falls at or below its floor.
template <typename Scalar>
std::optional<Vector2<Scalar>> project_between(const Vector2<Scalar>& pixel, Scalar depth,
                                               const FrameStateT<Scalar>& src,
                                               const FrameStateT<Scalar>& dst,
                                               const ProjectionOptions& options = {}) {
  const Scalar corrected = src.correction.apply(depth);
  if (!(corrected > Scalar(options.depth_floor))) return std::nullopt;
  const Vector2<Scalar> xy = src.intrinsics.normalize(pixel);
  const Vector3<Scalar> cam_src(corrected * xy.x(), corrected * xy.y(), corrected);
  const Vector3<Scalar> world = src.pose.to_world(cam_src);
  const Vector3<Scalar> cam_dst = dst.pose.to_camera(world);
  if (!(cam_dst.z() > Scalar(options.z_floor))) return std::nullopt;
  return dst.intrinsics.denormalize(cam_dst.template head<2>() / cam_dst.z());
}

// Pixel distance between the projected source pixel and its match; +inf when
// the projection is invalid.
template <typename Scalar>
Scalar projective_residual(const DataRecord& record, const FrameStateT<Scalar>& src,
                           const FrameStateT<Scalar>& dst, const ProjectionOptions& options = {}) {
  const auto projected =
      project_between<Scalar>(record.src_pixel.cast<Scalar>(), Scalar(record.src_depth), src, dst, options);
  if (!projected) return std::numeric_limits<Scalar>::infinity();
  return (*projected - record.dst_pixel.cast<Scalar>()).norm();
}

// Gradient of projective_residual with respect to every parameter of both
// frames. Rotation gradients are taken with respect to the 6D seed.
struct ResidualGradient {
  Vector6d src_rotation_6d = Vector6d::Zero();
  Eigen::Vector3d src_translation = Eigen::Vector3d::Zero();
  double src_focal = 0.0;
  double src_log_alpha = 0.0;
  double src_beta = 0.0;
  Vector6d dst_rotation_6d = Vector6d::Zero();
  Eigen::Vector3d dst_translation = Eigen::Vector3d::Zero();
  double dst_focal = 0.0;
};

struct ResidualWithGradient {
  double residual = std::numeric_limits<double>::infinity();
  ResidualGradient gradient;
};

// Analytic residual gradient. Invalid projections and zero residuals yield a
// zero gradient.
ResidualWithGradient projective_residual_gradient(const DataRecord& record, const FrameState& src,
                                                  const FrameState& dst,
                                                  const ProjectionOptions& options = {});

inline double rotation_angle_deg(const Eigen::Matrix3d& r) {
  const double c = std::clamp((r.trace() - 1.0) / 2.0, -1.0, 1.0);
  // acos loses precision near identity; use the skew part instead.
  const Eigen::Vector3d w(r(2, 1) - r(1, 2), r(0, 2) - r(2, 0), r(1, 0) - r(0, 1));
  const double s = 0.5 * w.norm();
  return std::atan2(s, c) * 180.0 / M_PI;
}

inline double angle_between_deg(const Eigen::Vector3d& a, const Eigen::Vector3d& b) {
  const double s = a.cross(b).norm();
  const double c = a.dot(b);
  return std::atan2(s, c) * 180.0 / M_PI;
}

inline Eigen::Matrix3d skew(const Eigen::Vector3d& v) {
  Eigen::Matrix3d m;
  m << 0, -v.z(), v.y(), v.z(), 0, -v.x(), -v.y(), v.x(), 0;
  return m;
}

}  // namespace mba
