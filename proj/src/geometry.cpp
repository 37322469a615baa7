#include "mba/geometry.hpp"

namespace mba {

ResidualWithGradient projective_residual_gradient(const DataRecord& record, const FrameState& src,
                                                  const FrameState& dst,
                                                  const ProjectionOptions& options) {
  ResidualWithGradient out;
  const double alpha = src.correction.alpha();
  const double corrected = alpha * record.src_depth + src.correction.beta;
  if (!(corrected > options.depth_floor)) return out;

  const Eigen::Matrix3d r_src = src.pose.rotation();
  const Eigen::Matrix3d r_dst = dst.pose.rotation();
  const Eigen::Vector2d xn = src.intrinsics.normalize(record.src_pixel);
  const Eigen::Vector3d ray(xn.x(), xn.y(), 1.0);
  const Eigen::Vector3d cam_src = corrected * ray;
  const Eigen::Vector3d offset = cam_src - src.pose.translation;
  const Eigen::Vector3d world = r_src.transpose() * offset;
  const Eigen::Vector3d cam_dst = r_dst * world + dst.pose.translation;
  if (!(cam_dst.z() > options.z_floor)) return out;

  const double inv_z = 1.0 / cam_dst.z();
  const Eigen::Vector2d xy_dst = cam_dst.head<2>() * inv_z;
  const Eigen::Vector2d error = dst.intrinsics.denormalize(xy_dst) - record.dst_pixel;
  out.residual = error.norm();
  if (!(out.residual > 0.0)) return out;

  const Eigen::Vector2d unit = error / out.residual;
  const double fz = dst.intrinsics.focal * inv_z;
  const Eigen::Vector3d g_dst(fz * unit.x(), fz * unit.y(), -fz * unit.dot(xy_dst));

  ResidualGradient& g = out.gradient;
  g.dst_focal = unit.dot(xy_dst);
  g.dst_translation = g_dst;
  g.dst_rotation_6d = rotation_6d_vjp<double>(dst.pose.rotation_6d, g_dst * world.transpose());

  const Eigen::Vector3d g_world = r_dst.transpose() * g_dst;
  const Eigen::Vector3d g_cam_src = r_src * g_world;
  g.src_translation = -g_cam_src;
  g.src_rotation_6d = rotation_6d_vjp<double>(src.pose.rotation_6d, offset * g_world.transpose());

  const double g_depth = g_cam_src.dot(ray);
  g.src_beta = g_depth;
  g.src_log_alpha = g_depth * alpha * record.src_depth;
  g.src_focal = -(corrected / src.intrinsics.focal) * g_cam_src.head<2>().dot(xn);
  return out;
}

}  // namespace mba
