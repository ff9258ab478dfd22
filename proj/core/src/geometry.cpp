#include "codemap/geometry.hpp"

#include <cmath>
#include <sstream>

#include "codemap/error.hpp"

namespace codemap {

const char* to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::invalid_argument: return "invalid_argument";
    case ErrorCode::behind_camera: return "behind_camera";
    case ErrorCode::invalid_depth: return "invalid_depth";
    case ErrorCode::domain: return "domain";
    case ErrorCode::dimension_mismatch: return "dimension_mismatch";
    case ErrorCode::insufficient_data: return "insufficient_data";
    case ErrorCode::format: return "format";
    case ErrorCode::checksum: return "checksum";
    case ErrorCode::shape: return "shape";
    case ErrorCode::not_found: return "not_found";
    case ErrorCode::numerical: return "numerical";
  }
  return "unknown";
}

Pose::Pose(const Eigen::Quaterniond& rotation, const Eigen::Vector3d& translation)
    : rotation_(rotation), translation_(translation) {
  const double n = rotation.norm();
  if (!std::isfinite(n) || std::abs(n - 1.0) > 1e-6 || !translation.allFinite()) {
    std::ostringstream os;
    os << "pose rotation must be a unit quaternion (norm " << n << ")";
    throw Error(ErrorCode::invalid_argument, os.str());
  }
}

Pose Pose::from_axis_angle(const Eigen::Vector3d& axis, double angle, const Eigen::Vector3d& t) {
  if (axis.norm() == 0.0) return from_translation(t);
  return Pose(Eigen::Quaterniond(Eigen::AngleAxisd(angle, axis.normalized())), t);
}

Eigen::Matrix4d Pose::matrix() const {
  Eigen::Matrix4d m = Eigen::Matrix4d::Identity();
  m.topLeftCorner<3, 3>() = rotation_matrix();
  m.topRightCorner<3, 1>() = translation_;
  return m;
}

Pose Pose::inverse() const {
  Pose out;
  out.rotation_ = rotation_.conjugate();
  out.translation_ = -(out.rotation_ * translation_);
  return out;
}

Pose Pose::operator*(const Pose& other) const {
  Pose out;
  out.rotation_ = rotation_ * other.rotation_;
  out.translation_ = rotation_ * other.translation_ + translation_;
  return out;
}

void Intrinsics::validate() const {
  if (!(fx > 0.0 && fy > 0.0))
    throw Error(ErrorCode::invalid_argument, "intrinsics: focal lengths must be positive");
  if (width <= 0 || height <= 0)
    throw Error(ErrorCode::invalid_argument, "intrinsics: image size must be positive");
  if (!(cx >= 0.0 && cx < width && cy >= 0.0 && cy < height))
    throw Error(ErrorCode::invalid_argument, "intrinsics: principal point outside the image");
}

PixelCoord project(const Eigen::Vector3d& point, const Intrinsics& k) {
  if (!(point.z() > 0.0))
    throw Error(ErrorCode::behind_camera, "project: point is not in front of the camera");
  return {k.fx * point.x() / point.z() + k.cx, k.fy * point.y() / point.z() + k.cy};
}

Eigen::Vector3d unproject(const PixelCoord& x, double depth, const Intrinsics& k) {
  if (!(depth > 0.0)) throw Error(ErrorCode::invalid_depth, "unproject: depth must be positive");
  return depth * bearing(x, k);
}

std::optional<WarpResult> warp(const PixelCoord& x, double depth_i, const Pose& t_ji,
                               const Intrinsics& k) {
  const Eigen::Vector3d p = t_ji * unproject(x, depth_i, k);
  if (!(p.z() > 0.0)) return std::nullopt;
  return WarpResult{{k.fx * p.x() / p.z() + k.cx, k.fy * p.y() / p.z() + k.cy}, p.z(), p};
}

Eigen::Matrix<double, 2, 3> projection_jacobian(const Eigen::Vector3d& point, const Intrinsics& k) {
  const double iz = 1.0 / point.z();
  const double iz2 = iz * iz;
  Eigen::Matrix<double, 2, 3> j;
  j << k.fx * iz, 0.0, -k.fx * point.x() * iz2,
       0.0, k.fy * iz, -k.fy * point.y() * iz2;
  return j;
}

double depth_to_proximity(double depth, const ProximityParams& p) {
  if (!(depth >= 0.0))
    throw Error(ErrorCode::domain, "depth_to_proximity: depth must be non-negative");
  if (std::isinf(depth)) return 0.0;
  return p.scale / (p.scale + depth);
}

double proximity_to_depth(double proximity, const ProximityParams& p) {
  if (!(proximity > 0.0 && proximity <= 1.0))
    throw Error(ErrorCode::domain, "proximity_to_depth: proximity outside (0, 1]");
  return p.scale * (1.0 - proximity) / proximity;
}

}  // namespace codemap
