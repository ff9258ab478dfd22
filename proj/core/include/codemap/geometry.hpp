#pragma once

#include <optional>

#include <Eigen/Core>
#include <Eigen/Geometry>

namespace codemap {

/// Rigid transform stored as a unit quaternion plus translation (meters).
/// Rotation matrices are computed on demand.
class Pose {
 public:
  Pose() : rotation_(Eigen::Quaterniond::Identity()), translation_(Eigen::Vector3d::Zero()) {}

  /// Throws if the quaternion norm deviates from 1 by more than 1e-6.
  /// The stored values are kept bit-for-bit so serialization round trips.
  Pose(const Eigen::Quaterniond& rotation, const Eigen::Vector3d& translation);

  static Pose identity() { return Pose(); }
  static Pose from_translation(const Eigen::Vector3d& t) {
    return Pose(Eigen::Quaterniond::Identity(), t);
  }
  /// Rotation given as axis-angle (axis need not be normalized).
  static Pose from_axis_angle(const Eigen::Vector3d& axis, double angle,
                              const Eigen::Vector3d& t);

  const Eigen::Quaterniond& rotation() const { return rotation_; }
  const Eigen::Vector3d& translation() const { return translation_; }
  Eigen::Matrix3d rotation_matrix() const { return rotation_.toRotationMatrix(); }
  Eigen::Matrix4d matrix() const;

  Pose inverse() const;
  Pose operator*(const Pose& other) const;
  Eigen::Vector3d operator*(const Eigen::Vector3d& p) const { return rotation_ * p + translation_; }

 private:
  Eigen::Quaterniond rotation_;
  Eigen::Vector3d translation_;
};

/// Pinhole intrinsics. Integer pixel coordinates address pixel centers.
struct Intrinsics {
  double fx = 1.0;
  double fy = 1.0;
  double cx = 0.0;
  double cy = 0.0;
  int width = 1;
  int height = 1;

  void validate() const;
  bool in_bounds(double u, double v) const {
    return u >= 0.0 && v >= 0.0 && u <= width - 1 && v <= height - 1;
  }
  bool operator==(const Intrinsics&) const = default;
};

struct PixelCoord {
  double u = 0.0;
  double v = 0.0;
  bool operator==(const PixelCoord&) const = default;
};

/// Scale of the depth -> proximity mapping a / (a + d).
struct ProximityParams {
  double scale = 2.0;
};

/// Throws ErrorCode::behind_camera when point.z <= 0.
PixelCoord project(const Eigen::Vector3d& point, const Intrinsics& k);
/// Throws ErrorCode::invalid_depth when depth <= 0.
Eigen::Vector3d unproject(const PixelCoord& x, double depth, const Intrinsics& k);

/// Ray through a pixel with unit z component; unproject(x, d) == d * bearing(x).
inline Eigen::Vector3d bearing(const PixelCoord& x, const Intrinsics& k) {
  return {(x.u - k.cx) / k.fx, (x.v - k.cy) / k.fy, 1.0};
}

struct WarpResult {
  PixelCoord pixel;
  /// Depth of the warped point in the target camera.
  double depth = 0.0;
  Eigen::Vector3d point;
};

/// pi(T_ji * pi^-1(x, depth_i)). Returns nullopt when the warped point is not
/// in front of camera j. Pixel bounds are left to the caller.
/// Throws ErrorCode::invalid_depth when depth_i <= 0.
std::optional<WarpResult> warp(const PixelCoord& x, double depth_i, const Pose& t_ji,
                               const Intrinsics& k);

/// Derivative of the projection with respect to the camera-frame point.
Eigen::Matrix<double, 2, 3> projection_jacobian(const Eigen::Vector3d& point, const Intrinsics& k);

/// T_ji for camera-to-world poses of frames i and j.
inline Pose relative_pose(const Pose& world_from_i, const Pose& world_from_j) {
  return world_from_j.inverse() * world_from_i;
}

double depth_to_proximity(double depth, const ProximityParams& p);
/// Throws ErrorCode::domain unless proximity is in (0, 1].
double proximity_to_depth(double proximity, const ProximityParams& p);
/// d(depth)/d(proximity) = -a / p^2.
inline double depth_proximity_derivative(double proximity, const ProximityParams& p) {
  return -p.scale / (proximity * proximity);
}

}  // namespace codemap
