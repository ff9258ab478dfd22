#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <vector>

#include <Eigen/Core>

#include "codemap/geometry.hpp"
#include "codemap/image.hpp"

namespace codemap {

struct TsdfParams {
  double voxel_size = 0.02;
  double truncation = 0.08;
  float max_weight = 100.0f;
  /// Behind-surface updates are skipped for pixels within this many pixels of
  /// a depth discontinuity (invalid depth or a jump above the truncation);
  /// 0 disables the check.
  int edge_radius = 2;
};

/// Dense voxel grid of truncated signed distances. tsdf is normalized by the
/// truncation distance; positive values lie in front of observed surfaces.
class TsdfVolume {
 public:
  TsdfVolume(const Eigen::Vector3d& origin, const Eigen::Vector3i& dims, const TsdfParams& params = {});

  /// A volume covering [min, max] (plus one truncation band of margin).
  static TsdfVolume covering(const Eigen::Vector3d& min, const Eigen::Vector3d& max, const TsdfParams& params = {});

  const Eigen::Vector3d& origin() const { return origin_; }
  const Eigen::Vector3i& dims() const { return dims_; }
  const TsdfParams& params() const { return params_; }
  double voxel_size() const { return params_.voxel_size; }
  std::size_t voxel_count() const { return tsdf_.size(); }

  std::size_t index(int x, int y, int z) const {
    return (static_cast<std::size_t>(z) * static_cast<std::size_t>(dims_.y()) + static_cast<std::size_t>(y)) *
               static_cast<std::size_t>(dims_.x()) + static_cast<std::size_t>(x);
  }
  Eigen::Vector3d voxel_center(int x, int y, int z) const {
    return origin_ + params_.voxel_size * Eigen::Vector3d(x, y, z);
  }
  float tsdf(int x, int y, int z) const { return tsdf_[index(x, y, z)]; }
  float weight(int x, int y, int z) const { return weight_[index(x, y, z)]; }
  std::span<const float> tsdf_values() const { return tsdf_; }
  std::span<const float> weight_values() const { return weight_; }

  /// Projective update with one depth map; pose is camera-to-world. Voxels
  /// outside the frustum, behind the truncation band, projecting onto an
  /// invalid depth, or behind the surface next to a depth edge are untouched.
  void integrate(const DenseImage& depth, const Pose& pose, const Intrinsics& k);

 private:
  Eigen::Vector3d origin_;
  Eigen::Vector3i dims_;
  TsdfParams params_;
  std::vector<float> tsdf_;
  std::vector<float> weight_;
};

struct TriangleMesh {
  std::vector<Eigen::Vector3d> vertices;
  std::vector<std::array<std::uint32_t, 3>> triangles;
  std::vector<Eigen::Vector3d> normals;

  double surface_area() const;
};

/// Triangle list for each of the 256 corner-sign configurations of a cube.
/// Corner k sits at offset (k & 1, (k >> 1) & 1, (k >> 2) & 1); bit k of the
/// configuration is set when corner k is negative. Triangles reference the 12
/// cube edges returned by cube_edge_corners().
struct CubeTriangulation {
  std::vector<std::array<int, 3>> triangles;
};
const std::array<CubeTriangulation, 256>& marching_cubes_table();
const std::array<std::array<int, 2>, 12>& cube_edge_corners();

/// Marching cubes over the zero level set. Cubes touching a weight-0 voxel
/// are skipped; zero-area triangles are dropped. Normals follow the tsdf
/// gradient (pointing into free space).
TriangleMesh extract_mesh(const TsdfVolume& volume);

/// Median of all valid (> 0) values across the images. Throws
/// ErrorCode::insufficient_data when there are none.
double median_depth(std::span<const DenseImage> depths);
double median_value(std::vector<double> values);

/// training_median / median(valid depths). Callers multiply depths and pose
/// translations by the result.
double monocular_scale(std::span<const DenseImage> depths, double training_median);
double monocular_scale(std::span<const double> depth_values, double training_median);

/// Applies a monocular scale factor to a trajectory (translations only).
Pose scale_pose(const Pose& pose, double scale);

}  // namespace codemap
