#include "codemap/fusion.hpp"

#include <algorithm>
#include <cmath>

#include "codemap/error.hpp"

namespace codemap {

namespace {

/// Pixels within `radius` (Chebyshev) of an invalid depth or of a depth jump
/// larger than `jump` between 4-neighbours.
std::vector<char> depth_edge_mask(const DenseImage& depth, double jump, int radius) {
  const int w = depth.width();
  const int h = depth.height();
  std::vector<char> mask(depth.size(), 0);
  if (radius <= 0) return mask;
  std::vector<char> seed(depth.size(), 0);
  const auto valid = [&](int x, int y) { return depth.at(x, y) > 0.0f; };
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      if (!valid(x, y)) {
        seed[depth.index(x, y)] = 1;
        continue;
      }
      for (const auto& [nx, ny] : {std::pair{x + 1, y}, std::pair{x, y + 1}}) {
        if (nx >= w || ny >= h || !valid(nx, ny)) continue;
        if (std::abs(depth.at(nx, ny) - depth.at(x, y)) > jump) seed[depth.index(x, y)] = seed[depth.index(nx, ny)] = 1;
      }
    }
  }
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      if (!seed[depth.index(x, y)]) continue;
      for (int ny = std::max(0, y - radius); ny <= std::min(h - 1, y + radius); ++ny)
        for (int nx = std::max(0, x - radius); nx <= std::min(w - 1, x + radius); ++nx) mask[depth.index(nx, ny)] = 1;
    }
  return mask;
}

}  // namespace

TsdfVolume::TsdfVolume(const Eigen::Vector3d& origin, const Eigen::Vector3i& dims, const TsdfParams& params)
    : origin_(origin), dims_(dims), params_(params) {
  if (dims.minCoeff() <= 0) throw Error(ErrorCode::invalid_argument, "tsdf: dimensions must be positive");
  if (!(params.voxel_size > 0.0) || !(params.truncation > 0.0) || !(params.max_weight > 0.0f))
    throw Error(ErrorCode::invalid_argument, "tsdf: voxel size, truncation and max weight must be positive");
  if (params.edge_radius < 0) throw Error(ErrorCode::invalid_argument, "tsdf: edge radius must be >= 0");
  const auto n = static_cast<std::size_t>(dims.x()) * static_cast<std::size_t>(dims.y()) *
                 static_cast<std::size_t>(dims.z());
  tsdf_.assign(n, 1.0f);
  weight_.assign(n, 0.0f);
}

TsdfVolume TsdfVolume::covering(const Eigen::Vector3d& min, const Eigen::Vector3d& max, const TsdfParams& params) {
  const Eigen::Vector3d lo = min.array() - params.truncation;
  const Eigen::Vector3d hi = max.array() + params.truncation;
  Eigen::Vector3i dims;
  for (int a = 0; a < 3; ++a)
    dims[a] = std::max(2, static_cast<int>(std::ceil((hi[a] - lo[a]) / params.voxel_size)) + 1);
  return TsdfVolume(lo, dims, params);
}

void TsdfVolume::integrate(const DenseImage& depth, const Pose& pose, const Intrinsics& k) {
  if (depth.width() != k.width || depth.height() != k.height)
    throw Error(ErrorCode::dimension_mismatch, "integrate: depth size differs from intrinsics");
  const Pose cam_from_world = pose.inverse();
  const Eigen::Matrix3d r = cam_from_world.rotation_matrix();
  const Eigen::Vector3d t = cam_from_world.translation();
  const double trunc = params_.truncation;
  const std::vector<char> near_edge = depth_edge_mask(depth, trunc, params_.edge_radius);
  for (int z = 0; z < dims_.z(); ++z) {
    for (int y = 0; y < dims_.y(); ++y) {
      for (int x = 0; x < dims_.x(); ++x) {
        const Eigen::Vector3d pc = r * voxel_center(x, y, z) + t;
        if (pc.z() <= 0.0) continue;
        const double u = k.fx * pc.x() / pc.z() + k.cx;
        const double v = k.fy * pc.y() / pc.z() + k.cy;
        const long ui = std::lround(u);
        const long vi = std::lround(v);
        if (ui < 0 || vi < 0 || ui >= k.width || vi >= k.height) continue;
        const double d = depth.at(static_cast<int>(ui), static_cast<int>(vi));
        if (!(d > 0.0)) continue;
        const double sdf = d - pc.z();
        if (sdf < -trunc) continue;
        if (sdf < 0.0 && near_edge[depth.index(static_cast<int>(ui), static_cast<int>(vi))]) continue;
        const double obs = std::min(1.0, sdf / trunc);
        const std::size_t i = index(x, y, z);
        const float w = weight_[i];
        tsdf_[i] = static_cast<float>((tsdf_[i] * w + obs) / (w + 1.0f));
        weight_[i] = std::min(w + 1.0f, params_.max_weight);
      }
    }
  }
}

double TriangleMesh::surface_area() const {
  double area = 0.0;
  for (const auto& t : triangles)
    area += 0.5 * (vertices[t[1]] - vertices[t[0]]).cross(vertices[t[2]] - vertices[t[0]]).norm();
  return area;
}

double median_value(std::vector<double> values) {
  if (values.empty()) throw Error(ErrorCode::insufficient_data, "median of an empty set");
  const std::size_t mid = values.size() / 2;
  std::nth_element(values.begin(), values.begin() + static_cast<std::ptrdiff_t>(mid), values.end());
  const double upper = values[mid];
  if (values.size() % 2 == 1) return upper;
  const double lower = *std::max_element(values.begin(), values.begin() + static_cast<std::ptrdiff_t>(mid));
  return 0.5 * (lower + upper);
}

double median_depth(std::span<const DenseImage> depths) {
  std::vector<double> values;
  for (const auto& img : depths)
    for (float v : img.values())
      if (v > 0.0f && std::isfinite(v)) values.push_back(v);
  if (values.empty()) throw Error(ErrorCode::insufficient_data, "median_depth: no valid depth values");
  return median_value(std::move(values));
}

double monocular_scale(std::span<const double> depth_values, double training_median) {
  if (!(training_median > 0.0)) throw Error(ErrorCode::invalid_argument, "training median must be positive");
  std::vector<double> values;
  for (double v : depth_values)
    if (v > 0.0 && std::isfinite(v)) values.push_back(v);
  if (values.empty()) throw Error(ErrorCode::insufficient_data, "monocular_scale: no valid depth values");
  const double m = median_value(std::move(values));
  if (!(m > 0.0)) throw Error(ErrorCode::numerical, "monocular_scale: median is not positive");
  return training_median / m;
}

double monocular_scale(std::span<const DenseImage> depths, double training_median) {
  if (!(training_median > 0.0)) throw Error(ErrorCode::invalid_argument, "training median must be positive");
  const double m = median_depth(depths);
  if (!(m > 0.0)) throw Error(ErrorCode::numerical, "monocular_scale: median is not positive");
  return training_median / m;
}

Pose scale_pose(const Pose& pose, double scale) { return Pose(pose.rotation(), scale * pose.translation()); }

}  // namespace codemap
