#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "codemap/depth_codec.hpp"
#include "codemap/keyframe.hpp"
#include "codemap/noise_sim.hpp"

namespace codemap {

/// Band-limited value noise evaluated at world points, so a surface looks the
/// same from every view. amplitude 0 gives a uniform surface.
struct Texture {
  std::uint64_t seed = 1;
  double base = 0.5;
  double amplitude = 0.4;
  double cell = 0.1;  // meters

  double operator()(const Eigen::Vector3d& p) const;
};

/// Plane through pose.translation() with normal pose * e_z. Zero half sizes
/// make it unbounded along that axis.
struct PlanePrimitive {
  Pose pose;
  double half_x = 0.0;
  double half_y = 0.0;
  Texture texture;
};

struct BoxPrimitive {
  Eigen::Vector3d min = Eigen::Vector3d::Zero();
  Eigen::Vector3d max = Eigen::Vector3d::Ones();
  Texture texture;
};

using Primitive = std::variant<PlanePrimitive, BoxPrimitive>;

struct SceneSpec {
  std::vector<Primitive> primitives;
  std::vector<Pose> trajectory;  // camera-to-world
  std::vector<double> timestamps;
  Intrinsics intrinsics{230.0, 230.0, 127.5, 95.5, kDefaultWidth, kDefaultHeight};

  void validate() const;
  double timestamp(std::size_t frame) const;
};

/// Camera at eye looking at target; image y follows `down`.
Pose look_at(const Eigen::Vector3d& eye, const Eigen::Vector3d& target,
             const Eigen::Vector3d& down = Eigen::Vector3d::UnitY());

struct RayHit {
  double t = 0.0;
  Eigen::Vector3d point;
  double intensity = 0.0;
};

/// Nearest intersection of origin + t * direction (t > 0) with the scene.
std::optional<RayHit> cast_ray(const SceneSpec& spec, const Eigen::Vector3d& origin, const Eigen::Vector3d& direction);

struct RenderedFrame {
  DenseImage intensity;
  DenseImage depth;  // 0 where no primitive is hit
};

/// Ray-cast render; the ray through each pixel has unit camera-z, so hit
/// distance along it is the depth. Throws on a bad frame index.
RenderedFrame render(const SceneSpec& spec, std::size_t frame);

/// Exact depth of the scene along the ray through a continuous pixel.
std::optional<double> depth_at(const SceneSpec& spec, std::size_t frame, const PixelCoord& x);

struct SequenceOptions {
  std::size_t n_points = 1000;
  std::optional<EmgParams> noise;
  std::uint64_t seed = 0;
  std::size_t max_correspondences = 200;
};

/// Renders every frame, sparsifies it, finds exact correspondences between
/// every pair of frames, and fills the reprojection-error image (10 for
/// unmatched points, 0 or the simulated error for matched ones). With noise,
/// matched points are displaced along the ray of the first frame that sees them.
std::vector<KeyframePacket> make_sequence(const SceneSpec& spec, const SequenceOptions& options);

/// Least-squares code reproducing a depth map with a linear decoder.
DepthCode fit_code(const LinearDecoder& decoder, const DenseImage& depth);

/// Built-in scenes: "plane", "box", "room", "textureless".
SceneSpec preset_scene(const std::string& name);
/// Preset name or scene file (see parse_scene).
SceneSpec load_scene(const std::string& name_or_path);

/// Line-oriented scene description:
///   intrinsics <fx> <fy> <cx> <cy> <width> <height>
///   plane <tx> <ty> <tz> <qw> <qx> <qy> <qz> <half_x> <half_y> <seed> <base> <amplitude>
///   box <minx> <miny> <minz> <maxx> <maxy> <maxz> <seed> <base> <amplitude>
///   pose <tx> <ty> <tz> <qw> <qx> <qy> <qz>
///   look_at <ex> <ey> <ez> <tx> <ty> <tz>
SceneSpec parse_scene(const std::string& text);

}  // namespace codemap
