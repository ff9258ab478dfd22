#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "codemap/geometry.hpp"
#include "codemap/image.hpp"

namespace codemap {

/// Reprojection error assigned to landmarks that have not been matched yet.
inline constexpr float kUnmatchedRepError = 10.0f;

struct SparseObservation {
  std::int64_t landmark_id = 0;
  PixelCoord pixel;
  double depth = 0.0;
  double rep_error = 0.0;
  bool operator==(const SparseObservation&) const = default;
};

struct Correspondence {
  PixelCoord pixel_i;
  PixelCoord pixel_j;
  std::int64_t landmark_id = 0;
  bool operator==(const Correspondence&) const = default;
};

struct MatchSet {
  std::int64_t other_id = 0;
  std::vector<Correspondence> correspondences;
  bool operator==(const MatchSet&) const = default;
};

/// One keyframe as delivered by the sparse SLAM front end. The pose is
/// camera-to-world.
struct KeyframePacket {
  std::int64_t id = 0;
  double timestamp = 0.0;
  Pose pose;
  Intrinsics intrinsics;
  DenseImage intensity;
  DenseImage sparse_depth;
  DenseImage rep_error;
  std::vector<SparseObservation> observations;
  std::vector<MatchSet> matches;
  std::optional<DenseImage> gt_depth;

  /// Correspondences towards `other`, or nullptr.
  const std::vector<Correspondence>* matches_with(std::int64_t other) const {
    for (const auto& m : matches)
      if (m.other_id == other) return &m.correspondences;
    return nullptr;
  }
};

}  // namespace codemap
