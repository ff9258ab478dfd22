#pragma once

#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "codemap/depth_codec.hpp"
#include "codemap/keyframe.hpp"

namespace codemap {

/// SplitMix64 step; used to derive independent seeds and for hashing.
inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
  return splitmix64(seed ^ splitmix64(stream));
}

/// Exponentially modified Gaussian: Normal(loc, scale^2) + Exponential with
/// mean k * scale.
struct EmgParams {
  double k = 4.31;
  double loc = 0.44;
  double scale = 0.20;

  void validate() const;
  double mean() const { return loc + k * scale; }
  double variance() const { return scale * scale * (1.0 + k * k); }
};

/// Which quantity the middle EMG parameter denotes.
enum class EmgInterpretation { location, mean };

/// Builds parameters from (k, value, scale); with EmgInterpretation::mean the
/// location is value - k * scale.
EmgParams make_emg(double k, double value, double scale, EmgInterpretation interpretation);

/// Draws nonnegative EMG samples; negative draws are rejected and redrawn.
class EmgSampler {
 public:
  EmgSampler(const EmgParams& params, std::uint64_t seed);
  double operator()();

 private:
  EmgParams params_;
  std::mt19937_64 rng_;
  std::normal_distribution<double> normal_;
  std::exponential_distribution<double> exponential_;
};

std::vector<double> sample_emg(const EmgParams& params, std::uint64_t seed, std::size_t n);

struct SparsifyResult {
  /// Keypoints first (strongest first), then random padding.
  std::vector<SparseObservation> observations;
  std::size_t corner_count = 0;
  /// Fewer valid pixels than requested; every valid pixel was returned.
  bool short_of_points = false;
};

/// Gradient-magnitude score per pixel (central differences, 0 on the border).
std::vector<double> corner_scores(const DenseImage& intensity);

/// Picks up to n_points pixels with valid depth: local gradient-magnitude
/// maxima under 5x5 non-maximum suppression, strongest first, padded with
/// uniformly drawn valid pixels. Landmark ids are pixel indices. Throws
/// ErrorCode::insufficient_data when no pixel has valid depth.
SparsifyResult sparsify_depth(const DenseImage& intensity, const DenseImage& depth, std::size_t n_points,
                              std::uint64_t seed);

inline constexpr double kMaxVirtualBaseline = 2.0;

struct PerturbOutcome {
  std::optional<SparseObservation> observation;
  /// Why the observation was dropped; empty on success.
  std::string diagnostic;
};

/// Moves the observed point along the ray from the virtual camera center so
/// that its reprojection in the reference frame shifts by target_err pixels.
/// The pixel is kept; depth becomes the displaced depth and rep_error the
/// target. sign > 0 moves away from the virtual camera. Throws
/// ErrorCode::invalid_argument when the virtual camera is more than 2 m away.
PerturbOutcome perturb_along_ray(const SparseObservation& obs, const Pose& ref_pose, const Pose& virt_pose,
                                 const Intrinsics& k, double target_err, int sign);

struct TrainingPairOptions {
  /// Multiplies every sampled target error; 0 disables the perturbation.
  double error_gain = 1.0;
};

struct TrainingPair {
  ConditioningSet conditioning;
  DenseImage gt_depth;
  std::size_t requested_points = 0;
  std::size_t dropped_points = 0;
};

/// Sparsify, sample one EMG error per point, perturb it along the neighbour's
/// ray with a random sign, and rasterize. frame.gt_depth is required.
TrainingPair build_training_pair(const KeyframePacket& frame, const Pose& neighbor_pose, const EmgParams& emg,
                                 std::size_t n_points, std::uint64_t seed, const TrainingPairOptions& options = {});

}  // namespace codemap
