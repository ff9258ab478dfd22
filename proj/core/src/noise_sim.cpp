#include "codemap/noise_sim.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "codemap/error.hpp"

namespace codemap {

void EmgParams::validate() const {
  if (!(k > 0.0) || !(scale > 0.0) || !std::isfinite(loc) || !std::isfinite(k) || !std::isfinite(scale))
    throw Error(ErrorCode::invalid_argument, "emg: k and scale must be positive and finite");
}

EmgParams make_emg(double k, double value, double scale, EmgInterpretation interpretation) {
  EmgParams p{k, value, scale};
  if (interpretation == EmgInterpretation::mean) p.loc = value - k * scale;
  p.validate();
  return p;
}

EmgSampler::EmgSampler(const EmgParams& params, std::uint64_t seed)
    : params_(params), rng_(seed), normal_(params.loc, params.scale), exponential_(1.0 / (params.k * params.scale)) {
  params.validate();
}

double EmgSampler::operator()() {
  for (;;) {
    const double x = normal_(rng_) + exponential_(rng_);
    if (x >= 0.0) return x;
  }
}

std::vector<double> sample_emg(const EmgParams& params, std::uint64_t seed, std::size_t n) {
  if (n == 0) throw Error(ErrorCode::invalid_argument, "sample_emg: n must be >= 1");
  EmgSampler sampler(params, seed);
  std::vector<double> out(n);
  for (double& x : out) x = sampler();
  return out;
}

std::vector<double> corner_scores(const DenseImage& intensity) {
  const int w = intensity.width();
  const int h = intensity.height();
  std::vector<double> score(intensity.size(), 0.0);
  for (int y = 1; y + 1 < h; ++y) {
    for (int x = 1; x + 1 < w; ++x) {
      const double gx = 0.5 * (intensity.at(x + 1, y) - intensity.at(x - 1, y));
      const double gy = 0.5 * (intensity.at(x, y + 1) - intensity.at(x, y - 1));
      score[intensity.index(x, y)] = std::sqrt(gx * gx + gy * gy);
    }
  }
  return score;
}

SparsifyResult sparsify_depth(const DenseImage& intensity, const DenseImage& depth, std::size_t n_points,
                              std::uint64_t seed) {
  if (!intensity.same_shape(depth)) throw Error(ErrorCode::dimension_mismatch, "sparsify: image sizes differ");
  if (n_points == 0) throw Error(ErrorCode::invalid_argument, "sparsify: n_points must be >= 1");
  const int w = intensity.width();
  const int h = intensity.height();
  const auto valid = [&](std::size_t i) { return depth[i] > 0.0f && std::isfinite(depth[i]); };
  if (count_valid(depth) == 0) throw Error(ErrorCode::insufficient_data, "sparsify: no valid depth");

  constexpr double kMinScore = 1e-6;
  constexpr int kRadius = 2;
  const auto score = corner_scores(intensity);
  std::vector<std::size_t> corners;
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const std::size_t i = intensity.index(x, y);
      if (score[i] <= kMinScore || !valid(i)) continue;
      bool is_max = true;
      for (int dy = -kRadius; dy <= kRadius && is_max; ++dy) {
        for (int dx = -kRadius; dx <= kRadius; ++dx) {
          const int nx = x + dx;
          const int ny = y + dy;
          if ((dx == 0 && dy == 0) || nx < 0 || ny < 0 || nx >= w || ny >= h) continue;
          const std::size_t j = intensity.index(nx, ny);
          // Plateaus keep their lowest-index pixel.
          if (score[j] > score[i] || (score[j] == score[i] && j < i)) {
            is_max = false;
            break;
          }
        }
      }
      if (is_max) corners.push_back(i);
    }
  }
  std::sort(corners.begin(), corners.end(), [&](std::size_t a, std::size_t b) {
    return score[a] != score[b] ? score[a] > score[b] : a < b;
  });

  SparsifyResult result;
  if (corners.size() > n_points) corners.resize(n_points);
  result.corner_count = corners.size();
  std::vector<std::size_t> chosen = corners;

  if (chosen.size() < n_points) {
    std::vector<char> taken(depth.size(), 0);
    for (std::size_t i : chosen) taken[i] = 1;
    std::vector<std::size_t> pool;
    for (std::size_t i = 0; i < depth.size(); ++i)
      if (valid(i) && !taken[i]) pool.push_back(i);
    const std::size_t need = n_points - chosen.size();
    if (pool.size() <= need) {
      result.short_of_points = pool.size() < need;
      chosen.insert(chosen.end(), pool.begin(), pool.end());
    } else {
      std::mt19937_64 rng(seed);
      for (std::size_t k = 0; k < need; ++k) {
        std::uniform_int_distribution<std::size_t> pick(k, pool.size() - 1);
        std::swap(pool[k], pool[pick(rng)]);
      }
      chosen.insert(chosen.end(), pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(need));
    }
  }

  result.observations.reserve(chosen.size());
  for (std::size_t i : chosen) {
    SparseObservation obs;
    obs.landmark_id = static_cast<std::int64_t>(i);
    obs.pixel = {static_cast<double>(i % static_cast<std::size_t>(w)), static_cast<double>(i / static_cast<std::size_t>(w))};
    obs.depth = depth[i];
    obs.rep_error = 0.0;
    result.observations.push_back(obs);
  }
  return result;
}

PerturbOutcome perturb_along_ray(const SparseObservation& obs, const Pose& ref_pose, const Pose& virt_pose,
                                 const Intrinsics& k, double target_err, int sign) {
  const double baseline = (virt_pose.translation() - ref_pose.translation()).norm();
  if (baseline > kMaxVirtualBaseline)
    throw Error(ErrorCode::invalid_argument, "perturb: virtual camera is more than 2 m from the reference");
  if (!(target_err >= 0.0) || !std::isfinite(target_err))
    throw Error(ErrorCode::invalid_argument, "perturb: target error must be finite and >= 0");
  if (target_err == 0.0) {
    SparseObservation same = obs;
    same.rep_error = 0.0;
    return {same, {}};
  }

  const Eigen::Vector3d p_world = ref_pose * unproject(obs.pixel, obs.depth, k);
  const Pose ref_from_world = ref_pose.inverse();
  const Pose virt_from_world = virt_pose.inverse();
  if ((virt_from_world * p_world).z() <= 0.0) return {std::nullopt, "point is behind the virtual camera"};

  const Eigen::Vector3d center = virt_pose.translation();
  const double range = (p_world - center).norm();
  if (!(range > 0.0)) return {std::nullopt, "point coincides with the virtual camera center"};
  const Eigen::Vector3d dir = (p_world - center) / range;

  const Eigen::Vector3d p_ref = ref_from_world * p_world;
  const Eigen::Vector3d dir_ref = ref_from_world.rotation() * dir;
  const double min_z = 1e-3 * obs.depth;

  // Largest admissible |t| on the requested side.
  double t_end = sign > 0 ? 2.0 * obs.depth : -std::min(0.5 * obs.depth, 0.99 * range);
  const double dz = dir_ref.z() * (t_end > 0.0 ? 1.0 : -1.0);
  if (dz < 0.0) t_end = std::copysign(std::min(std::abs(t_end), (p_ref.z() - min_z) / -dz), t_end);

  const auto displacement = [&](double t) {
    const Eigen::Vector3d q = p_ref + t * dir_ref;
    const PixelCoord x = project(q, k);
    return std::hypot(x.u - obs.pixel.u, x.v - obs.pixel.v);
  };
  if (displacement(t_end) < target_err) return {std::nullopt, "root search failed within depth bounds"};

  constexpr double kTolerance = 1e-3;
  double lo = 0.0;
  double hi = t_end;
  double t = hi;
  double err = displacement(hi) - target_err;
  for (int it = 0; it < 60 && std::abs(err) >= kTolerance; ++it) {
    t = 0.5 * (lo + hi);
    err = displacement(t) - target_err;
    if (err < 0.0)
      lo = t;
    else
      hi = t;
  }
  if (std::abs(err) >= kTolerance) return {std::nullopt, "root search did not converge"};

  SparseObservation moved = obs;
  moved.depth = (p_ref + t * dir_ref).z();
  moved.rep_error = target_err;
  return {moved, {}};
}

TrainingPair build_training_pair(const KeyframePacket& frame, const Pose& neighbor_pose, const EmgParams& emg,
                                 std::size_t n_points, std::uint64_t seed, const TrainingPairOptions& options) {
  if (!frame.gt_depth) throw Error(ErrorCode::invalid_argument, "training pair: frame has no ground-truth depth");
  if ((frame.pose.translation() - neighbor_pose.translation()).norm() > kMaxVirtualBaseline)
    throw Error(ErrorCode::invalid_argument, "training pair: neighbor is more than 2 m away");
  emg.validate();
  const DenseImage& gt = *frame.gt_depth;
  const auto sparse = sparsify_depth(frame.intensity, gt, n_points, derive_seed(seed, 1));

  EmgSampler sampler(emg, derive_seed(seed, 2));
  std::mt19937_64 sign_rng(derive_seed(seed, 3));
  std::bernoulli_distribution coin(0.5);

  TrainingPair pair;
  pair.requested_points = n_points;
  pair.gt_depth = gt;
  pair.conditioning.intensity = frame.intensity;
  pair.conditioning.sparse_depth = DenseImage(gt.width(), gt.height(), ChannelKind::depth);
  pair.conditioning.rep_error = DenseImage(gt.width(), gt.height(), ChannelKind::rep_error);
  for (const auto& obs : sparse.observations) {
    const double target = options.error_gain * sampler();
    const int sign = coin(sign_rng) ? 1 : -1;
    const auto outcome = perturb_along_ray(obs, frame.pose, neighbor_pose, frame.intrinsics, target, sign);
    if (!outcome.observation || !(outcome.observation->depth > 0.0)) {
      ++pair.dropped_points;
      continue;
    }
    const int x = static_cast<int>(obs.pixel.u);
    const int y = static_cast<int>(obs.pixel.v);
    pair.conditioning.sparse_depth.at(x, y) = static_cast<float>(outcome.observation->depth);
    pair.conditioning.rep_error.at(x, y) = static_cast<float>(outcome.observation->rep_error);
  }
  return pair;
}

}  // namespace codemap
