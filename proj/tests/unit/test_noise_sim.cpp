#include <algorithm>
#include <cmath>
#include <numeric>

#include <gtest/gtest.h>

#include "codemap/error.hpp"
#include "codemap/noise_sim.hpp"
#include "codemap/synth.hpp"
#include "test_support.hpp"

using namespace codemap;
using codemap::test::Rng;

namespace {

double mean_of(const std::vector<double>& v) { return std::accumulate(v.begin(), v.end(), 0.0) / double(v.size()); }

double variance_of(const std::vector<double>& v) {
  const double m = mean_of(v);
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return s / double(v.size() - 1);
}

DenseImage checkerboard(int w, int h, int square) {
  DenseImage img(w, h, ChannelKind::intensity);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) img.at(x, y) = float(((x / square) + (y / square)) % 2);
  return img;
}

// Point on the line from c through x whose z equals z.
Eigen::Vector3d point_on_line_with_z(const Eigen::Vector3d& c, const Eigen::Vector3d& x, double z) {
  const double s = (z - c.z()) / (x.z() - c.z());
  return c + s * (x - c);
}

}  // namespace

TEST(Emg, MomentsMatchClosedForm) {
  const EmgParams p{4.31, 0.44, 0.20};
  const auto xs = sample_emg(p, 7, 400000);
  EXPECT_NEAR(mean_of(xs), p.mean(), 0.02 * p.mean());
  EXPECT_NEAR(variance_of(xs), p.variance(), 0.05 * p.variance());
  EXPECT_NEAR(p.mean(), 0.44 + 4.31 * 0.20, 1e-12);
  EXPECT_NEAR(p.variance(), 0.04 * (1.0 + 4.31 * 4.31), 1e-12);
}

TEST(Emg, SamplesAreNonNegativeAndDeterministic) {
  const EmgParams p{1.0, -0.5, 0.3};
  const auto a = sample_emg(p, 11, 5000);
  const auto b = sample_emg(p, 11, 5000);
  const auto c = sample_emg(p, 12, 5000);
  EXPECT_EQ(a, b);
  EXPECT_NE(a, c);
  for (double x : a) ASSERT_GE(x, 0.0);
}

TEST(Emg, MeanInterpretationShiftsLocation) {
  const EmgParams loc = make_emg(4.31, 0.44, 0.20, EmgInterpretation::location);
  EXPECT_DOUBLE_EQ(loc.loc, 0.44);
  const EmgParams mean = make_emg(4.31, 1.302, 0.20, EmgInterpretation::mean);
  EXPECT_NEAR(mean.loc, 1.302 - 0.862, 1e-12);
  EXPECT_NEAR(mean.mean(), 1.302, 1e-12);
}

TEST(Emg, InvalidParametersRejected) {
  EXPECT_THROW(make_emg(0.0, 0.4, 0.2, EmgInterpretation::location), Error);
  EXPECT_THROW(make_emg(4.0, 0.4, -0.2, EmgInterpretation::location), Error);
  EXPECT_THROW(sample_emg(EmgParams{}, 1, 0), Error);
}

TEST(Sparsify, ConstantImageHasNoCorners) {
  const DenseImage intensity(64, 48, ChannelKind::intensity, 0.5f);
  const DenseImage depth(64, 48, ChannelKind::depth, 2.0f);
  const auto r = sparsify_depth(intensity, depth, 300, 3);
  EXPECT_EQ(r.corner_count, 0u);
  ASSERT_EQ(r.observations.size(), 300u);
  EXPECT_FALSE(r.short_of_points);
  std::vector<std::int64_t> ids;
  for (const auto& o : r.observations) {
    EXPECT_EQ(o.depth, 2.0);
    EXPECT_EQ(o.landmark_id, std::int64_t(o.pixel.v) * 64 + std::int64_t(o.pixel.u));
    ids.push_back(o.landmark_id);
  }
  std::sort(ids.begin(), ids.end());
  EXPECT_EQ(std::adjacent_find(ids.begin(), ids.end()), ids.end());
}

TEST(Sparsify, CheckerboardKeypointsSitOnCorners) {
  const int square = 8;
  const DenseImage intensity = checkerboard(128, 96, square);
  const DenseImage depth(128, 96, ChannelKind::depth, 1.0f);
  const auto r = sparsify_depth(intensity, depth, 100, 5);
  ASSERT_EQ(r.corner_count, 100u);
  ASSERT_EQ(r.observations.size(), 100u);
  for (const auto& o : r.observations) {
    // Corners lie at the half-pixel boundaries k * square - 0.5.
    const double cu = std::round((o.pixel.u + 0.5) / square) * square - 0.5;
    const double cv = std::round((o.pixel.v + 0.5) / square) * square - 0.5;
    EXPECT_LE(std::abs(o.pixel.u - cu), 0.5) << o.pixel.u;
    EXPECT_LE(std::abs(o.pixel.v - cv), 0.5) << o.pixel.v;
  }
}

TEST(Sparsify, ShortWhenTooFewValidPixels) {
  const DenseImage intensity(32, 24, ChannelKind::intensity, 0.5f);
  DenseImage depth(32, 24, ChannelKind::depth);
  for (int x = 0; x < 10; ++x) depth.at(x, 5) = 1.5f;
  const auto r = sparsify_depth(intensity, depth, 50, 1);
  EXPECT_TRUE(r.short_of_points);
  EXPECT_EQ(r.observations.size(), 10u);
  for (const auto& o : r.observations) EXPECT_EQ(o.pixel.v, 5.0);
}

TEST(Sparsify, Errors) {
  const DenseImage intensity(32, 24, ChannelKind::intensity, 0.5f);
  const DenseImage empty(32, 24, ChannelKind::depth);
  try {
    sparsify_depth(intensity, empty, 10, 1);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::insufficient_data);
  }
  EXPECT_THROW(sparsify_depth(intensity, DenseImage(16, 24, ChannelKind::depth, 1.0f), 10, 1), Error);
}

TEST(Sparsify, DeterministicForSeed) {
  Rng rng(4);
  DenseImage intensity(48, 32, ChannelKind::intensity);
  for (auto& v : intensity.values()) v = float(rng.uniform());
  const DenseImage depth(48, 32, ChannelKind::depth, 3.0f);
  const auto a = sparsify_depth(intensity, depth, 400, 9);
  const auto b = sparsify_depth(intensity, depth, 400, 9);
  EXPECT_EQ(a.observations, b.observations);
}

TEST(Perturb, ZeroTargetLeavesObservation) {
  const Intrinsics k = codemap::test::test_intrinsics();
  SparseObservation obs{42, {100.0, 80.0}, 2.5, 0.0};
  const auto out = perturb_along_ray(obs, Pose::identity(), Pose::from_translation({0.2, 0.0, 0.0}), k, 0.0, 1);
  ASSERT_TRUE(out.observation);
  EXPECT_EQ(*out.observation, obs);
}

TEST(Perturb, MovesAlongVirtualRayByTarget) {
  const Intrinsics k = codemap::test::test_intrinsics();
  Rng rng(21);
  int solved = 0;
  for (int trial = 0; trial < 200; ++trial) {
    const Pose ref = codemap::test::random_pose(rng, 0.3, 1.0);
    const Pose virt = ref * codemap::test::random_pose(rng, 0.1, 0.3);
    SparseObservation obs{trial, {rng.uniform(10, 245), rng.uniform(10, 180)}, rng.uniform(1.0, 5.0), 0.0};
    const double target = rng.uniform(0.2, 3.0);
    const int sign = rng.uniform() < 0.5 ? -1 : 1;
    const auto out = perturb_along_ray(obs, ref, virt, k, target, sign);
    if (!out.observation) {
      EXPECT_FALSE(out.diagnostic.empty());
      continue;
    }
    ++solved;
    const auto& moved = *out.observation;
    EXPECT_EQ(moved.pixel, obs.pixel);
    EXPECT_EQ(moved.rep_error, target);

    const Pose ref_from_virt = ref.inverse() * virt;
    const Eigen::Vector3d c = ref_from_virt.translation();
    const Eigen::Vector3d x = unproject(obs.pixel, obs.depth, k);
    const Eigen::Vector3d moved_pt = point_on_line_with_z(c, x, moved.depth);

    const PixelCoord in_ref = project(moved_pt, k);
    EXPECT_NEAR(std::hypot(in_ref.u - obs.pixel.u, in_ref.v - obs.pixel.v), target, 1.1e-3);

    const Pose virt_from_ref = ref_from_virt.inverse();
    const PixelCoord v0 = project(virt_from_ref * x, k);
    const PixelCoord v1 = project(virt_from_ref * moved_pt, k);
    EXPECT_NEAR(v0.u, v1.u, 1e-6);
    EXPECT_NEAR(v0.v, v1.v, 1e-6);

    const double before = (x - c).norm();
    const double after = (moved_pt - c).norm();
    if (sign > 0)
      EXPECT_GT(after, before);
    else
      EXPECT_LT(after, before);
  }
  EXPECT_GT(solved, 150);
}

TEST(Perturb, OnePointFivePixelExample) {
  const Intrinsics k = codemap::test::test_intrinsics();
  SparseObservation obs{1, {127.5, 95.5}, 2.0, 0.0};
  const Pose virt = Pose::from_translation({0.1, 0.0, 0.0});
  const auto out = perturb_along_ray(obs, Pose::identity(), virt, k, 1.5, 1);
  ASSERT_TRUE(out.observation);
  // Principal ray, virtual camera 0.1 m to the side: u shift = fx * 0.1 * (1/z - 1/z').
  const double z = out.observation->depth;
  const Eigen::Vector3d p = point_on_line_with_z({0.1, 0.0, 0.0}, {0.0, 0.0, 2.0}, z);
  EXPECT_NEAR(std::abs(project(p, k).u - 127.5), 1.5, 1e-3);
  EXPECT_GT(z, 2.0);
}

TEST(Perturb, FarVirtualCameraRejected) {
  const Intrinsics k = codemap::test::test_intrinsics();
  SparseObservation obs{1, {100.0, 100.0}, 2.0, 0.0};
  try {
    perturb_along_ray(obs, Pose::identity(), Pose::from_translation({2.5, 0.0, 0.0}), k, 1.0, 1);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::invalid_argument);
  }
}

class TrainingPairTest : public ::testing::Test {
 protected:
  void SetUp() override {
    SequenceOptions opts;
    opts.n_points = 300;
    frames_ = make_sequence(preset_scene("plane"), opts);
    ASSERT_GE(frames_.size(), 2u);
  }
  std::vector<KeyframePacket> frames_;
};

TEST_F(TrainingPairTest, ZeroGainKeepsGroundTruth) {
  TrainingPairOptions o;
  o.error_gain = 0.0;
  const auto pair = build_training_pair(frames_[0], frames_[1].pose, EmgParams{}, 500, 3, o);
  EXPECT_EQ(pair.dropped_points, 0u);
  std::size_t n = 0;
  for (std::size_t i = 0; i < pair.gt_depth.size(); ++i) {
    EXPECT_EQ(pair.conditioning.rep_error[i], 0.0f);
    if (pair.conditioning.sparse_depth[i] > 0.0f) {
      ++n;
      EXPECT_EQ(pair.conditioning.sparse_depth[i], pair.gt_depth[i]);
    }
  }
  EXPECT_EQ(n, 500u);
  EXPECT_EQ(pair.conditioning.intensity, frames_[0].intensity);
}

TEST_F(TrainingPairTest, ErrorsFollowEmg) {
  const EmgParams p{};
  std::vector<double> errors;
  std::size_t requested = 0, dropped = 0;
  for (std::uint64_t seed = 1; seed <= 6; ++seed) {
    const auto pair = build_training_pair(frames_[0], frames_[1].pose, p, 2000, seed);
    requested += pair.requested_points;
    dropped += pair.dropped_points;
    for (std::size_t i = 0; i < pair.gt_depth.size(); ++i) {
      const float s = pair.conditioning.sparse_depth[i];
      const float r = pair.conditioning.rep_error[i];
      if (s > 0.0f) {
        errors.push_back(r);
        EXPECT_NE(s, pair.gt_depth[i]);
      } else {
        EXPECT_EQ(r, 0.0f);
      }
    }
  }
  EXPECT_EQ(errors.size() + dropped, requested);
  EXPECT_LT(double(dropped), 0.05 * double(requested));
  EXPECT_NEAR(mean_of(errors), p.mean(), 0.03 * p.mean());
}

TEST_F(TrainingPairTest, DeterministicAndValidated) {
  const auto a = build_training_pair(frames_[0], frames_[1].pose, EmgParams{}, 400, 8);
  const auto b = build_training_pair(frames_[0], frames_[1].pose, EmgParams{}, 400, 8);
  EXPECT_EQ(a.conditioning.sparse_depth, b.conditioning.sparse_depth);
  EXPECT_EQ(a.conditioning.rep_error, b.conditioning.rep_error);

  KeyframePacket no_gt = frames_[0];
  no_gt.gt_depth.reset();
  EXPECT_THROW(build_training_pair(no_gt, frames_[1].pose, EmgParams{}, 400, 8), Error);
  const Pose far = frames_[0].pose * Pose::from_translation({3.0, 0.0, 0.0});
  EXPECT_THROW(build_training_pair(frames_[0], far, EmgParams{}, 400, 8), Error);
}
