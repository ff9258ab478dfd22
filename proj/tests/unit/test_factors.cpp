#include <algorithm>
#include <cmath>
#include <numeric>

#include <gtest/gtest.h>

#include "codemap/error.hpp"
#include "codemap/factors.hpp"
#include "codemap/synth.hpp"
#include "factor_fixtures.hpp"
#include "test_support.hpp"

using namespace codemap;
using codemap::test::Rng;

namespace {

constexpr int kCode = 8;

class FactorTest : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    SequenceOptions opts;
    opts.n_points = 300;
    frames_ = new std::vector<KeyframePacket>(make_sequence(preset_scene("plane"), opts));
    decoders_ = new std::vector<std::shared_ptr<LinearDecoder>>();
    for (const auto& f : *frames_) decoders_->push_back(codemap::test::gt_decoder(f, kCode));
  }
  static void TearDownTestSuite() {
    delete frames_;
    delete decoders_;
  }

  static FactorFrame frame(std::size_t i) { return codemap::test::factor_frame((*frames_)[i], *(*decoders_)[i]); }
  static std::vector<std::size_t> grid() {
    const auto& k = (*frames_)[0].intrinsics;
    return grid_samples(k.width, k.height, 4);
  }

  static std::vector<KeyframePacket>* frames_;
  static std::vector<std::shared_ptr<LinearDecoder>>* decoders_;
};

std::vector<KeyframePacket>* FactorTest::frames_ = nullptr;
std::vector<std::shared_ptr<LinearDecoder>>* FactorTest::decoders_ = nullptr;

const Eigen::VectorXd kZero = Eigen::VectorXd::Zero(kCode);

void expect_finite(const FactorResidual& r) {
  EXPECT_TRUE(r.residuals.allFinite());
  EXPECT_TRUE(r.jacobian_i.allFinite());
  if (r.has_jacobian_j) {
    EXPECT_TRUE(r.jacobian_j.allFinite());
  }
  EXPECT_EQ(r.residuals.size(), Eigen::Index(r.block_count()) * r.block_size);
  EXPECT_EQ(r.robust_weights.size(), r.block_count());
}

}  // namespace

TEST(Huber, WeightExamples) {
  const HuberParams p{0.5};
  EXPECT_EQ(huber_weight(0.0, p), 1.0);
  EXPECT_EQ(huber_weight(0.5, p), 1.0);
  EXPECT_DOUBLE_EQ(huber_weight(1.0, p), 0.5);
  EXPECT_DOUBLE_EQ(huber_cost(0.25, p), 0.0625);
  // Continuous at the knee and linear beyond it.
  EXPECT_NEAR(huber_cost(0.5 + 1e-9, p), 0.25, 1e-8);
  EXPECT_NEAR(huber_cost(3.0, p) - huber_cost(2.0, p), 2.0 * 0.5, 1e-12);
}

TEST(Grid, StrideFourOffset) {
  const auto s = grid_samples(16, 8, 4);
  ASSERT_EQ(s.size(), 8u);
  EXPECT_EQ(s[0], 2u * 16u + 2u);
  EXPECT_EQ(s[1], 2u * 16u + 6u);
  EXPECT_EQ(s[4], 6u * 16u + 2u);
  EXPECT_EQ(grid_samples(256, 192, 4).size(), 64u * 48u);
  EXPECT_THROW(grid_samples(16, 8, 0), Error);
}

TEST_F(FactorTest, PhotometricSelfPairIsZero) {
  const auto f = frame(0);
  const auto s = grid();
  const auto r = photometric_factor(f, f, kZero, s, {});
  ASSERT_EQ(r.block_count(), s.size());
  EXPECT_LT(r.residuals.cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_LT(robust_energy(r, {}), 1e-20);
}

TEST_F(FactorTest, PhotometricConstantImagesAreZero) {
  const DenseImage flat(frame(0).intrinsics.width, frame(0).intrinsics.height, ChannelKind::intensity, 0.3f);
  auto fi = frame(0);
  auto fj = frame(1);
  fi.intensity = &flat;
  fj.intensity = &flat;
  Rng rng(3);
  for (int t = 0; t < 5; ++t) {
    const auto r = photometric_factor(fi, fj, rng.gaussian(kCode, 0.5), grid(), {});
    EXPECT_GT(r.block_count(), 0u);
    EXPECT_LT(r.residuals.cwiseAbs().maxCoeff(), 1e-12);
    EXPECT_LT(r.jacobian_i.cwiseAbs().maxCoeff(), 1e-12);
  }
}

TEST_F(FactorTest, PhotometricGroundTruthIsSmall) {
  // Bilinear resampling error grows with texture frequency; 0.25 m cells keep
  // it below the bound.
  SceneSpec spec = preset_scene("plane");
  std::get<PlanePrimitive>(spec.primitives[0]).texture.cell = 0.25;
  SequenceOptions opts;
  opts.n_points = 300;
  spec.trajectory.resize(2);
  spec.timestamps.resize(2);
  const auto kfs = make_sequence(spec, opts);
  const auto d0 = codemap::test::gt_decoder(kfs[0], kCode);
  const auto d1 = codemap::test::gt_decoder(kfs[1], kCode);
  const auto r = photometric_factor(codemap::test::factor_frame(kfs[0], *d0), codemap::test::factor_frame(kfs[1], *d1),
                                    kZero, grid(), {});
  ASSERT_GT(r.block_count(), 1000u);
  EXPECT_LT(r.residuals.cwiseAbs().mean(), 1e-3);
}

TEST_F(FactorTest, ReprojectionGroundTruthIsZero) {
  const auto fi = frame(0);
  const auto* m = (*frames_)[0].matches_with((*frames_)[1].id);
  ASSERT_NE(m, nullptr);
  ASSERT_FALSE(m->empty());
  const auto r = reprojection_factor(fi, frame(1), kZero, *m, {});
  EXPECT_EQ(r.block_size, 2);
  ASSERT_GT(r.block_count(), 0u);
  EXPECT_LT(r.residuals.cwiseAbs().maxCoeff(), 1e-6);
}

TEST_F(FactorTest, ReprojectionDisplacedMatch) {
  const auto* m = (*frames_)[0].matches_with((*frames_)[1].id);
  ASSERT_NE(m, nullptr);
  Correspondence c = m->front();
  c.pixel_j.u += 1.2;
  c.pixel_j.v -= 1.6;
  const std::vector<Correspondence> one{c};
  const auto r = reprojection_factor(frame(0), frame(1), kZero, one, {});
  ASSERT_EQ(r.block_count(), 1u);
  EXPECT_NEAR(r.residuals.norm(), 2.0, 1e-6);
}

TEST_F(FactorTest, ReprojectionIdentityPair) {
  Rng rng(5);
  std::vector<Correspondence> ms;
  for (int k = 0; k < 50; ++k) {
    const PixelCoord x{double(rng.integer(0, 255)), double(rng.integer(0, 191))};
    ms.push_back({x, x, k});
  }
  const auto r = reprojection_factor(frame(2), frame(2), kZero, ms, {});
  ASSERT_EQ(r.block_count(), ms.size());
  EXPECT_LT(r.residuals.cwiseAbs().maxCoeff(), 1e-9);
}

TEST_F(FactorTest, GeometricIdenticalFramesZero) {
  Rng rng(6);
  const auto f = frame(1);
  const Eigen::VectorXd c = rng.gaussian(kCode, 0.3);
  const auto r = geometric_factor(f, f, c, c, grid(), {});
  ASSERT_GT(r.block_count(), 0u);
  EXPECT_LT(r.residuals.cwiseAbs().maxCoeff(), 1e-9);
}

TEST_F(FactorTest, GeometricOffsetGivesMinusEpsilon) {
  const double eps = 0.05;
  const auto shifted = codemap::test::gt_decoder((*frames_)[1], kCode, eps);
  const auto fi = frame(1);
  const auto fj = codemap::test::factor_frame((*frames_)[1], *shifted);
  const auto r = geometric_factor(fi, fj, kZero, kZero, grid(), {});
  ASSERT_GT(r.block_count(), 0u);
  for (Eigen::Index k = 0; k < r.residuals.size(); ++k) ASSERT_NEAR(r.residuals[k], -eps, 1e-6);
}

TEST_F(FactorTest, GeometricGroundTruthViews) {
  const auto r = geometric_factor(frame(0), frame(1), kZero, kZero, grid(), {});
  ASSERT_GT(r.block_count(), 1000u);
  EXPECT_LT(r.residuals.cwiseAbs().maxCoeff(), 1e-3);
  EXPECT_TRUE(r.has_jacobian_j);
}

TEST(Prior, Examples) {
  EXPECT_EQ(zero_code_prior(Eigen::VectorXd::Zero(4), 1.0, {}).residuals.norm(), 0.0);
  const Eigen::VectorXd e1 = Eigen::VectorXd::Unit(6, 0);
  const auto r = zero_code_prior(e1, 4.0, {});
  EXPECT_DOUBLE_EQ(r.residuals.norm(), 2.0);
  EXPECT_TRUE(r.jacobian_i.isApprox(2.0 * RowMatrix::Identity(6, 6), 0.0));
  EXPECT_DOUBLE_EQ(robust_energy(r, {}), 4.0);
  EXPECT_THROW(zero_code_prior(e1, 0.0, {}), Error);
}

TEST(Prior, NotRobustified) {
  // Far outside any Huber knee the prior stays quadratic.
  const Eigen::VectorXd c = Eigen::VectorXd::Constant(3, 10.0);
  EXPECT_DOUBLE_EQ(robust_energy(zero_code_prior(c, 1.0, {}), HuberParams{0.1}), 300.0);
}

TEST_F(FactorTest, JacobiansMatchFiniteDifferences) {
  Rng rng(2024);
  const auto all = grid();
  const std::size_t n = frames_->size();
  for (int cfg = 0; cfg < 20; ++cfg) {
    // A consecutive pair in a random direction.
    const std::size_t i = std::size_t(rng.integer(0, int(n) - 2));
    const std::size_t a = rng.uniform() < 0.5 ? i : i + 1;
    const std::size_t b = a == i ? i + 1 : i;
    const auto fi = frame(a);
    const auto fj = frame(b);
    const Eigen::VectorXd ci = rng.gaussian(kCode, 0.4);
    const Eigen::VectorXd cj = rng.gaussian(kCode, 0.4);
    std::vector<std::size_t> samples;
    for (std::size_t s : all)
      if (rng.uniform() < 0.3) samples.push_back(s);
    SCOPED_TRACE("config " + std::to_string(cfg));

    const auto photo = [&](const Eigen::VectorXd& c) { return photometric_factor(fi, fj, c, samples, {}); };
    const auto p0 = photo(ci);
    ASSERT_GT(p0.block_count(), 50u);
    EXPECT_LT(codemap::test::relative_jacobian_error(p0.jacobian_i,
                                                     codemap::test::central_difference(photo, p0, ci, 1e-6)),
              1e-3);

    const auto* m = (*frames_)[a].matches_with((*frames_)[b].id);
    ASSERT_NE(m, nullptr);
    const auto rep = [&](const Eigen::VectorXd& c) { return reprojection_factor(fi, fj, c, *m, {}); };
    const auto r0 = rep(ci);
    ASSERT_GT(r0.block_count(), 5u);
    EXPECT_LT(codemap::test::relative_jacobian_error(r0.jacobian_i,
                                                     codemap::test::central_difference(rep, r0, ci, 1e-6)),
              1e-5);

    const auto geo_i = [&](const Eigen::VectorXd& c) { return geometric_factor(fi, fj, c, cj, samples, {}); };
    const auto geo_j = [&](const Eigen::VectorXd& c) { return geometric_factor(fi, fj, ci, c, samples, {}); };
    const auto g0 = geo_i(ci);
    ASSERT_GT(g0.block_count(), 50u);
    EXPECT_LT(codemap::test::relative_jacobian_error(g0.jacobian_i,
                                                     codemap::test::central_difference(geo_i, g0, ci, 1e-6)),
              1e-5);
    EXPECT_LT(codemap::test::relative_jacobian_error(g0.jacobian_j,
                                                     codemap::test::central_difference(geo_j, g0, cj, 1e-6)),
              1e-5);

    const double w = rng.uniform(0.1, 5.0);
    const auto prior = [&](const Eigen::VectorXd& c) { return zero_code_prior(c, w, {}); };
    const auto z0 = prior(ci);
    EXPECT_LT(codemap::test::relative_jacobian_error(z0.jacobian_i,
                                                     codemap::test::central_difference(prior, z0, ci, 1e-6)),
              1e-5);
  }
}

TEST_F(FactorTest, PermutationInvariance) {
  Rng rng(8);
  auto samples = grid();
  const Eigen::VectorXd ci = rng.gaussian(kCode, 0.3);
  const Eigen::VectorXd cj = rng.gaussian(kCode, 0.3);
  const HuberParams h{0.05};
  const double e_photo = robust_energy(photometric_factor(frame(0), frame(1), ci, samples, {}), h);
  const double e_geo = robust_energy(geometric_factor(frame(0), frame(1), ci, cj, samples, {}), h);
  auto matches = *(*frames_)[0].matches_with((*frames_)[1].id);
  const double e_rep = robust_energy(reprojection_factor(frame(0), frame(1), ci, matches, {}), h);
  for (int t = 0; t < 5; ++t) {
    std::shuffle(samples.begin(), samples.end(), rng.engine());
    std::shuffle(matches.begin(), matches.end(), rng.engine());
    EXPECT_NEAR(robust_energy(photometric_factor(frame(0), frame(1), ci, samples, {}), h), e_photo, 1e-10);
    EXPECT_NEAR(robust_energy(geometric_factor(frame(0), frame(1), ci, cj, samples, {}), h), e_geo, 1e-10);
    EXPECT_NEAR(robust_energy(reprojection_factor(frame(0), frame(1), ci, matches, {}), h), e_rep, 1e-10);
  }
}

TEST_F(FactorTest, OutOfViewSamplesNeverProduceNan) {
  Rng rng(9);
  const auto samples = grid();
  for (int t = 0; t < 20; ++t) {
    auto fi = frame(0);
    auto fj = frame(1);
    fj.pose = fi.pose * codemap::test::random_pose(rng, 1.5, 3.0);
    const Eigen::VectorXd ci = rng.gaussian(kCode, 3.0);
    const Eigen::VectorXd cj = rng.gaussian(kCode, 3.0);
    const auto p = photometric_factor(fi, fj, ci, samples, {});
    const auto g = geometric_factor(fi, fj, ci, cj, samples, {});
    const auto r = reprojection_factor(fi, fj, ci, *(*frames_)[0].matches_with((*frames_)[1].id), {});
    for (const auto* f : {&p, &g, &r}) {
      expect_finite(*f);
      EXPECT_GE(robust_energy(*f, {}), 0.0);
    }
    EXPECT_LE(p.block_count(), samples.size());
  }
}

TEST_F(FactorTest, FullyOutOfViewIsEmpty) {
  auto fj = frame(1);
  fj.pose = frame(0).pose * Pose::from_axis_angle(Eigen::Vector3d::UnitY(), 3.14159, {0.0, 0.0, 0.0});
  const auto p = photometric_factor(frame(0), fj, kZero, grid(), {});
  const auto g = geometric_factor(frame(0), fj, kZero, kZero, grid(), {});
  EXPECT_TRUE(p.empty());
  EXPECT_TRUE(g.empty());
  EXPECT_EQ(robust_energy(p, {}), 0.0);
}

TEST_F(FactorTest, WithoutJacobians) {
  EvalOptions o;
  o.jacobians = false;
  const auto with = photometric_factor(frame(0), frame(1), kZero, grid(), {});
  const auto without = photometric_factor(frame(0), frame(1), kZero, grid(), o);
  EXPECT_EQ(with.residuals, without.residuals);
  EXPECT_EQ(without.jacobian_i.size(), 0);
}

TEST_F(FactorTest, CodeSizeMismatchRejected) {
  try {
    photometric_factor(frame(0), frame(1), Eigen::VectorXd::Zero(kCode + 1), grid(), {});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::dimension_mismatch);
  }
}
