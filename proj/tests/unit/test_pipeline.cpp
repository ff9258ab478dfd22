#include <algorithm>
#include <chrono>
#include <cmath>
#include <thread>

#include <gtest/gtest.h>

#include "codemap/error.hpp"
#include "codemap/pipeline.hpp"
#include "codemap/synth.hpp"
#include "test_support.hpp"

using namespace codemap;
using codemap::test::Rng;

namespace {

/// Minimal valid packet with the given landmark observations and no sparse depth.
KeyframePacket bare_packet(std::int64_t id, double timestamp, const std::vector<std::int64_t>& landmarks) {
  const Intrinsics k = codemap::test::small_intrinsics();
  KeyframePacket p;
  p.id = id;
  p.timestamp = timestamp;
  p.intrinsics = k;
  p.intensity = DenseImage(k.width, k.height, ChannelKind::intensity, 0.5f);
  p.sparse_depth = DenseImage(k.width, k.height, ChannelKind::depth);
  p.rep_error = DenseImage(k.width, k.height, ChannelKind::rep_error);
  for (std::int64_t l : landmarks) p.observations.push_back({l, {1.0, 1.0}, 1.0, 0.0});
  return p;
}

std::vector<std::int64_t> range(std::int64_t first, std::int64_t count) {
  std::vector<std::int64_t> out;
  for (std::int64_t k = 0; k < count; ++k) out.push_back(first + k);
  return out;
}

const std::vector<KeyframePacket>& plane_sequence() {
  static const auto seq = make_sequence(preset_scene("plane"), SequenceOptions{});
  return seq;
}

MapperConfig small_config() {
  MapperConfig c;
  AnalyticDecoderConfig d;
  d.code_size = 8;
  c.decoder_factory = analytic_decoder_factory(d);
  return c;
}

}  // namespace

TEST(Metrics, Examples) {
  DenseImage gt(3, 1, ChannelKind::depth, 2.0f);
  DenseImage pred = gt;
  auto m = evaluate_depth(pred, gt);
  EXPECT_EQ(m.mae, 0.0);
  EXPECT_EQ(m.rmse, 0.0);
  EXPECT_EQ(m.count, 3u);

  for (std::size_t i = 0; i < pred.size(); ++i) pred[i] = gt[i] + 0.5f;
  m = evaluate_depth(pred, gt);
  EXPECT_NEAR(m.mae, 0.5, 1e-12);
  EXPECT_NEAR(m.rmse, 0.5, 1e-12);

  pred = gt;
  pred[2] = 4.0f;
  m = evaluate_depth(pred, gt);
  EXPECT_NEAR(m.mae, 2.0 / 3.0, 1e-12);
  EXPECT_NEAR(m.rmse, std::sqrt(4.0 / 3.0), 1e-12);
}

TEST(Metrics, InvalidGroundTruthIgnored) {
  DenseImage gt(2, 2, ChannelKind::depth, 1.0f);
  gt[1] = 0.0f;
  gt[3] = std::nanf("");
  DenseImage pred(2, 2, ChannelKind::depth, 1.25f);
  pred[1] = 100.0f;
  pred[3] = -7.0f;
  const auto m = evaluate_depth(pred, gt);
  EXPECT_EQ(m.count, 2u);
  EXPECT_NEAR(m.mae, 0.25, 1e-12);
  EXPECT_THROW(evaluate_depth(pred, DenseImage(2, 2, ChannelKind::depth, 0.0f)), Error);
  EXPECT_THROW(evaluate_depth(pred, DenseImage(3, 2, ChannelKind::depth, 1.0f)), Error);
}

TEST(Metrics, MatchesBruteForceAndRmseBoundsMae) {
  Rng rng(11);
  for (int trial = 0; trial < 50; ++trial) {
    const int w = rng.integer(1, 20), h = rng.integer(1, 20);
    DenseImage gt(w, h, ChannelKind::depth), pred(w, h, ChannelKind::depth);
    for (std::size_t i = 0; i < gt.size(); ++i) {
      gt[i] = rng.uniform() < 0.2 ? 0.0f : float(rng.uniform(0.2, 8.0));
      pred[i] = float(rng.uniform(0.0, 8.0));
    }
    gt[0] = 1.0f;
    double abs_sum = 0.0, sq_sum = 0.0;
    int n = 0;
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        if (gt.at(x, y) <= 0.0f) continue;
        const double e = double(pred.at(x, y)) - double(gt.at(x, y));
        abs_sum += std::abs(e);
        sq_sum += e * e;
        ++n;
      }
    }
    const auto m = evaluate_depth(pred, gt);
    ASSERT_EQ(m.count, std::size_t(n));
    EXPECT_NEAR(m.mae, abs_sum / n, 1e-12);
    EXPECT_NEAR(m.rmse, std::sqrt(sq_sum / n), 1e-12);
    EXPECT_GE(m.rmse, m.mae - 1e-15);
  }
}

TEST(ValidatePacket, RejectsBrokenInvariants) {
  EXPECT_NO_THROW(validate_packet(bare_packet(1, 0.0, {})));
  auto p = bare_packet(1, 0.0, {});
  p.rep_error = DenseImage(10, 10, ChannelKind::rep_error);
  EXPECT_THROW(validate_packet(p), Error);
  p = bare_packet(1, 0.0, {});
  p.sparse_depth[3] = -1.0f;
  EXPECT_THROW(validate_packet(p), Error);
  p = bare_packet(1, 0.0, {});
  p.rep_error[3] = 1.0f;  // error without a sparse point
  EXPECT_THROW(validate_packet(p), Error);
  p = bare_packet(1, 0.0, {});
  p.gt_depth = DenseImage(5, 5, ChannelKind::depth, 1.0f);
  EXPECT_THROW(validate_packet(p), Error);
  p = bare_packet(1, std::nan(""), {});
  EXPECT_THROW(validate_packet(p), Error);
  p = bare_packet(1, 0.0, {7});
  p.observations[0].depth = 0.0;
  EXPECT_THROW(validate_packet(p), Error);
}

TEST(Mapper, DuplicatePacketPredictedOnce) {
  Mapper mapper(small_config());
  const auto& seq = plane_sequence();
  EXPECT_FALSE(mapper.ingest(seq[0]).duplicate);
  for (int k = 0; k < 3; ++k) {
    const auto r = mapper.ingest(seq[0]);
    EXPECT_TRUE(r.accepted);
    EXPECT_TRUE(r.duplicate);
  }
  EXPECT_EQ(mapper.pending(), 1u);
  while (mapper.step()) {
  }
  mapper.ingest(seq[0]);
  EXPECT_EQ(mapper.pending(), 0u);
  EXPECT_EQ(mapper.prediction_count(), 1u);
}

TEST(Mapper, MismatchedImageSizesRejected) {
  Mapper mapper(small_config());
  auto p = plane_sequence()[0];
  p.sparse_depth = DenseImage(p.intensity.width() / 2, p.intensity.height(), ChannelKind::depth);
  p.rep_error = p.sparse_depth;
  const auto r = mapper.ingest(p);
  EXPECT_FALSE(r.accepted);
  EXPECT_FALSE(r.reason.empty());
  EXPECT_TRUE(mapper.keyframes().empty());
  EXPECT_EQ(mapper.pending(), 0u);
}

TEST(Mapper, FourPacketsGiveOneWindow) {
  Mapper mapper(small_config());
  const auto& seq = plane_sequence();
  ASSERT_EQ(seq.size(), 4u);
  for (const auto& p : seq) ASSERT_TRUE(mapper.ingest(p).accepted);
  const auto r = mapper.step();
  ASSERT_TRUE(r);
  EXPECT_FALSE(mapper.step());
  EXPECT_EQ(mapper.windows_scheduled(), 1u);
  auto ids = r->ids;
  std::sort(ids.begin(), ids.end());
  std::vector<std::int64_t> expected;
  for (const auto& p : seq) expected.push_back(p.id);
  EXPECT_EQ(ids, expected);
  EXPECT_EQ(mapper.processed().size(), 4u);
  EXPECT_EQ(mapper.prediction_count(), 4u);
  ASSERT_TRUE(r->report);
  EXPECT_TRUE(r->report->ok);
}

TEST(Mapper, WindowFollowsSharedLandmarks) {
  // kf9 sees landmarks 0..99; kf8, kf2 and kf5 share 50, 40 and 30 of them.
  const std::map<std::int64_t, int> shared{{8, 50}, {2, 40}, {5, 30}, {0, 9}, {1, 1}, {3, 5}, {4, 2}, {6, 7}, {7, 3}};
  Mapper mapper(small_config());
  for (std::int64_t id = 0; id < 9; ++id) {
    auto lm = range(0, shared.at(id));
    auto own = range(1000 * (id + 1), 20);
    lm.insert(lm.end(), own.begin(), own.end());
    ASSERT_TRUE(mapper.ingest(bare_packet(id, double(id), lm)).accepted);
  }
  mapper.ingest(bare_packet(9, 9.0, range(0, 100)));
  EXPECT_EQ(mapper.covisibility(9, 8), 50u);
  EXPECT_EQ(mapper.covisibility(8, 9), 50u);
  EXPECT_EQ(mapper.select_window(9), (std::vector<std::int64_t>{9, 8, 2, 5}));
}

TEST(Mapper, TiesGoToMoreRecentKeyframes) {
  Mapper mapper(small_config());
  for (std::int64_t id = 0; id < 5; ++id) mapper.ingest(bare_packet(id, double(id), range(0, 10)));
  EXPECT_EQ(mapper.select_window(2), (std::vector<std::int64_t>{2, 4, 3, 1}));
}

TEST(Mapper, NoSharedLandmarksFallsBackToMostRecent) {
  Mapper mapper(small_config());
  for (std::int64_t id = 0; id < 6; ++id) mapper.ingest(bare_packet(id, double(id), range(100 * id, 10)));
  EXPECT_EQ(mapper.select_window(5), (std::vector<std::int64_t>{5, 4, 3, 2}));
  // One covisible keyframe takes the first slot, the rest are filled by recency.
  mapper.ingest(bare_packet(6, 6.0, {0, 1, 2}));
  EXPECT_EQ(mapper.select_window(6), (std::vector<std::int64_t>{6, 0, 5, 4}));
}

TEST(Mapper, KeyframeWithoutSparsePointsIsSkipped) {
  Mapper mapper(small_config());
  auto seq = plane_sequence();
  const std::int64_t dropped = seq[1].id;
  for (auto& v : seq[1].sparse_depth.values()) v = 0.0f;
  for (auto& v : seq[1].rep_error.values()) v = 0.0f;
  for (const auto& p : seq) ASSERT_TRUE(mapper.ingest(p).accepted);
  const auto r = mapper.step();
  ASSERT_TRUE(r);
  EXPECT_EQ(r->skipped, (std::vector<std::int64_t>{dropped}));
  EXPECT_EQ(r->ids.size(), 3u);
  EXPECT_EQ(std::count(r->ids.begin(), r->ids.end(), dropped), 0);
  ASSERT_TRUE(r->report);
  EXPECT_TRUE(r->report->ok);
  EXPECT_TRUE(mapper.keyframes().at(dropped).decoder_failed);
  EXPECT_FALSE(mapper.keyframes().at(dropped).refined_depth);
}

TEST(Mapper, ReprocessingIsIdempotentAndRefinementHelps) {
  Mapper mapper(MapperConfig{});
  for (const auto& p : plane_sequence()) mapper.ingest(p);
  const auto first = mapper.step();
  ASSERT_TRUE(first && first->report && first->report->ok);
  EXPECT_GT(first->energy_change, 0.0);

  double initial = 0.0, refined = 0.0;
  for (const auto& [id, kf] : mapper.keyframes()) {
    ASSERT_TRUE(kf.initial_depth && kf.refined_depth);
    initial += evaluate_depth(*kf.initial_depth, *kf.packet.gt_depth).mae;
    refined += evaluate_depth(*kf.refined_depth, *kf.packet.gt_depth).mae;
  }
  EXPECT_LE(refined, initial);

  const auto again = mapper.process_window(first->ids);
  EXPECT_LT(std::abs(again.energy_change), 1e-9);
  EXPECT_EQ(mapper.prediction_count(), 4u);
}

TEST(AsyncMapper, IngestDoesNotWaitForSolve) {
  auto config = MapperConfig{};
  config.problem.solver.max_iterations = 50;
  AsyncMapper mapper(config);
  const auto& seq = plane_sequence();
  for (std::size_t k = 0; k + 1 < seq.size(); ++k) ASSERT_TRUE(mapper.ingest(seq[k]).accepted);
  const auto deadline = std::chrono::steady_clock::now() + std::chrono::seconds(5);
  while (!mapper.busy() && std::chrono::steady_clock::now() < deadline) std::this_thread::yield();

  double worst = 0.0;
  bool overlapped = false;
  for (int k = 0; k < 5; ++k) {
    KeyframePacket p = seq.back();
    const bool busy = mapper.busy();
    const auto t0 = std::chrono::steady_clock::now();
    const auto r = mapper.ingest(std::move(p));
    worst = std::max(worst, std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
    overlapped = overlapped || busy;
    EXPECT_TRUE(r.accepted);
  }
  EXPECT_TRUE(overlapped);
  EXPECT_LT(worst, 0.010);
  mapper.flush();
  EXPECT_FALSE(mapper.busy());
  EXPECT_EQ(mapper.prediction_count(), seq.size());
  EXPECT_EQ(mapper.refined_depths().size(), seq.size());
  mapper.stop();
  EXPECT_FALSE(mapper.ingest(seq[0]).accepted);
}
