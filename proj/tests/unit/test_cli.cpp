#ifdef CODEMAP_HAVE_CLI

#include <fstream>
#include <map>

#include <gtest/gtest.h>

#include "cli/commands.hpp"
#include "codemap/error.hpp"
#include "codemap/fusion.hpp"
#include "codemap/io.hpp"
#include "test_support.hpp"

using namespace codemap;
using codemap::test::TempDir;
namespace fs = std::filesystem;

namespace {

/// Simulated plane sequence and one default map run, shared by the tests.
struct Workspace {
  TempDir dir;
  cli::MapSummary summary;

  Workspace() {
    cli::simulate({"plane", dir / "seq", false, 0, 1000});
    summary = cli::map({dir / "seq", dir / "map", std::nullopt, std::nullopt, std::nullopt});
  }
  fs::path seq() const { return dir / "seq"; }
  fs::path mapped() const { return dir / "map"; }
};

const Workspace& workspace() {
  static const Workspace w;
  return w;
}

std::map<std::int64_t, std::map<std::string, DepthMetrics>> by_frame(const std::vector<cli::FrameMetrics>& rows) {
  std::map<std::int64_t, std::map<std::string, DepthMetrics>> out;
  for (const auto& r : rows) out[r.id][r.stage] = r.metrics;
  return out;
}

}  // namespace

TEST(Cli, SimulateLoadsBackAndIsDeterministic) {
  TempDir dir;
  cli::simulate({"plane", dir / "a", true, 3, 500});
  cli::simulate({"plane", dir / "b", true, 3, 500});
  const Sequence seq = load_sequence(dir / "a");
  ASSERT_EQ(seq.packets.size(), 4u);
  bool nonzero = false;
  for (const auto& p : seq.packets) {
    EXPECT_NO_THROW(validate_packet(p));
    for (std::size_t i = 0; i < p.rep_error.size(); ++i)
      nonzero = nonzero || (p.rep_error[i] > 0.0f && p.rep_error[i] != kUnmatchedRepError);
  }
  EXPECT_TRUE(nonzero);
  for (const auto& entry : fs::directory_iterator(dir / "a"))
    EXPECT_EQ(read_file_bytes(entry.path()), read_file_bytes(dir / "b" / entry.path().filename()))
        << entry.path().filename();
  EXPECT_THROW(cli::simulate({"no_such_scene", dir / "c", false, 0, 1000}), Error);
}

TEST(Cli, PerturbWritesOnePairPerEligibleFrame) {
  const auto& w = workspace();
  TempDir out;
  const auto s = cli::perturb({w.seq(), out.path(), EmgParams{}, 1000, 0});
  EXPECT_EQ(s.pairs, 4u);
  EXPECT_TRUE(s.skipped.empty());
  const TrainingPairManifest pm = parse_pairs(read_text_file(out / kPairsFile));
  ASSERT_EQ(pm.pairs.size(), 4u);
  for (const auto& e : pm.pairs) {
    EXPECT_NE(e.frame_id, e.neighbor_id);
    for (const char* role : {"intensity", "sparse_depth", "rep_error", "gt_depth"})
      EXPECT_TRUE(fs::exists(out / e.images.at(role))) << role;
  }
}

TEST(Cli, PerturbSkipsFramesWithoutNearbyNeighbor) {
  TempDir dir;
  std::ofstream(dir / "far.scene") << "plane 0 0 6 1 0 0 0 0 0 3 0.5 0.4\n"
                                      "pose 0 0 0 1 0 0 0\n"
                                      "pose 3 0 0 1 0 0 0\n";
  cli::simulate({(dir / "far.scene").string(), dir / "seq", false, 0, 300});
  const auto s = cli::perturb({dir / "seq", dir / "pairs", EmgParams{}, 300, 0});
  EXPECT_EQ(s.pairs, 0u);
  EXPECT_EQ(s.skipped.size(), 2u);
}

TEST(Cli, ParseEmgAndDepthSource) {
  const EmgParams p = cli::parse_emg("4.31,0.44,0.20");
  EXPECT_EQ(p.k, 4.31);
  EXPECT_EQ(p.loc, 0.44);
  EXPECT_EQ(p.scale, 0.20);
  EXPECT_THROW(cli::parse_emg("1,2"), Error);
  EXPECT_THROW(cli::parse_emg("1,0.4,-1"), Error);
  EXPECT_EQ(cli::parse_depth_source("gt"), cli::DepthSource::gt);
  EXPECT_THROW(cli::parse_depth_source("best"), Error);
}

TEST(Cli, MapRefinesAndWritesMetrics) {
  const auto& w = workspace();
  EXPECT_EQ(w.summary.keyframes, 4u);
  const auto rows = by_frame(w.summary.metrics);
  ASSERT_EQ(rows.size(), 4u);
  double initial = 0.0, refined = 0.0;
  for (const auto& [id, stages] : rows) {
    initial += stages.at("initial").mae;
    refined += stages.at("refined").mae;
  }
  EXPECT_LE(refined, initial);
  EXPECT_EQ(read_text_file(w.mapped() / "metrics.csv"), cli::format_metrics_csv(w.summary.metrics));
  const Sequence out = load_sequence(w.mapped());
  for (const auto& e : out.manifest.keyframes) {
    EXPECT_TRUE(load_keyframe_image(w.mapped(), e, "initial_depth", ChannelKind::depth));
    EXPECT_TRUE(load_keyframe_image(w.mapped(), e, "refined_depth", ChannelKind::depth));
  }
}

TEST(Cli, MapRerunIsByteIdentical) {
  const auto& w = workspace();
  TempDir again;
  cli::map({w.seq(), again.path(), std::nullopt, std::nullopt, 2});
  for (const auto& entry : fs::directory_iterator(w.mapped()))
    EXPECT_EQ(read_file_bytes(entry.path()), read_file_bytes(again / entry.path().filename().string()))
        << entry.path().filename();
}

TEST(Cli, MapPriorOnlyKeepsPriorDepths) {
  const auto& w = workspace();
  TempDir out;
  const auto s = cli::map({w.seq(), out.path(), std::nullopt, std::string("prior"), std::nullopt});
  const Sequence seq = load_sequence(out.path());
  for (const auto& e : seq.manifest.keyframes) {
    const auto initial = load_keyframe_image(out.path(), e, "initial_depth", ChannelKind::depth);
    const auto refined = load_keyframe_image(out.path(), e, "refined_depth", ChannelKind::depth);
    ASSERT_TRUE(initial && refined);
    EXPECT_EQ(*initial, *refined) << e.id;
  }
  EXPECT_EQ(s.keyframes, 4u);
}

TEST(Cli, MapRejectsBadConfig) {
  const auto& w = workspace();
  TempDir out;
  std::ofstream(out / "bad.cfg") << "window_size 0\n";
  EXPECT_THROW(cli::map({w.seq(), out / "m", out / "bad.cfg", std::nullopt, std::nullopt}), Error);
  EXPECT_THROW(cli::map({w.seq(), out / "m", out / "missing.cfg", std::nullopt, std::nullopt}), Error);
  EXPECT_THROW(cli::map({out / "nothing", out / "m", std::nullopt, std::nullopt, std::nullopt}), Error);
}

TEST(Cli, EvalIdenticalAndOffset) {
  const auto& w = workspace();
  auto s = cli::eval({w.seq(), w.seq(), cli::DepthSource::gt, std::nullopt});
  EXPECT_EQ(s.aggregate.mae, 0.0);
  EXPECT_EQ(s.aggregate.rmse, 0.0);
  EXPECT_EQ(s.frames.size(), 4u);

  TempDir dir;
  Sequence shifted = load_sequence(w.seq());
  for (auto& p : shifted.packets)
    for (auto& v : p.gt_depth->values())
      if (v > 0.0f) v += 0.5f;
  save_sequence(dir / "shifted", shifted.packets, shifted.manifest.proximity_scale);
  s = cli::eval({dir / "shifted", w.seq(), cli::DepthSource::automatic, dir / "eval.csv"});
  // Depths are stored as float, so the offset is exact only to float resolution.
  EXPECT_NEAR(s.aggregate.mae, 0.5, 1e-6);
  EXPECT_NEAR(s.aggregate.rmse, 0.5, 1e-6);
  for (const auto& f : s.frames) EXPECT_NEAR(f.metrics.mae, 0.5, 1e-6);
  EXPECT_TRUE(fs::exists(dir / "eval.csv"));

  EXPECT_THROW(cli::eval({dir / "missing", w.seq(), cli::DepthSource::automatic, std::nullopt}), Error);
}

TEST(Cli, FuseGroundTruthPlane) {
  const auto& w = workspace();
  TempDir out;
  const auto s = cli::fuse({w.seq(), out / "mesh.ply", cli::DepthSource::gt, std::nullopt, 0.04, std::nullopt});
  EXPECT_EQ(s.frames, 4u);
  EXPECT_GT(s.triangles, 100u);
  const std::string ply = read_text_file(out / "mesh.ply");
  EXPECT_NE(ply.find("element vertex " + std::to_string(s.vertices)), std::string::npos);
  EXPECT_THROW(cli::fuse({w.seq(), out / "m2.ply", cli::DepthSource::refined, std::nullopt, std::nullopt,
                          std::nullopt}),
               Error);
}

TEST(Cli, MetricsCsvFormat) {
  EXPECT_EQ(cli::format_metrics_csv({{3, "refined", {0.25, 0.5, 10}}}), "kf_id,stage,mae,rmse\n3,refined,0.25,0.5\n");
}

#endif
