#include <algorithm>
#include <chrono>
#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "codemap/error.hpp"
#include "codemap/pipeline.hpp"
#include "codemap/synth.hpp"
#include "codemap/window_optimizer.hpp"
#include "factor_fixtures.hpp"
#include "test_support.hpp"

using namespace codemap;
using codemap::test::AnalyticWindow;

namespace {

constexpr int kSmallCode = 8;

const AnalyticWindow& plane_window() {
  static const AnalyticWindow w(make_sequence(preset_scene("plane"), SequenceOptions{}), kSmallCode);
  return w;
}

double max_code_change(const std::vector<DepthCode>& a, const std::vector<DepthCode>& b) {
  double m = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) m = std::max(m, (a[k].values - b[k].values).cwiseAbs().maxCoeff());
  return m;
}

ProblemSettings prior_only() {
  ProblemSettings s;
  s.factors.photometric = s.factors.reprojection = s.factors.geometric = false;
  return s;
}

}  // namespace

TEST(BuildProblem, FactorCounts) {
  const auto& w = plane_window();
  ASSERT_EQ(w.packets.size(), 4u);
  const auto p4 = build_problem(w.frames(), w.timestamps(), w.zero_codes(), {});
  EXPECT_EQ(p4.factors.size(), 22u);
  auto f2 = w.frames();
  f2.resize(2);
  auto t2 = w.timestamps();
  t2.resize(2);
  auto c2 = w.zero_codes();
  c2.resize(2);
  EXPECT_EQ(build_problem(f2, t2, c2, {}).factors.size(), 8u);

  int priors = 0;
  for (const auto& f : p4.factors) {
    if (f.type == FactorType::prior) {
      ++priors;
      continue;
    }
    EXPECT_EQ(std::abs(f.i - f.j), 1);
  }
  EXPECT_EQ(priors, 4);
}

TEST(BuildProblem, Topology) {
  const auto& w = plane_window();
  const auto p = build_problem(w.frames(), w.timestamps(), w.zero_codes(), {});
  // Every consecutive pair in both directions with each pairwise type once.
  for (int k = 0; k < 3; ++k) {
    for (const auto& [i, j] : {std::pair{k, k + 1}, std::pair{k + 1, k}}) {
      for (FactorType t : {FactorType::photometric, FactorType::reprojection, FactorType::geometric}) {
        const auto n = std::count_if(p.factors.begin(), p.factors.end(),
                                     [&](const FactorSpec& f) { return f.type == t && f.i == i && f.j == j; });
        EXPECT_EQ(n, 1) << to_string(t) << " " << i << "->" << j;
      }
    }
  }
}

TEST(BuildProblem, OrdersByTimestamp) {
  const auto& w = plane_window();
  auto frames = w.frames();
  auto ts = w.timestamps();
  std::reverse(frames.begin(), frames.end());
  std::reverse(ts.begin(), ts.end());
  const auto p = build_problem(frames, ts, w.zero_codes(), {});
  for (std::size_t k = 0; k < p.frames.size(); ++k) EXPECT_EQ(p.frames[k].id, w.packets[k].id);
  EXPECT_TRUE(std::is_sorted(p.timestamps.begin(), p.timestamps.end()));
}

TEST(BuildProblem, Errors) {
  const auto& w = plane_window();
  auto f1 = w.frames();
  f1.resize(1);
  EXPECT_THROW(build_problem(f1, {0.0}, {DepthCode::zero(kSmallCode)}, {}), Error);
  auto codes = w.zero_codes();
  codes[2] = DepthCode::zero(kSmallCode + 1);
  EXPECT_THROW(build_problem(w.frames(), w.timestamps(), codes, {}), Error);
  auto frames = w.frames();
  frames[1].decoder = nullptr;
  EXPECT_THROW(build_problem(frames, w.timestamps(), w.zero_codes(), {}), Error);
}

TEST(Solve, GradientMatchesFiniteDifferences) {
  const auto& w = plane_window();
  std::mt19937_64 rng(3);
  const auto codes = w.perturbed_codes(0.3, rng);
  const auto p = build_problem(w.frames(), w.timestamps(), codes, {});
  const Eigen::VectorXd g = problem_gradient(p, codes);
  const double eps = 1e-6;
  for (int k : {0, 5, 9, 17, 31}) {
    auto plus = codes, minus = codes;
    plus[std::size_t(k / kSmallCode)].values[k % kSmallCode] += eps;
    minus[std::size_t(k / kSmallCode)].values[k % kSmallCode] -= eps;
    const double fd = (problem_energy(p, plus).total - problem_energy(p, minus).total) / (2.0 * eps);
    EXPECT_NEAR(g[k], fd, 1e-4 * std::max(1.0, std::abs(fd))) << k;
  }
}

TEST(Solve, PriorOnlyReachesZero) {
  const auto& w = plane_window();
  std::mt19937_64 rng(4);
  const auto codes = w.perturbed_codes(2.0, rng);
  const auto r = refine_window(w.frames(), w.timestamps(), codes, prior_only());
  ASSERT_TRUE(r.report.ok);
  EXPECT_TRUE(r.report.converged);
  for (const auto& c : r.report.codes) EXPECT_LT(c.values.cwiseAbs().maxCoeff(), 1e-10);
  // The first step removes all but a 1e-4 fraction, the second all but 1e-9.
  ASSERT_GE(r.report.energies.size(), 2u);
  EXPECT_LT(r.report.energies[1], 1e-16 * r.report.initial_energy);
  for (std::size_t k = 0; k < r.ids.size(); ++k) {
    const DenseImage prior = w.decoders[k]->decode_depth(DepthCode::zero(kSmallCode));
    for (std::size_t i = 0; i < prior.size(); ++i) ASSERT_NEAR(r.refined_depth[k][i], prior[i], 1e-6);
  }
}

TEST(Solve, EnergiesMonotoneAndIdempotent) {
  const auto& w = plane_window();
  std::mt19937_64 rng(5);
  ProblemSettings s;
  s.solver.max_iterations = 100;
  const auto p = build_problem(w.frames(), w.timestamps(), w.perturbed_codes(0.5, rng), s);
  const auto r = solve(p);
  ASSERT_TRUE(r.ok);
  EXPECT_LE(r.final_energy, r.initial_energy);
  double prev = r.initial_energy;
  for (double e : r.energies) {
    EXPECT_LE(e, prev);
    prev = e;
  }
  EXPECT_EQ(r.accepted_steps, int(r.energies.size()));

  ASSERT_TRUE(r.converged);
  const auto again = solve(build_problem(w.frames(), w.timestamps(), r.codes, s));
  EXPECT_LT(std::abs(again.final_energy - r.final_energy), 1e-9);
  EXPECT_EQ(again.accepted_steps, 0);
  EXPECT_EQ(max_code_change(again.codes, r.codes), 0.0);
}

TEST(Solve, StationaryAtConvergence) {
  const auto& w = plane_window();
  std::mt19937_64 rng(6);
  ProblemSettings s;
  s.solver.max_iterations = 100;
  const auto p = build_problem(w.frames(), w.timestamps(), w.perturbed_codes(0.5, rng), s);
  const auto r = solve(p);
  ASSERT_TRUE(r.converged);
  EXPECT_LT(problem_gradient(p, r.codes).norm(), 1e-4);
}

TEST(Solve, GroundTruthStartStaysPut) {
  // Two identical views of the same keyframe: every residual vanishes at c = 0.
  const auto& w = plane_window();
  const auto dec = codemap::test::gt_decoder(w.packets[0], kSmallCode);
  FactorFrame a = codemap::test::factor_frame(w.packets[0], *dec);
  FactorFrame b = a;
  b.id = a.id + 100;
  b.matches = nullptr;
  const auto r = refine_window({a, b}, {0.0, 1.0}, {DepthCode::zero(kSmallCode), DepthCode::zero(kSmallCode)}, {});
  ASSERT_TRUE(r.report.ok);
  EXPECT_LT(r.report.initial_energy, 1e-20);
  EXPECT_LT(max_code_change(r.report.codes, {DepthCode::zero(kSmallCode), DepthCode::zero(kSmallCode)}), 1e-12);
}

TEST(Solve, DeterministicAcrossRunsAndJobs) {
  const auto& w = plane_window();
  std::mt19937_64 rng(7);
  const auto codes = w.perturbed_codes(0.5, rng);
  ProblemSettings s;
  s.solver.max_iterations = 5;
  const auto a = solve(build_problem(w.frames(), w.timestamps(), codes, s));
  const auto b = solve(build_problem(w.frames(), w.timestamps(), codes, s));
  s.solver.jobs = 3;
  const auto c = solve(build_problem(w.frames(), w.timestamps(), codes, s));
  EXPECT_EQ(max_code_change(a.codes, b.codes), 0.0);
  EXPECT_EQ(max_code_change(a.codes, c.codes), 0.0);
  EXPECT_EQ(a.energies, c.energies);
}

TEST(Solve, NonFiniteStartRejected) {
  const auto& w = plane_window();
  auto codes = w.zero_codes();
  auto p = build_problem(w.frames(), w.timestamps(), codes, {});
  p.codes[1].values[0] = std::nan("");
  EXPECT_THROW(solve(p), Error);
}

TEST(Solve, PerturbedCodesRefine) {
  const AnalyticWindow w(make_sequence(preset_scene("plane"), SequenceOptions{}));
  std::mt19937_64 rng(1);
  const auto codes = w.perturbed_codes(0.5, rng);
  const auto mae = [&](const std::vector<DepthCode>& c) {
    double m = 0.0;
    for (std::size_t k = 0; k < c.size(); ++k)
      m += evaluate_depth(w.decoders[k]->decode_depth(c[k]), *w.packets[k].gt_depth).mae / double(c.size());
    return m;
  };
  const auto t0 = std::chrono::steady_clock::now();
  const auto r = refine_window(w.frames(), w.timestamps(), codes, {});
  const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  ASSERT_TRUE(r.report.ok);
  EXPECT_LT(mae(r.report.codes), 0.5 * mae(codes));
  EXPECT_LT(seconds, 30.0);
}

TEST(Solve, PyramidNeverWorseThanStart) {
  const auto& w = plane_window();
  std::mt19937_64 rng(8);
  ProblemSettings s;
  s.solver.pyramid = true;
  const auto p = build_problem(w.frames(), w.timestamps(), w.perturbed_codes(0.5, rng), s);
  const auto r = solve(p);
  ASSERT_TRUE(r.ok);
  EXPECT_LE(r.final_energy, r.initial_energy);
  EXPECT_NEAR(r.initial_energy, problem_energy(p, p.codes).total, 1e-9 * r.initial_energy);
}
