#pragma once

#include <array>
#include <string>
#include <vector>

#include "codemap/factors.hpp"

namespace codemap {

struct FactorSettings {
  bool photometric = true;
  bool reprojection = true;
  bool geometric = true;
  bool prior = true;

  double photometric_weight = 1.0;
  double reprojection_weight = 0.3;
  double geometric_weight = 1.0;
  /// Weight of the zero-code prior per code dimension.
  double prior_weight = 1.0;

  HuberParams photometric_huber{0.1};
  HuberParams reprojection_huber{2.0};
  HuberParams geometric_huber{0.1};

  /// Grid stride for photometric and geometric samples; 1 = every pixel.
  int sample_stride = 4;

  bool enabled(FactorType t) const;
  double weight(FactorType t) const;
  HuberParams huber(FactorType t) const;
};

struct SolverSettings {
  int max_iterations = 20;
  double initial_damping = 1e-4;
  /// Converged when the Gauss-Newton model predicts a relative energy
  /// decrease below this value...
  double relative_tolerance = 1e-6;
  /// ... and the energy gradient norm is below this value.
  double gradient_tolerance = 1e-4;
  double step_tolerance = 1e-8;
  /// Coarse-to-fine photometric levels with strides 16, 8 and 4.
  bool pyramid = false;
  /// Threads used for factor evaluation within one solve.
  int jobs = 1;
};

struct ProblemSettings {
  FactorSettings factors;
  SolverSettings solver;
};

/// One edge of the factor graph. i and j index the window; prior factors use i only.
struct FactorSpec {
  FactorType type = FactorType::prior;
  int i = 0;
  int j = 0;
};

/// Factor graph over a keyframe window, ordered by timestamp. Frames are
/// non-owning views; the caller keeps images and decoders alive.
struct WindowProblem {
  std::vector<FactorFrame> frames;
  std::vector<double> timestamps;
  std::vector<FactorSpec> factors;
  std::vector<DepthCode> codes;
  ProblemSettings settings;
  /// Photometric/geometric sample grid per frame.
  std::vector<std::vector<std::size_t>> samples;

  int code_size() const { return codes.empty() ? 0 : codes.front().size(); }
};

/// Consecutive pairs in timestamp order, both directions, one factor per
/// enabled pairwise type, plus one prior per code. Throws on fewer than 2
/// frames, missing decoders/images or mismatched code sizes.
WindowProblem build_problem(std::vector<FactorFrame> frames, std::vector<double> timestamps,
                            std::vector<DepthCode> codes, const ProblemSettings& settings);

struct EnergyBreakdown {
  double total = 0.0;
  std::array<double, 4> by_type{};
};

/// Weighted robust energy of the whole problem at the given codes.
EnergyBreakdown problem_energy(const WindowProblem& problem, const std::vector<DepthCode>& codes);

/// Gradient of the total energy with respect to the stacked codes.
Eigen::VectorXd problem_gradient(const WindowProblem& problem, const std::vector<DepthCode>& codes);

/// Evaluates one factor of the problem.
FactorResidual evaluate_factor(const WindowProblem& problem, const FactorSpec& spec,
                               const std::vector<DepthCode>& codes, bool jacobians);

struct SolveReport {
  double initial_energy = 0.0;
  double final_energy = 0.0;
  int iterations = 0;
  int accepted_steps = 0;
  /// Energy after each accepted step.
  std::vector<double> energies;
  bool converged = false;
  /// False when the solve failed (codes are then unchanged).
  bool ok = true;
  std::string diagnostic;
  std::vector<DepthCode> codes;
};

/// Levenberg-Marquardt over the stacked codes with poses fixed.
SolveReport solve(const WindowProblem& problem);

struct RefineResult {
  /// Keyframe ids in timestamp order; codes and depths follow this order.
  std::vector<std::int64_t> ids;
  SolveReport report;
  std::vector<DenseImage> refined_depth;
};

/// build_problem + solve, then decodes the refined codes.
RefineResult refine_window(std::vector<FactorFrame> frames, std::vector<double> timestamps,
                           std::vector<DepthCode> codes, const ProblemSettings& settings);

}  // namespace codemap
