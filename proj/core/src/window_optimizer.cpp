#include "codemap/window_optimizer.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <thread>

#include <Eigen/Cholesky>

#include "codemap/error.hpp"

namespace codemap {

bool FactorSettings::enabled(FactorType t) const {
  switch (t) {
    case FactorType::photometric: return photometric;
    case FactorType::reprojection: return reprojection;
    case FactorType::geometric: return geometric;
    case FactorType::prior: return prior;
  }
  return false;
}

double FactorSettings::weight(FactorType t) const {
  switch (t) {
    case FactorType::photometric: return photometric_weight;
    case FactorType::reprojection: return reprojection_weight;
    case FactorType::geometric: return geometric_weight;
    case FactorType::prior: return 1.0;  // prior_weight is folded into the residual
  }
  return 0.0;
}

HuberParams FactorSettings::huber(FactorType t) const {
  switch (t) {
    case FactorType::photometric: return photometric_huber;
    case FactorType::reprojection: return reprojection_huber;
    case FactorType::geometric: return geometric_huber;
    case FactorType::prior: break;
  }
  return {std::numeric_limits<double>::infinity()};
}

WindowProblem build_problem(std::vector<FactorFrame> frames, std::vector<double> timestamps,
                            std::vector<DepthCode> codes, const ProblemSettings& settings) {
  if (frames.size() < 2) throw Error(ErrorCode::invalid_argument, "window needs at least 2 keyframes");
  if (timestamps.size() != frames.size() || codes.size() != frames.size())
    throw Error(ErrorCode::dimension_mismatch, "window: frames, timestamps and codes differ in count");
  if (settings.factors.sample_stride < 1) throw Error(ErrorCode::invalid_argument, "sample stride must be >= 1");
  for (std::size_t k = 0; k < frames.size(); ++k) {
    const FactorFrame& f = frames[k];
    if (f.decoder == nullptr) throw Error(ErrorCode::invalid_argument, "window: keyframe without decoder");
    if (f.intensity == nullptr || f.intensity->empty())
      throw Error(ErrorCode::invalid_argument, "window: keyframe without intensity image");
    if (codes[k].size() != f.decoder->code_size() || !codes[k].finite())
      throw Error(ErrorCode::dimension_mismatch, "window: code does not match its decoder");
  }

  std::vector<std::size_t> order(frames.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return timestamps[a] < timestamps[b]; });

  WindowProblem p;
  p.settings = settings;
  for (std::size_t k : order) {
    p.frames.push_back(frames[k]);
    p.timestamps.push_back(timestamps[k]);
    p.codes.push_back(std::move(codes[k]));
    p.samples.push_back(grid_samples(frames[k].intrinsics.width, frames[k].intrinsics.height,
                                     settings.factors.sample_stride));
  }

  const FactorSettings& fs = settings.factors;
  const int n = static_cast<int>(p.frames.size());
  for (int k = 0; k + 1 < n; ++k) {
    for (const auto& [i, j] : {std::pair{k, k + 1}, std::pair{k + 1, k}}) {
      for (FactorType t : {FactorType::photometric, FactorType::reprojection, FactorType::geometric})
        if (fs.enabled(t)) p.factors.push_back({t, i, j});
    }
  }
  if (fs.prior)
    for (int k = 0; k < n; ++k) p.factors.push_back({FactorType::prior, k, k});
  return p;
}

FactorResidual evaluate_factor(const WindowProblem& problem, const FactorSpec& spec,
                               const std::vector<DepthCode>& codes, bool jacobians) {
  const FactorSettings& fs = problem.settings.factors;
  EvalOptions opt{jacobians, fs.huber(spec.type)};
  const auto i = static_cast<std::size_t>(spec.i);
  const auto j = static_cast<std::size_t>(spec.j);
  switch (spec.type) {
    case FactorType::photometric:
      return photometric_factor(problem.frames[i], problem.frames[j], codes[i].values, problem.samples[i], opt);
    case FactorType::reprojection: {
      const auto* matches = problem.frames[i].matches_with(problem.frames[j].id);
      const std::span<const Correspondence> m =
          matches ? std::span<const Correspondence>(*matches) : std::span<const Correspondence>();
      return reprojection_factor(problem.frames[i], problem.frames[j], codes[i].values, m, opt);
    }
    case FactorType::geometric:
      return geometric_factor(problem.frames[i], problem.frames[j], codes[i].values, codes[j].values,
                              problem.samples[i], opt);
    case FactorType::prior:
      return zero_code_prior(codes[i].values, fs.prior_weight, opt);
  }
  throw Error(ErrorCode::invalid_argument, "unknown factor type");
}

namespace {

std::vector<FactorResidual> evaluate_all(const WindowProblem& problem, const std::vector<DepthCode>& codes,
                                         bool jacobians) {
  std::vector<FactorResidual> out(problem.factors.size());
  const int jobs = std::max(1, std::min<int>(problem.settings.solver.jobs, static_cast<int>(out.size())));
  if (jobs == 1) {
    for (std::size_t f = 0; f < out.size(); ++f) out[f] = evaluate_factor(problem, problem.factors[f], codes, jacobians);
    return out;
  }
  std::vector<std::thread> workers;
  std::vector<std::exception_ptr> errors(static_cast<std::size_t>(jobs));
  for (int t = 0; t < jobs; ++t) {
    workers.emplace_back([&, t] {
      try {
        for (std::size_t f = static_cast<std::size_t>(t); f < out.size(); f += static_cast<std::size_t>(jobs))
          out[f] = evaluate_factor(problem, problem.factors[f], codes, jacobians);
      } catch (...) {
        errors[static_cast<std::size_t>(t)] = std::current_exception();
      }
    });
  }
  for (auto& w : workers) w.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
  return out;
}

struct Linearization {
  Eigen::MatrixXd h;
  Eigen::VectorXd g;
  double energy = 0.0;
};

/// Gauss-Newton system with H = sum w J^T J and g = sum w J^T r, so that the
/// energy gradient is 2 g.
Linearization linearize(const WindowProblem& problem, const std::vector<DepthCode>& codes) {
  const int cs = problem.code_size();
  const int n = cs * static_cast<int>(problem.frames.size());
  Linearization lin{Eigen::MatrixXd::Zero(n, n), Eigen::VectorXd::Zero(n), 0.0};
  const auto results = evaluate_all(problem, codes, true);
  const FactorSettings& fs = problem.settings.factors;
  for (std::size_t f = 0; f < results.size(); ++f) {
    const FactorSpec& spec = problem.factors[f];
    const FactorResidual& r = results[f];
    const double tw = fs.weight(spec.type);
    lin.energy += tw * robust_energy(r, fs.huber(spec.type));
    if (r.residuals.size() == 0) continue;
    Eigen::VectorXd w(r.residuals.size());
    for (std::size_t b = 0; b < r.block_count(); ++b)
      for (int k = 0; k < r.block_size; ++k)
        w[static_cast<Eigen::Index>(b) * r.block_size + k] = tw * r.robust_weights[b];
    const Eigen::VectorXd wr = w.cwiseProduct(r.residuals);
    const RowMatrix wji = w.asDiagonal() * r.jacobian_i;
    const int oi = spec.i * cs;
    lin.h.block(oi, oi, cs, cs).noalias() += r.jacobian_i.transpose() * wji;
    lin.g.segment(oi, cs).noalias() += r.jacobian_i.transpose() * wr;
    if (r.has_jacobian_j) {
      const int oj = spec.j * cs;
      const Eigen::MatrixXd hij = wji.transpose() * r.jacobian_j;
      lin.h.block(oi, oj, cs, cs) += hij;
      lin.h.block(oj, oi, cs, cs) += hij.transpose();
      lin.h.block(oj, oj, cs, cs).noalias() += r.jacobian_j.transpose() * (w.asDiagonal() * r.jacobian_j);
      lin.g.segment(oj, cs).noalias() += r.jacobian_j.transpose() * wr;
    }
  }
  return lin;
}

std::vector<DepthCode> apply_step(const std::vector<DepthCode>& codes, const Eigen::VectorXd& step) {
  std::vector<DepthCode> out = codes;
  const int cs = codes.front().size();
  for (std::size_t k = 0; k < out.size(); ++k) out[k].values += step.segment(static_cast<Eigen::Index>(k) * cs, cs);
  return out;
}

double total_energy(const WindowProblem& problem, const std::vector<DepthCode>& codes) {
  return problem_energy(problem, codes).total;
}

SolveReport run_lm(const WindowProblem& problem, const std::vector<DepthCode>& start) {
  const SolverSettings& ss = problem.settings.solver;
  SolveReport report;
  report.codes = start;
  double energy = total_energy(problem, start);
  report.initial_energy = energy;
  report.final_energy = energy;
  if (!std::isfinite(energy)) throw Error(ErrorCode::numerical, "solve: initial energy is not finite");
  if (energy == 0.0) {
    report.converged = true;
    return report;
  }

  std::vector<DepthCode> codes = start;
  double lambda = ss.initial_damping;
  constexpr double kMaxDamping = 1e12;
  // Predicted decreases below this are roundoff.
  constexpr double kEnergyFloor = 1e-20;
  for (int it = 0; it < ss.max_iterations; ++it) {
    const Linearization lin = linearize(problem, codes);
    const Eigen::Index n = lin.h.rows();
    const double diag_floor = 1e-12 * std::max(1.0, lin.h.diagonal().maxCoeff());

    // Convergence is judged at the current point, before stepping, so a
    // rerun from a converged state takes no step at all.
    {
      Eigen::MatrixXd hr = lin.h;
      hr.diagonal().array() += diag_floor;
      const Eigen::LLT<Eigen::MatrixXd> llt(hr);
      if (llt.info() == Eigen::Success) {
        const Eigen::VectorXd gn = llt.solve(-lin.g);
        const double predicted = -2.0 * lin.g.dot(gn) - gn.dot(lin.h * gn);
        const bool flat = predicted <= ss.relative_tolerance * energy + kEnergyFloor &&
                          2.0 * lin.g.norm() < ss.gradient_tolerance;
        if (flat) {
          report.converged = true;
          break;
        }
      }
    }

    ++report.iterations;
    bool accepted = false;
    bool stop = false;
    while (!accepted && !stop) {
      Eigen::MatrixXd a = lin.h;
      for (Eigen::Index k = 0; k < n; ++k) a(k, k) += lambda * std::max(lin.h(k, k), diag_floor);
      const Eigen::LLT<Eigen::MatrixXd> llt(a);
      if (llt.info() != Eigen::Success) {
        lambda *= 10.0;
        if (lambda > kMaxDamping) {
          report.ok = false;
          report.diagnostic = "Cholesky factorization failed after damping escalation";
          report.codes = start;
          report.final_energy = report.initial_energy;
          return report;
        }
        continue;
      }
      const Eigen::VectorXd step = llt.solve(-lin.g);
      const bool tiny = step.norm() < ss.step_tolerance;
      const auto candidate = apply_step(codes, step);
      const double e = total_energy(problem, candidate);
      if (std::isfinite(e) && e < energy) {
        codes = candidate;
        energy = e;
        report.energies.push_back(e);
        ++report.accepted_steps;
        lambda = std::max(lambda / 10.0, 1e-12);
        accepted = true;
        if (tiny) {
          report.converged = true;
          stop = true;
        }
      } else if (tiny) {
        report.converged = true;
        stop = true;
      } else {
        lambda *= 10.0;
        if (lambda > kMaxDamping) {
          report.converged = true;
          report.diagnostic = "no decrease found at maximum damping";
          stop = true;
        }
      }
    }
    if (stop) break;
  }
  report.codes = std::move(codes);
  report.final_energy = energy;
  return report;
}

}  // namespace

EnergyBreakdown problem_energy(const WindowProblem& problem, const std::vector<DepthCode>& codes) {
  EnergyBreakdown out;
  const auto results = evaluate_all(problem, codes, false);
  const FactorSettings& fs = problem.settings.factors;
  for (std::size_t f = 0; f < results.size(); ++f) {
    const FactorType t = problem.factors[f].type;
    const double e = fs.weight(t) * robust_energy(results[f], fs.huber(t));
    out.by_type[static_cast<std::size_t>(t)] += e;
    out.total += e;
  }
  return out;
}

Eigen::VectorXd problem_gradient(const WindowProblem& problem, const std::vector<DepthCode>& codes) {
  return 2.0 * linearize(problem, codes).g;
}

SolveReport solve(const WindowProblem& problem) {
  if (problem.frames.size() < 2) throw Error(ErrorCode::invalid_argument, "solve: window needs at least 2 keyframes");
  for (const auto& c : problem.codes)
    if (!c.finite()) throw Error(ErrorCode::numerical, "solve: non-finite initial code");
  if (!problem.settings.solver.pyramid) return run_lm(problem, problem.codes);

  // Coarse-to-fine: blurred images and sparser samples first, then the full problem.
  const int final_stride = problem.settings.factors.sample_stride;
  std::vector<DepthCode> codes = problem.codes;
  SolveReport combined;
  combined.initial_energy = total_energy(problem, codes);
  for (int stride : {16, 8}) {
    if (stride <= final_stride) continue;
    WindowProblem level = problem;
    std::vector<DenseImage> blurred;
    blurred.reserve(level.frames.size());
    for (auto& f : level.frames) {
      blurred.push_back(gaussian_blur(*f.intensity, stride / 4.0));
      f.intensity = &blurred.back();
    }
    level.settings.factors.sample_stride = stride;
    for (std::size_t k = 0; k < level.frames.size(); ++k)
      level.samples[k] = grid_samples(level.frames[k].intrinsics.width, level.frames[k].intrinsics.height, stride);
    const SolveReport r = run_lm(level, codes);
    if (!r.ok) continue;
    codes = r.codes;
    combined.iterations += r.iterations;
    combined.accepted_steps += r.accepted_steps;
  }
  SolveReport last = run_lm(problem, codes);
  last.iterations += combined.iterations;
  last.accepted_steps += combined.accepted_steps;
  last.initial_energy = combined.initial_energy;
  // Coarse levels optimize a different energy; never return something worse.
  if (last.final_energy > last.initial_energy) {
    SolveReport plain = run_lm(problem, problem.codes);
    plain.iterations += last.iterations;
    return plain;
  }
  return last;
}

RefineResult refine_window(std::vector<FactorFrame> frames, std::vector<double> timestamps,
                           std::vector<DepthCode> codes, const ProblemSettings& settings) {
  const WindowProblem problem = build_problem(std::move(frames), std::move(timestamps), std::move(codes), settings);
  RefineResult out;
  out.report = solve(problem);
  for (std::size_t k = 0; k < problem.frames.size(); ++k) out.ids.push_back(problem.frames[k].id);
  for (std::size_t k = 0; k < problem.frames.size(); ++k)
    out.refined_depth.push_back(problem.frames[k].decoder->decode_depth(out.report.codes[k]));
  return out;
}

}  // namespace codemap
