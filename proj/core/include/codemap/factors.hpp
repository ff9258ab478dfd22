#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "codemap/depth_codec.hpp"
#include "codemap/keyframe.hpp"

namespace codemap {

enum class FactorType { photometric, reprojection, geometric, prior };

const char* to_string(FactorType type);

struct HuberParams {
  double delta = 1.0;
};

/// IRLS weight of the Huber cost: 1 inside the knee, delta / r outside.
double huber_weight(double residual_norm, const HuberParams& p);
/// Huber cost scaled so that it equals r^2 inside the knee.
double huber_cost(double residual_norm, const HuberParams& p);

/// Everything a factor needs from one keyframe. Non-owning.
struct FactorFrame {
  std::int64_t id = 0;
  Pose pose;  // camera-to-world
  Intrinsics intrinsics;
  const DenseImage* intensity = nullptr;
  const LinearDecoder* decoder = nullptr;
  /// Correspondences from this frame to others, keyed by other_id.
  const std::vector<MatchSet>* matches = nullptr;

  const std::vector<Correspondence>* matches_with(std::int64_t other) const {
    if (matches == nullptr) return nullptr;
    for (const auto& m : *matches)
      if (m.other_id == other) return &m.correspondences;
    return nullptr;
  }
};

/// Residual blocks of one factor. Each block has `block_size` rows and one
/// sample id; Jacobians are stacked to match the residual rows.
struct FactorResidual {
  FactorType type = FactorType::prior;
  int block_size = 1;
  Eigen::VectorXd residuals;
  std::vector<std::int64_t> sample_ids;
  /// d residual / d code_i and (geometric only) d residual / d code_j.
  RowMatrix jacobian_i;
  RowMatrix jacobian_j;
  bool has_jacobian_j = false;
  /// Huber IRLS weight per block.
  std::vector<double> robust_weights;

  std::size_t block_count() const { return sample_ids.size(); }
  bool empty() const { return sample_ids.empty(); }
};

/// Regular sample grid with the given stride, offset by stride / 2.
std::vector<std::size_t> grid_samples(int width, int height, int stride);

struct EvalOptions {
  bool jacobians = true;
  HuberParams huber;
};

/// r = I_i[x] - I_j(w_ji(x, D_i[x])) per sample; optimizes code_i only.
FactorResidual photometric_factor(const FactorFrame& fi, const FactorFrame& fj, const Eigen::VectorXd& code_i,
                                  std::span<const std::size_t> samples, const EvalOptions& options);

/// r = w_ji(x, D_i[x]) - y per correspondence (2 rows); optimizes code_i only.
FactorResidual reprojection_factor(const FactorFrame& fi, const FactorFrame& fj, const Eigen::VectorXd& code_i,
                                   std::span<const Correspondence> matches, const EvalOptions& options);

/// r = [T_ji pi^-1(x, D_i[x])]_z - D_j(x_hat) per sample; depends on both codes.
FactorResidual geometric_factor(const FactorFrame& fi, const FactorFrame& fj, const Eigen::VectorXd& code_i,
                                const Eigen::VectorXd& code_j, std::span<const std::size_t> samples,
                                const EvalOptions& options);

/// r = sqrt(weight) c. Not robustified.
FactorResidual zero_code_prior(const Eigen::VectorXd& code, double weight, const EvalOptions& options);

/// Sum of robust costs over blocks (unweighted by factor type).
double robust_energy(const FactorResidual& r, const HuberParams& huber);

/// Mean |r| over the blocks of a geometric factor evaluation.
double mean_abs_residual(const FactorResidual& r);

}  // namespace codemap
