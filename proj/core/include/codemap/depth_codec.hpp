#pragma once

#include <cstddef>
#include <functional>
#include <memory>

#include <Eigen/Core>

#include "codemap/geometry.hpp"
#include "codemap/image.hpp"

namespace codemap {

inline constexpr int kDefaultCodeSize = 32;
inline constexpr int kDefaultWidth = 256;
inline constexpr int kDefaultHeight = 192;

/// Latent code parameterizing one keyframe's dense depth.
struct DepthCode {
  Eigen::VectorXd values;

  DepthCode() : values(Eigen::VectorXd::Zero(kDefaultCodeSize)) {}
  explicit DepthCode(Eigen::VectorXd v) : values(std::move(v)) {}
  static DepthCode zero(int size) { return DepthCode(Eigen::VectorXd::Zero(size)); }

  int size() const { return static_cast<int>(values.size()); }
  bool finite() const { return values.allFinite(); }
};

/// Decoder inputs for one keyframe. sparse_depth uses 0 for "no measurement";
/// rep_error is only meaningful where sparse_depth is valid.
struct ConditioningSet {
  DenseImage intensity;
  DenseImage sparse_depth;
  DenseImage rep_error;

  int width() const { return intensity.width(); }
  int height() const { return intensity.height(); }
  /// Throws ErrorCode::dimension_mismatch / invalid_argument.
  void validate() const;
};

struct DecoderOutput {
  DenseImage depth;
  DenseImage proximity;
  DenseImage uncertainty;
  /// (width*height) x code_size, d(proximity)/d(code).
  Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> jacobian;
};

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// A decoder linearized at the zero code: proximity(c) = prior + J c.
/// Both the analytic decoder and a learned network (after linearization)
/// are represented this way; all factors consume this type.
class LinearDecoder {
 public:
  LinearDecoder(int width, int height, std::vector<double> prior_proximity, RowMatrix jacobian,
                DenseImage uncertainty, ProximityParams proximity);

  int width() const { return width_; }
  int height() const { return height_; }
  int code_size() const { return static_cast<int>(jacobian_.cols()); }
  std::size_t pixel_count() const { return prior_.size(); }
  const ProximityParams& proximity_params() const { return proximity_; }
  const std::vector<double>& prior() const { return prior_; }
  const RowMatrix& jacobian() const { return jacobian_; }
  const DenseImage& uncertainty() const { return uncertainty_; }

  double proximity_at(std::size_t pixel, const Eigen::VectorXd& code) const {
    return prior_[pixel] + jacobian_.row(static_cast<Eigen::Index>(pixel)).dot(code);
  }
  auto jacobian_row(std::size_t pixel) const {
    return jacobian_.row(static_cast<Eigen::Index>(pixel));
  }

  /// Full proximity map for a code.
  Eigen::VectorXd proximity_map(const Eigen::VectorXd& code) const;

  /// Pixels whose decoded proximity leaves (0, 1) get the invalid depth 0.
  DecoderOutput decode(const DepthCode& code) const;
  /// Same as decode(code), after checking the conditioning matches this decoder.
  DecoderOutput decode(const DepthCode& code, const ConditioningSet& cond) const;
  DenseImage decode_depth(const DepthCode& code) const;

 private:
  int width_;
  int height_;
  std::vector<double> prior_;
  RowMatrix jacobian_;
  DenseImage uncertainty_;
  ProximityParams proximity_;
};

using DecoderPtr = std::shared_ptr<const LinearDecoder>;
/// Builds a per-keyframe decoder from its conditioning images.
using DecoderFactory = std::function<DecoderPtr(const ConditioningSet&)>;

struct AnalyticDecoderConfig {
  int code_size = kDefaultCodeSize;
  ProximityParams proximity;
  /// Proximity change per unit code at the peak of each basis mode.
  double basis_amplitude = 0.1;
  /// Nearest sparse points blended per pixel by inverse-distance weighting.
  int neighbors = 8;
  double idw_power = 2.0;
  double uncertainty_base = 0.05;
  double uncertainty_slope = 0.002;
};

/// Training-free decoder: inverse-distance-weighted sparse proximities as the
/// prior, smooth cosine modes as the code basis. Throws
/// ErrorCode::insufficient_data with fewer than 3 valid sparse points.
LinearDecoder make_analytic_decoder(const ConditioningSet& cond, const AnalyticDecoderConfig& config = {});

/// The (u, v) frequency pairs of the cosine basis, lowest frequencies first.
std::vector<std::pair<int, int>> cosine_mode_frequencies(int code_size);
/// Unscaled 2D DCT-II mode evaluated on the pixel grid (values in [-1, 1]).
std::vector<double> cosine_mode(int fu, int fv, int width, int height);

enum class ErrorSpace { proximity, metric };

/// Uncertainty-weighted reconstruction error: sum |D - D_gt| / b + log b over
/// pixels where gt is valid. Depth inputs are mapped to proximity first when
/// space == proximity. Throws ErrorCode::domain on b <= 0 at a valid pixel.
double recon_error(const DenseImage& pred, const DenseImage& gt, const DenseImage& uncertainty,
                   ErrorSpace space = ErrorSpace::proximity, const ProximityParams& p = {});

/// Proximity image of a depth image; invalid depth maps to 0.
DenseImage to_proximity_image(const DenseImage& depth, const ProximityParams& p);

}  // namespace codemap
