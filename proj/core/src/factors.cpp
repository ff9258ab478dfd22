#include "codemap/factors.hpp"

#include <cmath>
#include <limits>

#include "codemap/error.hpp"

namespace codemap {

const char* to_string(FactorType type) {
  switch (type) {
    case FactorType::photometric: return "photometric";
    case FactorType::reprojection: return "reprojection";
    case FactorType::geometric: return "geometric";
    case FactorType::prior: return "prior";
  }
  return "unknown";
}

double huber_weight(double residual_norm, const HuberParams& p) {
  return residual_norm <= p.delta ? 1.0 : p.delta / residual_norm;
}

double huber_cost(double residual_norm, const HuberParams& p) {
  return residual_norm <= p.delta ? residual_norm * residual_norm : 2.0 * p.delta * residual_norm - p.delta * p.delta;
}

std::vector<std::size_t> grid_samples(int width, int height, int stride) {
  if (stride < 1) throw Error(ErrorCode::invalid_argument, "sample stride must be >= 1");
  std::vector<std::size_t> out;
  for (int y = stride / 2; y < height; y += stride)
    for (int x = stride / 2; x < width; x += stride)
      out.push_back(static_cast<std::size_t>(y) * static_cast<std::size_t>(width) + static_cast<std::size_t>(x));
  return out;
}

namespace {

void check_frame(const FactorFrame& f, bool needs_intensity) {
  if (f.decoder == nullptr) throw Error(ErrorCode::invalid_argument, "factor frame has no decoder");
  if (f.decoder->width() != f.intrinsics.width || f.decoder->height() != f.intrinsics.height)
    throw Error(ErrorCode::dimension_mismatch, "decoder resolution differs from intrinsics");
  if (needs_intensity &&
      (f.intensity == nullptr || f.intensity->width() != f.intrinsics.width ||
       f.intensity->height() != f.intrinsics.height))
    throw Error(ErrorCode::dimension_mismatch, "factor frame intensity missing or mis-sized");
}

void check_code(const FactorFrame& f, const Eigen::VectorXd& code) {
  if (code.size() != f.decoder->code_size())
    throw Error(ErrorCode::dimension_mismatch, "code size does not match decoder");
}

bool valid_proximity(double p) { return p > 0.0 && p < 1.0; }

/// Accumulates blocks without knowing the final count.
class Builder {
 public:
  Builder(FactorType type, int block_size, int code_i, int code_j, bool jacobians)
      : block_size_(block_size), code_i_(code_i), code_j_(code_j), jacobians_(jacobians) {
    out_.type = type;
    out_.block_size = block_size;
    out_.has_jacobian_j = code_j > 0;
  }

  /// Appends one block; returns pointers to its Jacobian rows (row-major).
  std::pair<double*, double*> add(std::int64_t id, const double* r, double robust_weight) {
    out_.sample_ids.push_back(id);
    out_.robust_weights.push_back(robust_weight);
    for (int k = 0; k < block_size_; ++k) res_.push_back(r[k]);
    if (!jacobians_) return {nullptr, nullptr};
    const std::size_t oi = ji_.size();
    const std::size_t oj = jj_.size();
    ji_.resize(oi + static_cast<std::size_t>(block_size_ * code_i_), 0.0);
    jj_.resize(oj + static_cast<std::size_t>(block_size_ * code_j_), 0.0);
    return {ji_.data() + oi, code_j_ > 0 ? jj_.data() + oj : nullptr};
  }

  FactorResidual finish() {
    out_.residuals = Eigen::Map<const Eigen::VectorXd>(res_.data(), static_cast<Eigen::Index>(res_.size()));
    const auto rows = static_cast<Eigen::Index>(res_.size());
    if (jacobians_) {
      out_.jacobian_i = Eigen::Map<const RowMatrix>(ji_.data(), rows, code_i_);
      if (code_j_ > 0) out_.jacobian_j = Eigen::Map<const RowMatrix>(jj_.data(), rows, code_j_);
    }
    return std::move(out_);
  }

 private:
  int block_size_;
  int code_i_;
  int code_j_;
  bool jacobians_;
  FactorResidual out_;
  std::vector<double> res_;
  std::vector<double> ji_;
  std::vector<double> jj_;
};

void add_scaled_row(double* dst, double scale, const LinearDecoder& dec, std::size_t pixel) {
  const auto row = dec.jacobian_row(pixel);
  for (Eigen::Index c = 0; c < row.size(); ++c) dst[c] += scale * row[c];
}

struct Transfer {
  Eigen::Matrix3d r;
  Eigen::Vector3d t;
  explicit Transfer(const FactorFrame& fi, const FactorFrame& fj) {
    const Pose t_ji = relative_pose(fi.pose, fj.pose);
    r = t_ji.rotation_matrix();
    t = t_ji.translation();
  }
};

constexpr double kMinDepth = 1e-9;

}  // namespace

FactorResidual photometric_factor(const FactorFrame& fi, const FactorFrame& fj, const Eigen::VectorXd& code_i,
                                  std::span<const std::size_t> samples, const EvalOptions& options) {
  check_frame(fi, true);
  check_frame(fj, true);
  check_code(fi, code_i);
  const LinearDecoder& dec = *fi.decoder;
  const double a = dec.proximity_params().scale;
  const Transfer tr(fi, fj);
  const auto w = static_cast<std::size_t>(fi.intrinsics.width);
  Builder b(FactorType::photometric, 1, dec.code_size(), 0, options.jacobians);

  for (std::size_t s : samples) {
    if (s >= dec.pixel_count()) continue;
    const double p = dec.proximity_at(s, code_i);
    if (!valid_proximity(p)) continue;
    const double d = a * (1.0 - p) / p;
    const PixelCoord x{static_cast<double>(s % w), static_cast<double>(s / w)};
    const Eigen::Vector3d ray = tr.r * bearing(x, fi.intrinsics);
    const Eigen::Vector3d pj = d * ray + tr.t;
    if (pj.z() <= kMinDepth) continue;
    const double u = fj.intrinsics.fx * pj.x() / pj.z() + fj.intrinsics.cx;
    const double v = fj.intrinsics.fy * pj.y() / pj.z() + fj.intrinsics.cy;
    const auto sample = sample_bilinear(*fj.intensity, u, v);
    if (!sample) continue;
    const double r = (*fi.intensity)[s] - sample->value;
    const auto [ji, jj] = b.add(static_cast<std::int64_t>(s), &r, huber_weight(std::abs(r), options.huber));
    (void)jj;
    if (ji == nullptr) continue;
    const Eigen::Matrix<double, 2, 3> dpi = projection_jacobian(pj, fj.intrinsics);
    const Eigen::Vector2d dx_dd = dpi * ray;
    const double dr_dd = -(sample->du * dx_dd.x() + sample->dv * dx_dd.y());
    add_scaled_row(ji, dr_dd * depth_proximity_derivative(p, dec.proximity_params()), dec, s);
  }
  return b.finish();
}

FactorResidual reprojection_factor(const FactorFrame& fi, const FactorFrame& fj, const Eigen::VectorXd& code_i,
                                   std::span<const Correspondence> matches, const EvalOptions& options) {
  check_frame(fi, false);
  check_code(fi, code_i);
  const LinearDecoder& dec = *fi.decoder;
  const double a = dec.proximity_params().scale;
  const Transfer tr(fi, fj);
  Builder b(FactorType::reprojection, 2, dec.code_size(), 0, options.jacobians);

  for (std::size_t m = 0; m < matches.size(); ++m) {
    const Correspondence& c = matches[m];
    const auto st = bilinear_stencil(c.pixel_i.u, c.pixel_i.v, dec.width(), dec.height());
    if (!st) continue;
    double p = 0.0;
    for (int n = 0; n < 4; ++n) p += st->weight[n] * dec.proximity_at(st->index[n], code_i);
    if (!valid_proximity(p)) continue;
    const double d = a * (1.0 - p) / p;
    const Eigen::Vector3d ray = tr.r * bearing(c.pixel_i, fi.intrinsics);
    const Eigen::Vector3d pj = d * ray + tr.t;
    if (pj.z() <= kMinDepth) continue;
    const double u = fj.intrinsics.fx * pj.x() / pj.z() + fj.intrinsics.cx;
    const double v = fj.intrinsics.fy * pj.y() / pj.z() + fj.intrinsics.cy;
    if (!fj.intrinsics.in_bounds(u, v)) continue;
    const double r[2] = {u - c.pixel_j.u, v - c.pixel_j.v};
    const auto [ji, jj] =
        b.add(static_cast<std::int64_t>(m), r, huber_weight(std::hypot(r[0], r[1]), options.huber));
    (void)jj;
    if (ji == nullptr) continue;
    const Eigen::Vector2d dx_dd = projection_jacobian(pj, fj.intrinsics) * ray;
    const double dd_dp = depth_proximity_derivative(p, dec.proximity_params());
    const int cs = dec.code_size();
    for (int n = 0; n < 4; ++n) {
      if (st->weight[n] == 0.0) continue;
      add_scaled_row(ji, dx_dd.x() * dd_dp * st->weight[n], dec, st->index[n]);
      add_scaled_row(ji + cs, dx_dd.y() * dd_dp * st->weight[n], dec, st->index[n]);
    }
  }
  return b.finish();
}

FactorResidual geometric_factor(const FactorFrame& fi, const FactorFrame& fj, const Eigen::VectorXd& code_i,
                                const Eigen::VectorXd& code_j, std::span<const std::size_t> samples,
                                const EvalOptions& options) {
  check_frame(fi, false);
  check_frame(fj, false);
  check_code(fi, code_i);
  check_code(fj, code_j);
  const LinearDecoder& di = *fi.decoder;
  const LinearDecoder& dj = *fj.decoder;
  const double ai = di.proximity_params().scale;
  const double aj = dj.proximity_params().scale;
  const Transfer tr(fi, fj);
  const auto w = static_cast<std::size_t>(fi.intrinsics.width);
  Builder b(FactorType::geometric, 1, di.code_size(), dj.code_size(), options.jacobians);

  for (std::size_t s : samples) {
    if (s >= di.pixel_count()) continue;
    const double p = di.proximity_at(s, code_i);
    if (!valid_proximity(p)) continue;
    const double d = ai * (1.0 - p) / p;
    const PixelCoord x{static_cast<double>(s % w), static_cast<double>(s / w)};
    const Eigen::Vector3d ray = tr.r * bearing(x, fi.intrinsics);
    const Eigen::Vector3d pj = d * ray + tr.t;
    if (pj.z() <= kMinDepth) continue;
    const double u = fj.intrinsics.fx * pj.x() / pj.z() + fj.intrinsics.cx;
    const double v = fj.intrinsics.fy * pj.y() / pj.z() + fj.intrinsics.cy;
    const auto st = bilinear_stencil(u, v, dj.width(), dj.height());
    if (!st) continue;
    double pk[4];
    bool ok = true;
    for (int n = 0; n < 4 && ok; ++n) {
      pk[n] = dj.proximity_at(st->index[n], code_j);
      ok = valid_proximity(pk[n]);
    }
    if (!ok) continue;
    double depth_j = 0.0;
    double ddu = 0.0;
    double ddv = 0.0;
    for (int n = 0; n < 4; ++n) {
      const double dk = aj * (1.0 - pk[n]) / pk[n];
      depth_j += st->weight[n] * dk;
      ddu += st->dweight_du[n] * dk;
      ddv += st->dweight_dv[n] * dk;
    }
    const double r = pj.z() - depth_j;
    const auto [ji, jj] = b.add(static_cast<std::int64_t>(s), &r, huber_weight(std::abs(r), options.huber));
    if (ji == nullptr) continue;
    const Eigen::Vector2d dx_dd = projection_jacobian(pj, fj.intrinsics) * ray;
    const double dr_dd = ray.z() - (ddu * dx_dd.x() + ddv * dx_dd.y());
    add_scaled_row(ji, dr_dd * depth_proximity_derivative(p, di.proximity_params()), di, s);
    for (int n = 0; n < 4; ++n) {
      if (st->weight[n] == 0.0) continue;
      add_scaled_row(jj, -st->weight[n] * depth_proximity_derivative(pk[n], dj.proximity_params()), dj,
                     st->index[n]);
    }
  }
  return b.finish();
}

FactorResidual zero_code_prior(const Eigen::VectorXd& code, double weight, const EvalOptions& options) {
  if (!(weight > 0.0)) throw Error(ErrorCode::invalid_argument, "prior weight must be positive");
  const double sw = std::sqrt(weight);
  FactorResidual out;
  out.type = FactorType::prior;
  out.block_size = 1;
  out.residuals = sw * code;
  out.sample_ids.resize(static_cast<std::size_t>(code.size()));
  for (std::size_t k = 0; k < out.sample_ids.size(); ++k) out.sample_ids[k] = static_cast<std::int64_t>(k);
  out.robust_weights.assign(out.sample_ids.size(), 1.0);
  if (options.jacobians) out.jacobian_i = sw * RowMatrix::Identity(code.size(), code.size());
  return out;
}

double robust_energy(const FactorResidual& r, const HuberParams& huber) {
  if (r.type == FactorType::prior) return r.residuals.squaredNorm();
  double e = 0.0;
  const auto bs = static_cast<Eigen::Index>(r.block_size);
  for (std::size_t k = 0; k < r.block_count(); ++k)
    e += huber_cost(r.residuals.segment(static_cast<Eigen::Index>(k) * bs, bs).norm(), huber);
  return e;
}

double mean_abs_residual(const FactorResidual& r) {
  if (r.residuals.size() == 0) return 0.0;
  return r.residuals.cwiseAbs().mean();
}

}  // namespace codemap
