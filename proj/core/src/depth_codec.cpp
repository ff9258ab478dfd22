#include "codemap/depth_codec.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <sstream>

#include "codemap/error.hpp"

namespace codemap {

void ConditioningSet::validate() const {
  if (!intensity.same_shape(sparse_depth) || !intensity.same_shape(rep_error))
    throw Error(ErrorCode::dimension_mismatch, "conditioning images must share dimensions");
  for (std::size_t i = 0; i < rep_error.size(); ++i) {
    if (sparse_depth[i] > 0.0f && !(rep_error[i] >= 0.0f))
      throw Error(ErrorCode::invalid_argument, "reprojection error must be >= 0 at sparse points");
  }
}

LinearDecoder::LinearDecoder(int width, int height, std::vector<double> prior_proximity,
                             RowMatrix jacobian, DenseImage uncertainty, ProximityParams proximity)
    : width_(width),
      height_(height),
      prior_(std::move(prior_proximity)),
      jacobian_(std::move(jacobian)),
      uncertainty_(std::move(uncertainty)),
      proximity_(proximity) {
  const auto n = static_cast<std::size_t>(width) * static_cast<std::size_t>(height);
  if (prior_.size() != n || static_cast<std::size_t>(jacobian_.rows()) != n ||
      uncertainty_.width() != width || uncertainty_.height() != height)
    throw Error(ErrorCode::dimension_mismatch, "decoder: prior/jacobian/uncertainty sizes disagree");
  if (!(proximity_.scale > 0.0))
    throw Error(ErrorCode::invalid_argument, "decoder: proximity scale must be positive");
  for (float b : uncertainty_.values())
    if (!(b > 0.0f)) throw Error(ErrorCode::invalid_argument, "decoder: uncertainty must be positive");
}

Eigen::VectorXd LinearDecoder::proximity_map(const Eigen::VectorXd& code) const {
  if (code.size() != jacobian_.cols())
    throw Error(ErrorCode::dimension_mismatch, "decode: code size does not match decoder");
  Eigen::VectorXd prox = jacobian_ * code;
  for (std::size_t i = 0; i < prior_.size(); ++i) prox[static_cast<Eigen::Index>(i)] += prior_[i];
  return prox;
}

DenseImage LinearDecoder::decode_depth(const DepthCode& code) const {
  const Eigen::VectorXd prox = proximity_map(code.values);
  DenseImage depth(width_, height_, ChannelKind::depth);
  for (Eigen::Index i = 0; i < prox.size(); ++i) {
    const double p = prox[i];
    if (p > 0.0 && p < 1.0)
      depth[static_cast<std::size_t>(i)] = static_cast<float>(proximity_.scale * (1.0 - p) / p);
  }
  return depth;
}

DecoderOutput LinearDecoder::decode(const DepthCode& code) const {
  const Eigen::VectorXd prox = proximity_map(code.values);
  DecoderOutput out;
  out.depth = DenseImage(width_, height_, ChannelKind::depth);
  out.proximity = DenseImage(width_, height_, ChannelKind::proximity);
  for (Eigen::Index i = 0; i < prox.size(); ++i) {
    const double p = prox[i];
    const auto idx = static_cast<std::size_t>(i);
    out.proximity[idx] = static_cast<float>(p);
    if (p > 0.0 && p < 1.0) out.depth[idx] = static_cast<float>(proximity_.scale * (1.0 - p) / p);
  }
  out.uncertainty = uncertainty_;
  out.jacobian = jacobian_;
  return out;
}

DecoderOutput LinearDecoder::decode(const DepthCode& code, const ConditioningSet& cond) const {
  if (cond.width() != width_ || cond.height() != height_) {
    std::ostringstream os;
    os << "decode: conditioning is " << cond.width() << "x" << cond.height() << ", decoder expects "
       << width_ << "x" << height_;
    throw Error(ErrorCode::dimension_mismatch, os.str());
  }
  return decode(code);
}

std::vector<std::pair<int, int>> cosine_mode_frequencies(int code_size) {
  if (code_size <= 0) throw Error(ErrorCode::invalid_argument, "code size must be positive");
  const int limit = static_cast<int>(std::ceil(std::sqrt(static_cast<double>(code_size)))) + 2;
  std::vector<std::pair<int, int>> modes;
  for (int fv = 0; fv <= limit; ++fv)
    for (int fu = 0; fu <= limit; ++fu) modes.emplace_back(fu, fv);
  std::sort(modes.begin(), modes.end(), [](const auto& a, const auto& b) {
    const int ra = a.first * a.first + a.second * a.second;
    const int rb = b.first * b.first + b.second * b.second;
    if (ra != rb) return ra < rb;
    if (a.second != b.second) return a.second < b.second;
    return a.first < b.first;
  });
  modes.resize(static_cast<std::size_t>(code_size));
  return modes;
}

std::vector<double> cosine_mode(int fu, int fv, int width, int height) {
  std::vector<double> mode(static_cast<std::size_t>(width) * static_cast<std::size_t>(height));
  std::vector<double> cu(static_cast<std::size_t>(width));
  std::vector<double> cv(static_cast<std::size_t>(height));
  for (int x = 0; x < width; ++x)
    cu[static_cast<std::size_t>(x)] = std::cos(std::numbers::pi * fu * (x + 0.5) / width);
  for (int y = 0; y < height; ++y)
    cv[static_cast<std::size_t>(y)] = std::cos(std::numbers::pi * fv * (y + 0.5) / height);
  for (int y = 0; y < height; ++y)
    for (int x = 0; x < width; ++x)
      mode[static_cast<std::size_t>(y * width + x)] =
          cu[static_cast<std::size_t>(x)] * cv[static_cast<std::size_t>(y)];
  return mode;
}

namespace {

struct SparsePoint {
  int x;
  int y;
  double proximity;
  double confidence;  // 1 / (1 + rep_error)
};

/// k-nearest sparse points via a uniform bucket grid.
class NeighborIndex {
 public:
  NeighborIndex(const std::vector<SparsePoint>& points, int width, int height, int cell)
      : points_(points), cell_(cell) {
    gw_ = (width + cell - 1) / cell;
    gh_ = (height + cell - 1) / cell;
    buckets_.resize(static_cast<std::size_t>(gw_ * gh_));
    for (std::size_t i = 0; i < points.size(); ++i)
      buckets_[static_cast<std::size_t>((points[i].y / cell) * gw_ + points[i].x / cell)].push_back(i);
  }

  /// Fills `out` with (squared distance, point index) of up to k nearest points.
  void query(int x, int y, int k, std::vector<std::pair<double, std::size_t>>& out) const {
    out.clear();
    const int bx = x / cell_;
    const int by = y / cell_;
    const int max_ring = std::max(gw_, gh_);
    for (int ring = 0; ring <= max_ring; ++ring) {
      for (int gy = by - ring; gy <= by + ring; ++gy) {
        if (gy < 0 || gy >= gh_) continue;
        for (int gx = bx - ring; gx <= bx + ring; ++gx) {
          if (gx < 0 || gx >= gw_) continue;
          if (std::max(std::abs(gx - bx), std::abs(gy - by)) != ring) continue;
          for (std::size_t idx : buckets_[static_cast<std::size_t>(gy * gw_ + gx)]) {
            const double dx = points_[idx].x - x;
            const double dy = points_[idx].y - y;
            insert(out, {dx * dx + dy * dy, idx}, k);
          }
        }
      }
      // Anything beyond this ring is at least ring*cell away.
      const double bound = static_cast<double>(ring) * cell_;
      if (static_cast<int>(out.size()) == k && out.back().first <= bound * bound) break;
    }
  }

 private:
  static void insert(std::vector<std::pair<double, std::size_t>>& best,
                     std::pair<double, std::size_t> item, int k) {
    if (static_cast<int>(best.size()) == k && !(item < best.back())) return;
    auto pos = std::upper_bound(best.begin(), best.end(), item);
    best.insert(pos, item);
    if (static_cast<int>(best.size()) > k) best.pop_back();
  }

  const std::vector<SparsePoint>& points_;
  int cell_;
  int gw_ = 0;
  int gh_ = 0;
  std::vector<std::vector<std::size_t>> buckets_;
};

}  // namespace

LinearDecoder make_analytic_decoder(const ConditioningSet& cond, const AnalyticDecoderConfig& config) {
  cond.validate();
  if (config.neighbors < 1) throw Error(ErrorCode::invalid_argument, "analytic decoder: neighbors < 1");
  const int w = cond.width();
  const int h = cond.height();

  std::vector<SparsePoint> points;
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const float d = cond.sparse_depth.at(x, y);
      if (d > 0.0f) {
        const double rep = std::max(0.0f, cond.rep_error.at(x, y));
        points.push_back({x, y, depth_to_proximity(d, config.proximity), 1.0 / (1.0 + rep)});
      }
    }
  }
  if (points.size() < 3) {
    std::ostringstream os;
    os << "analytic decoder needs at least 3 sparse points, got " << points.size();
    throw Error(ErrorCode::insufficient_data, os.str());
  }

  const auto n = static_cast<std::size_t>(w) * static_cast<std::size_t>(h);
  std::vector<double> prior(n);
  DenseImage uncertainty(w, h, ChannelKind::uncertainty);
  const NeighborIndex index(points, w, h, 16);
  const int k = std::min<int>(config.neighbors, static_cast<int>(points.size()));
  std::vector<std::pair<double, std::size_t>> nearest;
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      index.query(x, y, k, nearest);
      const auto pix = static_cast<std::size_t>(y * w + x);
      const double nearest_dist = std::sqrt(nearest.front().first);
      uncertainty[pix] =
          static_cast<float>(config.uncertainty_base + config.uncertainty_slope * nearest_dist);
      if (nearest.front().first == 0.0) {
        prior[pix] = points[nearest.front().second].proximity;
        continue;
      }
      double num = 0.0;
      double den = 0.0;
      for (const auto& [d2, idx] : nearest) {
        const double wgt = points[idx].confidence / std::pow(d2, 0.5 * config.idw_power);
        num += wgt * points[idx].proximity;
        den += wgt;
      }
      prior[pix] = num / den;
    }
  }

  const auto modes = cosine_mode_frequencies(config.code_size);
  RowMatrix jacobian(static_cast<Eigen::Index>(n), config.code_size);
  for (int c = 0; c < config.code_size; ++c) {
    const auto mode = cosine_mode(modes[static_cast<std::size_t>(c)].first,
                                  modes[static_cast<std::size_t>(c)].second, w, h);
    for (std::size_t i = 0; i < n; ++i)
      jacobian(static_cast<Eigen::Index>(i), c) = config.basis_amplitude * mode[i];
  }
  return LinearDecoder(w, h, std::move(prior), std::move(jacobian), std::move(uncertainty),
                       config.proximity);
}

DenseImage to_proximity_image(const DenseImage& depth, const ProximityParams& p) {
  DenseImage out(depth.width(), depth.height(), ChannelKind::proximity);
  for (std::size_t i = 0; i < depth.size(); ++i)
    if (depth[i] > 0.0f) out[i] = static_cast<float>(depth_to_proximity(depth[i], p));
  return out;
}

double recon_error(const DenseImage& pred, const DenseImage& gt, const DenseImage& uncertainty,
                   ErrorSpace space, const ProximityParams& p) {
  if (!pred.same_shape(gt) || !pred.same_shape(uncertainty))
    throw Error(ErrorCode::dimension_mismatch, "recon_error: image dimensions differ");
  const auto value = [&](const DenseImage& img, std::size_t i) -> double {
    if (space == ErrorSpace::proximity && img.kind() == ChannelKind::depth)
      return img[i] > 0.0f ? depth_to_proximity(img[i], p) : 0.0;
    return img[i];
  };
  double sum = 0.0;
  for (std::size_t i = 0; i < gt.size(); ++i) {
    if (!(gt[i] > 0.0f)) continue;
    const double b = uncertainty[i];
    if (!(b > 0.0)) throw Error(ErrorCode::domain, "recon_error: uncertainty must be positive");
    sum += std::abs(value(pred, i) - value(gt, i)) / b + std::log(b);
  }
  return sum;
}

}  // namespace codemap
