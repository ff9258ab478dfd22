#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <vector>

#include "codemap/geometry.hpp"

namespace codemap {

enum class ChannelKind { intensity, depth, proximity, rep_error, uncertainty };

const char* to_string(ChannelKind kind);

/// Single-channel float raster, row-major. Depth-like images use 0 as the
/// invalid sentinel.
class DenseImage {
 public:
  DenseImage() = default;
  DenseImage(int width, int height, ChannelKind kind, float fill = 0.0f);
  DenseImage(int width, int height, ChannelKind kind, std::vector<float> values);

  int width() const { return width_; }
  int height() const { return height_; }
  std::size_t size() const { return values_.size(); }
  bool empty() const { return values_.empty(); }
  ChannelKind kind() const { return kind_; }

  float& at(int x, int y) { return values_[index(x, y)]; }
  float at(int x, int y) const { return values_[index(x, y)]; }
  float& operator[](std::size_t i) { return values_[i]; }
  float operator[](std::size_t i) const { return values_[i]; }
  std::size_t index(int x, int y) const {
    return static_cast<std::size_t>(y) * static_cast<std::size_t>(width_) + static_cast<std::size_t>(x);
  }

  std::span<float> values() { return values_; }
  std::span<const float> values() const { return values_; }

  bool same_shape(const DenseImage& other) const {
    return width_ == other.width_ && height_ == other.height_;
  }

  bool operator==(const DenseImage&) const = default;

 private:
  int width_ = 0;
  int height_ = 0;
  ChannelKind kind_ = ChannelKind::intensity;
  std::vector<float> values_;
};

/// The four neighbors and weights of a continuous pixel location.
struct BilinearStencil {
  std::size_t index[4];
  double weight[4];
  /// d(weight)/du and d(weight)/dv, for the exact derivative of the interpolant.
  double dweight_du[4];
  double dweight_dv[4];
};

/// nullopt outside [0, w-1] x [0, h-1].
std::optional<BilinearStencil> bilinear_stencil(double u, double v, int width, int height);

struct SampleWithGradient {
  double value = 0.0;
  double du = 0.0;
  double dv = 0.0;
};

/// Bilinear sample with the gradient of the interpolant itself.
std::optional<SampleWithGradient> sample_bilinear(const DenseImage& image, double u, double v);

/// Separable Gaussian blur, clamped borders. sigma <= 0 returns a copy.
DenseImage gaussian_blur(const DenseImage& image, double sigma);

/// Number of pixels with value > 0.
std::size_t count_valid(const DenseImage& image);

}  // namespace codemap
