#include "codemap/image.hpp"

#include <algorithm>
#include <cmath>

#include "codemap/error.hpp"

namespace codemap {

const char* to_string(ChannelKind kind) {
  switch (kind) {
    case ChannelKind::intensity: return "intensity";
    case ChannelKind::depth: return "depth";
    case ChannelKind::proximity: return "proximity";
    case ChannelKind::rep_error: return "rep_error";
    case ChannelKind::uncertainty: return "uncertainty";
  }
  return "unknown";
}

DenseImage::DenseImage(int width, int height, ChannelKind kind, float fill)
    : width_(width), height_(height), kind_(kind) {
  if (width < 0 || height < 0) throw Error(ErrorCode::invalid_argument, "image size must be >= 0");
  values_.assign(static_cast<std::size_t>(width) * static_cast<std::size_t>(height), fill);
}

DenseImage::DenseImage(int width, int height, ChannelKind kind, std::vector<float> values)
    : width_(width), height_(height), kind_(kind), values_(std::move(values)) {
  if (width < 0 || height < 0 ||
      values_.size() != static_cast<std::size_t>(width) * static_cast<std::size_t>(height))
    throw Error(ErrorCode::dimension_mismatch, "image value count does not match width*height");
}

std::optional<BilinearStencil> bilinear_stencil(double u, double v, int width, int height) {
  if (!(u >= 0.0 && v >= 0.0 && u <= width - 1 && v <= height - 1)) return std::nullopt;
  int x0 = static_cast<int>(std::floor(u));
  int y0 = static_cast<int>(std::floor(v));
  // Right/bottom edge: use the last full cell with fraction 1.
  if (x0 >= width - 1) x0 = std::max(width - 2, 0);
  if (y0 >= height - 1) y0 = std::max(height - 2, 0);
  const int x1 = std::min(x0 + 1, width - 1);
  const int y1 = std::min(y0 + 1, height - 1);
  const double fx = u - x0;
  const double fy = v - y0;

  BilinearStencil s{};
  const auto w = static_cast<std::size_t>(width);
  s.index[0] = static_cast<std::size_t>(y0) * w + static_cast<std::size_t>(x0);
  s.index[1] = static_cast<std::size_t>(y0) * w + static_cast<std::size_t>(x1);
  s.index[2] = static_cast<std::size_t>(y1) * w + static_cast<std::size_t>(x0);
  s.index[3] = static_cast<std::size_t>(y1) * w + static_cast<std::size_t>(x1);
  s.weight[0] = (1.0 - fx) * (1.0 - fy);
  s.weight[1] = fx * (1.0 - fy);
  s.weight[2] = (1.0 - fx) * fy;
  s.weight[3] = fx * fy;
  s.dweight_du[0] = -(1.0 - fy);
  s.dweight_du[1] = (1.0 - fy);
  s.dweight_du[2] = -fy;
  s.dweight_du[3] = fy;
  s.dweight_dv[0] = -(1.0 - fx);
  s.dweight_dv[1] = -fx;
  s.dweight_dv[2] = (1.0 - fx);
  s.dweight_dv[3] = fx;
  return s;
}

std::optional<SampleWithGradient> sample_bilinear(const DenseImage& image, double u, double v) {
  const auto s = bilinear_stencil(u, v, image.width(), image.height());
  if (!s) return std::nullopt;
  SampleWithGradient out;
  for (int n = 0; n < 4; ++n) {
    const double value = image[s->index[n]];
    out.value += s->weight[n] * value;
    out.du += s->dweight_du[n] * value;
    out.dv += s->dweight_dv[n] * value;
  }
  return out;
}

DenseImage gaussian_blur(const DenseImage& image, double sigma) {
  if (sigma <= 0.0) return image;
  const int radius = static_cast<int>(std::ceil(3.0 * sigma));
  std::vector<double> kernel(static_cast<std::size_t>(2 * radius + 1));
  double sum = 0.0;
  for (int i = -radius; i <= radius; ++i) {
    kernel[static_cast<std::size_t>(i + radius)] = std::exp(-0.5 * i * i / (sigma * sigma));
    sum += kernel[static_cast<std::size_t>(i + radius)];
  }
  for (double& k : kernel) k /= sum;

  const int w = image.width();
  const int h = image.height();
  DenseImage tmp(w, h, image.kind());
  DenseImage out(w, h, image.kind());
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      double acc = 0.0;
      for (int i = -radius; i <= radius; ++i)
        acc += kernel[static_cast<std::size_t>(i + radius)] * image.at(std::clamp(x + i, 0, w - 1), y);
      tmp.at(x, y) = static_cast<float>(acc);
    }
  }
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      double acc = 0.0;
      for (int i = -radius; i <= radius; ++i)
        acc += kernel[static_cast<std::size_t>(i + radius)] * tmp.at(x, std::clamp(y + i, 0, h - 1));
      out.at(x, y) = static_cast<float>(acc);
    }
  }
  return out;
}

std::size_t count_valid(const DenseImage& image) {
  return static_cast<std::size_t>(
      std::count_if(image.values().begin(), image.values().end(), [](float v) { return v > 0.0f; }));
}

}  // namespace codemap
