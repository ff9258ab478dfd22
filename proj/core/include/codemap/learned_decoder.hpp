#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "codemap/depth_codec.hpp"

namespace codemap {

/// Layer kinds of the CMWT architecture descriptor. Values are part of the
/// file format.
enum class LayerKind : std::uint32_t {
  conv2d = 1,       // params {out_c, in_c, kernel, stride}; tensors weight[out,in,k,k], bias[out]
  relu = 2,
  sigmoid = 3,
  tanh = 4,
  softplus = 5,
  upsample = 6,     // params {factor}; nearest neighbour
  avgpool = 7,      // params {factor}
  save = 8,         // params {slot}; stores the current activation
  concat = 9,       // params {slot}; current = [current, slot] along channels
  code_inject = 10, // params {channels, height, width}; tensors weight[c*h*w, code], bias[c*h*w]
};

const char* to_string(LayerKind kind);

struct WeightTensor {
  std::vector<std::uint32_t> shape;
  std::vector<float> data;

  std::size_t expected_size() const;
  bool operator==(const WeightTensor&) const = default;
};

struct LayerSpec {
  LayerKind kind = LayerKind::relu;
  std::string name;
  std::vector<std::uint32_t> params;
  std::vector<WeightTensor> tensors;
  bool operator==(const LayerSpec&) const = default;
};

/// In-memory form of a CMWT weight file. The network input is the 3-channel
/// stack [intensity, sparse proximity, normalized reprojection error]; the
/// final activation has 2 channels mapped to proximity = sigmoid(ch0) and
/// uncertainty = softplus(ch1) + kUncertaintyFloor.
struct WeightBundle {
  std::uint32_t code_size = kDefaultCodeSize;
  std::uint32_t input_width = kDefaultWidth;
  std::uint32_t input_height = kDefaultHeight;
  float proximity_scale = 2.0f;
  /// Reprojection errors are normalized as s / (s + r).
  float rep_error_scale = 1.0f;
  std::vector<LayerSpec> layers;
  bool operator==(const WeightBundle&) const = default;
};

inline constexpr double kUncertaintyFloor = 1e-3;

/// Tensor shapes implied by a layer's parameters. Throws ErrorCode::shape
/// naming the layer when the parameters are malformed.
std::vector<std::vector<std::uint32_t>> expected_tensor_shapes(const LayerSpec& layer,
                                                               std::uint32_t code_size);

/// Checks parameter arity, tensor shapes and sizes, and the activation
/// dataflow. Throws ErrorCode::shape naming the offending layer.
void validate_bundle(const WeightBundle& bundle);

/// The 3-channel network input for a conditioning set, channel-major.
std::vector<double> network_input(const ConditioningSet& cond, double proximity_scale,
                                  double rep_error_scale);

struct NetworkOutput {
  DenseImage proximity;
  DenseImage uncertainty;
};

/// Inference-side replay of an exported conditional decoder.
class LearnedDecoder {
 public:
  explicit LearnedDecoder(WeightBundle bundle);

  const WeightBundle& bundle() const { return bundle_; }
  int code_size() const { return static_cast<int>(bundle_.code_size); }
  ProximityParams proximity_params() const { return {bundle_.proximity_scale}; }

  /// Nonlinear forward pass at an arbitrary code.
  NetworkOutput forward(const DepthCode& code, const ConditioningSet& cond) const;

  /// Forward pass at the zero code plus the exact code Jacobian of the
  /// proximity output (forward-mode differentiation).
  LinearDecoder linearize(const ConditioningSet& cond) const;

 private:
  void check_conditioning(const ConditioningSet& cond) const;

  WeightBundle bundle_;
};

/// Parses a CMWT byte stream. Throws ErrorCode::format / checksum / shape;
/// never returns a partially built decoder.
LearnedDecoder load_learned_decoder(std::span<const std::byte> weights);

}  // namespace codemap
