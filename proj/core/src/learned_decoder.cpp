#include "codemap/learned_decoder.hpp"

#include <cmath>
#include <map>
#include <optional>
#include <sstream>

#include "codemap/error.hpp"
#include "codemap/io.hpp"

namespace codemap {

const char* to_string(LayerKind kind) {
  switch (kind) {
    case LayerKind::conv2d: return "conv2d";
    case LayerKind::relu: return "relu";
    case LayerKind::sigmoid: return "sigmoid";
    case LayerKind::tanh: return "tanh";
    case LayerKind::softplus: return "softplus";
    case LayerKind::upsample: return "upsample";
    case LayerKind::avgpool: return "avgpool";
    case LayerKind::save: return "save";
    case LayerKind::concat: return "concat";
    case LayerKind::code_inject: return "code_inject";
  }
  return "unknown";
}

std::size_t WeightTensor::expected_size() const {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

namespace {

[[noreturn]] void shape_error(const LayerSpec& layer, std::size_t index, const std::string& what) {
  std::ostringstream os;
  os << "layer " << index << " '" << layer.name << "' (" << to_string(layer.kind) << "): " << what;
  throw Error(ErrorCode::shape, os.str());
}

std::size_t param_count(LayerKind kind) {
  switch (kind) {
    case LayerKind::conv2d: return 4;
    case LayerKind::code_inject: return 3;
    case LayerKind::upsample:
    case LayerKind::avgpool:
    case LayerKind::save:
    case LayerKind::concat: return 1;
    default: return 0;
  }
}

bool known_kind(LayerKind kind) {
  const auto v = static_cast<std::uint32_t>(kind);
  return v >= 1 && v <= 10;
}

struct Shape {
  int c = 0;
  int h = 0;
  int w = 0;
  bool operator==(const Shape&) const = default;
};

struct Activation {
  Shape shape;
  std::vector<double> v;

  Activation() = default;
  explicit Activation(Shape s)
      : shape(s), v(static_cast<std::size_t>(s.c) * static_cast<std::size_t>(s.h) * static_cast<std::size_t>(s.w), 0.0) {}
  double& at(int c, int y, int x) {
    return v[(static_cast<std::size_t>(c) * static_cast<std::size_t>(shape.h) + static_cast<std::size_t>(y)) *
                 static_cast<std::size_t>(shape.w) + static_cast<std::size_t>(x)];
  }
  double at(int c, int y, int x) const {
    return v[(static_cast<std::size_t>(c) * static_cast<std::size_t>(shape.h) + static_cast<std::size_t>(y)) *
                 static_cast<std::size_t>(shape.w) + static_cast<std::size_t>(x)];
  }
};

Shape conv_output(const Shape& in, int out_c, int k, int stride) {
  const int pad = k / 2;
  return {out_c, (in.h + 2 * pad - k) / stride + 1, (in.w + 2 * pad - k) / stride + 1};
}

Activation conv2d(const Activation& in, const LayerSpec& layer, bool with_bias) {
  const int out_c = static_cast<int>(layer.params[0]);
  const int in_c = static_cast<int>(layer.params[1]);
  const int k = static_cast<int>(layer.params[2]);
  const int stride = static_cast<int>(layer.params[3]);
  const int pad = k / 2;
  Activation out(conv_output(in.shape, out_c, k, stride));
  const auto& weight = layer.tensors[0].data;
  const auto& bias = layer.tensors[1].data;
  for (int o = 0; o < out_c; ++o) {
    for (int y = 0; y < out.shape.h; ++y)
      for (int x = 0; x < out.shape.w; ++x) out.at(o, y, x) = with_bias ? bias[static_cast<std::size_t>(o)] : 0.0;
    for (int i = 0; i < in_c; ++i) {
      for (int ky = 0; ky < k; ++ky) {
        for (int kx = 0; kx < k; ++kx) {
          const double wv = weight[((static_cast<std::size_t>(o) * static_cast<std::size_t>(in_c) + static_cast<std::size_t>(i)) *
                                        static_cast<std::size_t>(k) + static_cast<std::size_t>(ky)) *
                                       static_cast<std::size_t>(k) + static_cast<std::size_t>(kx)];
          if (wv == 0.0) continue;
          for (int y = 0; y < out.shape.h; ++y) {
            const int sy = y * stride + ky - pad;
            if (sy < 0 || sy >= in.shape.h) continue;
            for (int x = 0; x < out.shape.w; ++x) {
              const int sx = x * stride + kx - pad;
              if (sx < 0 || sx >= in.shape.w) continue;
              out.at(o, y, x) += wv * in.at(i, sy, sx);
            }
          }
        }
      }
    }
  }
  return out;
}

Activation upsample(const Activation& in, int f) {
  Activation out({in.shape.c, in.shape.h * f, in.shape.w * f});
  for (int c = 0; c < out.shape.c; ++c)
    for (int y = 0; y < out.shape.h; ++y)
      for (int x = 0; x < out.shape.w; ++x) out.at(c, y, x) = in.at(c, y / f, x / f);
  return out;
}

Activation avgpool(const Activation& in, int f) {
  Activation out({in.shape.c, in.shape.h / f, in.shape.w / f});
  const double norm = 1.0 / (f * f);
  for (int c = 0; c < out.shape.c; ++c)
    for (int y = 0; y < out.shape.h; ++y)
      for (int x = 0; x < out.shape.w; ++x) {
        double acc = 0.0;
        for (int dy = 0; dy < f; ++dy)
          for (int dx = 0; dx < f; ++dx) acc += in.at(c, y * f + dy, x * f + dx);
        out.at(c, y, x) = acc * norm;
      }
  return out;
}

Activation concat(const Activation& a, const Activation& b) {
  Activation out({a.shape.c + b.shape.c, a.shape.h, a.shape.w});
  std::copy(a.v.begin(), a.v.end(), out.v.begin());
  std::copy(b.v.begin(), b.v.end(), out.v.begin() + static_cast<std::ptrdiff_t>(a.v.size()));
  return out;
}

double softplus(double x) { return x > 30.0 ? x : std::log1p(std::exp(x)); }
double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

/// Applies a pointwise nonlinearity; when `derivative` is set, also stores f'(x).
void apply_pointwise(LayerKind kind, Activation& a, std::vector<double>* derivative) {
  if (derivative) derivative->resize(a.v.size());
  for (std::size_t i = 0; i < a.v.size(); ++i) {
    const double x = a.v[i];
    double y = 0.0;
    double dy = 0.0;
    switch (kind) {
      case LayerKind::relu: y = x > 0.0 ? x : 0.0; dy = x > 0.0 ? 1.0 : 0.0; break;
      case LayerKind::sigmoid: y = sigmoid(x); dy = y * (1.0 - y); break;
      case LayerKind::tanh: y = std::tanh(x); dy = 1.0 - y * y; break;
      case LayerKind::softplus: y = softplus(x); dy = sigmoid(x); break;
      default: break;
    }
    a.v[i] = y;
    if (derivative) (*derivative)[i] = dy;
  }
}

/// Per-layer data the tangent pass needs.
struct LayerRecord {
  Shape input;
  Shape output;
  std::vector<double> derivative;
};

struct ForwardResult {
  Activation output;
  std::vector<LayerRecord> records;
};

ForwardResult run_forward(const WeightBundle& bundle, Activation input, const Eigen::VectorXd& code,
                          bool record) {
  ForwardResult result;
  std::map<std::uint32_t, Activation> slots;
  Activation cur = std::move(input);
  if (record) result.records.resize(bundle.layers.size());
  for (std::size_t li = 0; li < bundle.layers.size(); ++li) {
    const LayerSpec& layer = bundle.layers[li];
    if (record) result.records[li].input = cur.shape;
    switch (layer.kind) {
      case LayerKind::conv2d: cur = conv2d(cur, layer, true); break;
      case LayerKind::upsample: cur = upsample(cur, static_cast<int>(layer.params[0])); break;
      case LayerKind::avgpool: cur = avgpool(cur, static_cast<int>(layer.params[0])); break;
      case LayerKind::save: slots[layer.params[0]] = cur; break;
      case LayerKind::concat: cur = concat(cur, slots.at(layer.params[0])); break;
      case LayerKind::code_inject: {
        const int c = static_cast<int>(layer.params[0]);
        Activation injected({c, cur.shape.h, cur.shape.w});
        const auto& weight = layer.tensors[0].data;
        const auto& bias = layer.tensors[1].data;
        const std::size_t cols = bundle.code_size;
        for (std::size_t r = 0; r < injected.v.size(); ++r) {
          double acc = bias[r];
          for (std::size_t k = 0; k < cols; ++k) acc += weight[r * cols + k] * code[static_cast<Eigen::Index>(k)];
          injected.v[r] = acc;
        }
        cur = concat(cur, injected);
        break;
      }
      default:
        apply_pointwise(layer.kind, cur, record ? &result.records[li].derivative : nullptr);
        break;
    }
    if (record) result.records[li].output = cur.shape;
  }
  result.output = std::move(cur);
  return result;
}

/// Tangent of the network output along one code direction. nullopt = zero.
std::optional<Activation> run_tangent(const WeightBundle& bundle, const std::vector<LayerRecord>& records,
                                      std::size_t code_index) {
  std::map<std::uint32_t, std::optional<Activation>> slots;
  std::optional<Activation> cur;
  for (std::size_t li = 0; li < bundle.layers.size(); ++li) {
    const LayerSpec& layer = bundle.layers[li];
    const LayerRecord& rec = records[li];
    switch (layer.kind) {
      case LayerKind::conv2d:
        if (cur) cur = conv2d(*cur, layer, false);
        break;
      case LayerKind::upsample:
        if (cur) cur = upsample(*cur, static_cast<int>(layer.params[0]));
        break;
      case LayerKind::avgpool:
        if (cur) cur = avgpool(*cur, static_cast<int>(layer.params[0]));
        break;
      case LayerKind::save: slots[layer.params[0]] = cur; break;
      case LayerKind::concat: {
        const auto& other = slots.at(layer.params[0]);
        if (cur || other) {
          const Activation a = cur ? *cur : Activation(rec.input);
          const Shape bshape{rec.output.c - rec.input.c, rec.output.h, rec.output.w};
          const Activation b = other ? *other : Activation(bshape);
          cur = concat(a, b);
        }
        break;
      }
      case LayerKind::code_inject: {
        const int c = static_cast<int>(layer.params[0]);
        Activation injected({c, rec.input.h, rec.input.w});
        const auto& weight = layer.tensors[0].data;
        for (std::size_t r = 0; r < injected.v.size(); ++r)
          injected.v[r] = weight[r * bundle.code_size + code_index];
        const Activation a = cur ? *cur : Activation(rec.input);
        cur = concat(a, injected);
        break;
      }
      default:
        if (cur)
          for (std::size_t i = 0; i < cur->v.size(); ++i) cur->v[i] *= rec.derivative[i];
        break;
    }
  }
  return cur;
}

}  // namespace

std::vector<std::vector<std::uint32_t>> expected_tensor_shapes(const LayerSpec& layer,
                                                               std::uint32_t code_size) {
  if (!known_kind(layer.kind)) {
    std::ostringstream os;
    os << "layer '" << layer.name << "': unknown kind " << static_cast<std::uint32_t>(layer.kind);
    throw Error(ErrorCode::shape, os.str());
  }
  if (layer.params.size() != param_count(layer.kind)) {
    std::ostringstream os;
    os << "layer '" << layer.name << "' (" << to_string(layer.kind) << "): expected "
       << param_count(layer.kind) << " parameters, got " << layer.params.size();
    throw Error(ErrorCode::shape, os.str());
  }
  const auto& p = layer.params;
  switch (layer.kind) {
    case LayerKind::conv2d: return {{p[0], p[1], p[2], p[2]}, {p[0]}};
    case LayerKind::code_inject: return {{p[0] * p[1] * p[2], code_size}, {p[0] * p[1] * p[2]}};
    default: return {};
  }
}

void validate_bundle(const WeightBundle& bundle) {
  if (bundle.code_size == 0) throw Error(ErrorCode::shape, "weights: code size must be positive");
  if (bundle.input_width == 0 || bundle.input_height == 0)
    throw Error(ErrorCode::shape, "weights: input resolution must be positive");
  if (!(bundle.proximity_scale > 0.0f) || !(bundle.rep_error_scale > 0.0f))
    throw Error(ErrorCode::shape, "weights: normalization scales must be positive");

  std::map<std::uint32_t, Shape> slots;
  Shape cur{3, static_cast<int>(bundle.input_height), static_cast<int>(bundle.input_width)};
  for (std::size_t li = 0; li < bundle.layers.size(); ++li) {
    const LayerSpec& layer = bundle.layers[li];
    const auto shapes = expected_tensor_shapes(layer, bundle.code_size);
    if (layer.tensors.size() != shapes.size())
      shape_error(layer, li, "expected " + std::to_string(shapes.size()) + " tensors, got " +
                                 std::to_string(layer.tensors.size()));
    for (std::size_t t = 0; t < shapes.size(); ++t) {
      if (layer.tensors[t].shape != shapes[t])
        shape_error(layer, li, "tensor " + std::to_string(t) + " shape disagrees with descriptor");
      if (layer.tensors[t].data.size() != layer.tensors[t].expected_size())
        shape_error(layer, li, "tensor " + std::to_string(t) + " holds " +
                                   std::to_string(layer.tensors[t].data.size()) + " values, expected " +
                                   std::to_string(layer.tensors[t].expected_size()));
    }
    const auto& p = layer.params;
    switch (layer.kind) {
      case LayerKind::conv2d:
        if (p[0] == 0 || p[2] == 0 || p[3] == 0) shape_error(layer, li, "zero-sized convolution");
        if (static_cast<int>(p[1]) != cur.c)
          shape_error(layer, li, "expects " + std::to_string(p[1]) + " input channels, activation has " +
                                     std::to_string(cur.c));
        cur = conv_output(cur, static_cast<int>(p[0]), static_cast<int>(p[2]), static_cast<int>(p[3]));
        if (cur.h <= 0 || cur.w <= 0) shape_error(layer, li, "output is empty");
        break;
      case LayerKind::upsample:
        if (p[0] == 0) shape_error(layer, li, "factor must be positive");
        cur.h *= static_cast<int>(p[0]);
        cur.w *= static_cast<int>(p[0]);
        break;
      case LayerKind::avgpool:
        if (p[0] == 0 || cur.h % static_cast<int>(p[0]) != 0 || cur.w % static_cast<int>(p[0]) != 0)
          shape_error(layer, li, "pool factor must divide the activation size");
        cur.h /= static_cast<int>(p[0]);
        cur.w /= static_cast<int>(p[0]);
        break;
      case LayerKind::save: slots[p[0]] = cur; break;
      case LayerKind::concat: {
        const auto it = slots.find(p[0]);
        if (it == slots.end()) shape_error(layer, li, "slot " + std::to_string(p[0]) + " was never saved");
        if (it->second.h != cur.h || it->second.w != cur.w)
          shape_error(layer, li, "slot spatial size differs from the activation");
        cur.c += it->second.c;
        break;
      }
      case LayerKind::code_inject:
        if (static_cast<int>(p[1]) != cur.h || static_cast<int>(p[2]) != cur.w)
          shape_error(layer, li, "injection grid differs from the activation size");
        cur.c += static_cast<int>(p[0]);
        break;
      default: break;
    }
  }
  if (cur.c != 2 || cur.h != static_cast<int>(bundle.input_height) ||
      cur.w != static_cast<int>(bundle.input_width)) {
    std::ostringstream os;
    os << "weights: network output is " << cur.c << "x" << cur.h << "x" << cur.w << ", expected 2x"
       << bundle.input_height << "x" << bundle.input_width;
    throw Error(ErrorCode::shape, os.str());
  }
}

std::vector<double> network_input(const ConditioningSet& cond, double proximity_scale,
                                  double rep_error_scale) {
  const std::size_t n = cond.intensity.size();
  std::vector<double> input(3 * n, 0.0);
  const ProximityParams prox{proximity_scale};
  for (std::size_t i = 0; i < n; ++i) {
    input[i] = cond.intensity[i];
    if (cond.sparse_depth[i] > 0.0f) {
      input[n + i] = depth_to_proximity(cond.sparse_depth[i], prox);
      const double r = std::max(0.0f, cond.rep_error[i]);
      input[2 * n + i] = rep_error_scale / (rep_error_scale + r);
    }
  }
  return input;
}

LearnedDecoder::LearnedDecoder(WeightBundle bundle) : bundle_(std::move(bundle)) {
  validate_bundle(bundle_);
}

void LearnedDecoder::check_conditioning(const ConditioningSet& cond) const {
  cond.validate();
  if (cond.width() != static_cast<int>(bundle_.input_width) ||
      cond.height() != static_cast<int>(bundle_.input_height)) {
    std::ostringstream os;
    os << "learned decoder expects " << bundle_.input_width << "x" << bundle_.input_height
       << " conditioning, got " << cond.width() << "x" << cond.height();
    throw Error(ErrorCode::dimension_mismatch, os.str());
  }
}

NetworkOutput LearnedDecoder::forward(const DepthCode& code, const ConditioningSet& cond) const {
  check_conditioning(cond);
  if (code.size() != code_size())
    throw Error(ErrorCode::dimension_mismatch, "learned decoder: code size mismatch");
  Activation input({3, cond.height(), cond.width()});
  input.v = network_input(cond, bundle_.proximity_scale, bundle_.rep_error_scale);
  const ForwardResult fwd = run_forward(bundle_, std::move(input), code.values, false);

  const int w = cond.width();
  const int h = cond.height();
  NetworkOutput out{DenseImage(w, h, ChannelKind::proximity), DenseImage(w, h, ChannelKind::uncertainty)};
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      out.proximity.at(x, y) = static_cast<float>(sigmoid(fwd.output.at(0, y, x)));
      out.uncertainty.at(x, y) = static_cast<float>(softplus(fwd.output.at(1, y, x)) + kUncertaintyFloor);
    }
  return out;
}

LinearDecoder LearnedDecoder::linearize(const ConditioningSet& cond) const {
  check_conditioning(cond);
  const int w = cond.width();
  const int h = cond.height();
  const auto n = static_cast<std::size_t>(w) * static_cast<std::size_t>(h);
  Activation input({3, h, w});
  input.v = network_input(cond, bundle_.proximity_scale, bundle_.rep_error_scale);
  const ForwardResult fwd =
      run_forward(bundle_, std::move(input), Eigen::VectorXd::Zero(code_size()), true);

  std::vector<double> prior(n);
  std::vector<double> slope(n);
  DenseImage uncertainty(w, h, ChannelKind::uncertainty);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const auto i = static_cast<std::size_t>(y * w + x);
      const double p = sigmoid(fwd.output.at(0, y, x));
      prior[i] = p;
      slope[i] = p * (1.0 - p);
      uncertainty[i] = static_cast<float>(softplus(fwd.output.at(1, y, x)) + kUncertaintyFloor);
    }

  RowMatrix jacobian = RowMatrix::Zero(static_cast<Eigen::Index>(n), code_size());
  for (int k = 0; k < code_size(); ++k) {
    const auto tangent = run_tangent(bundle_, fwd.records, static_cast<std::size_t>(k));
    if (!tangent) continue;
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        const auto i = static_cast<std::size_t>(y * w + x);
        jacobian(static_cast<Eigen::Index>(i), k) = slope[i] * tangent->at(0, y, x);
      }
  }
  return LinearDecoder(w, h, std::move(prior), std::move(jacobian), std::move(uncertainty),
                       proximity_params());
}

LearnedDecoder load_learned_decoder(std::span<const std::byte> weights) {
  return LearnedDecoder(parse_weights(weights));
}

}  // namespace codemap
