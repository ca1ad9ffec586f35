#pragma once

// Global classifiers shared through federated learning, plus flattening of
// per-parameter gradients into a single vector.
//
// Every activation is a sigmoid and pooling is average pooling or strided
// convolution, so the loss is smooth in both inputs and parameters and
// gradients of gradients are defined everywhere.
//
// lenet-variant (input C x H x W, K classes)
//   conv1  C -> 12, 5x5, stride 1, pad 2, sigmoid, avgpool 2
//   conv2 12 -> 16, 5x5, stride 1, pad 2, sigmoid, avgpool 2
//   fc1   16*(H/4)*(W/4) -> 120, sigmoid
//   fc2   120 -> K
//
// small-resnet (input C x H x W, K classes)
//   stem   C -> 16, 3x3, sigmoid
//   stage1 two residual blocks at 16 channels
//   stage2 two residual blocks at 32 channels, the first with stride 2
//   stage3 two residual blocks at 64 channels, the first with stride 2
//   global average pool, fc 64 -> K
// A residual block is sigmoid(conv3x3(sigmoid(conv3x3(x))) + shortcut(x));
// the shortcut is a strided 1x1 convolution whenever the shape changes.

#include <cstdint>
#include <random>
#include <string>

#include "grnn/binary_io.hpp"
#include "grnn/nn.hpp"

namespace grnn {

enum class Architecture { LeNetVariant, SmallResNet };

class UnsupportedArchitecture : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

inline std::string architecture_name(Architecture a) {
  return a == Architecture::LeNetVariant ? "lenet-variant" : "small-resnet";
}

inline Architecture parse_architecture(const std::string& id) {
  if (id == "lenet-variant" || id == "lenet") return Architecture::LeNetVariant;
  if (id == "small-resnet" || id == "resnet") return Architecture::SmallResNet;
  throw UnsupportedArchitecture("unsupported architecture id '" + id + "'");
}

struct InputSpec {
  std::size_t channels = 1, height = 32, width = 32;
  bool operator==(const InputSpec&) const = default;
};

struct ParamSpec {
  std::string name;
  Shape shape;
  std::size_t fan_in;
};

struct GlobalModel {
  Architecture arch = Architecture::LeNetVariant;
  InputSpec input;
  std::size_t classes = 10;
  std::vector<ParamSpec> layout;
  std::vector<Tensor> params;

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& p : layout) n += numel(p.shape);
    return n;
  }

  // Same architecture with new parameter values (as fresh leaves).
  GlobalModel with_values(const std::vector<std::vector<double>>& values) const {
    if (values.size() != layout.size()) throw ShapeError("with_values: parameter count mismatch");
    GlobalModel m = *this;
    for (std::size_t i = 0; i < layout.size(); ++i) {
      m.params[i] = Tensor::parameter(layout[i].shape, values[i]);
    }
    return m;
  }

  // Index of the bias of the final affine layer.
  std::size_t final_bias_index() const { return layout.size() - 1; }
};

namespace detail {

inline constexpr std::size_t kLeNetConv1 = 12;
inline constexpr std::size_t kLeNetConv2 = 16;
inline constexpr std::size_t kLeNetHidden = 120;
inline constexpr std::size_t kResNetWidths[3] = {16, 32, 64};

inline void add_conv(std::vector<ParamSpec>& layout, const std::string& name, std::size_t out,
                     std::size_t in, std::size_t k) {
  layout.push_back({name + ".weight", {out, in, k, k}, in * k * k});
  layout.push_back({name + ".bias", {out}, in * k * k});
}

inline void add_linear(std::vector<ParamSpec>& layout, const std::string& name, std::size_t out,
                       std::size_t in) {
  layout.push_back({name + ".weight", {out, in}, in});
  layout.push_back({name + ".bias", {out}, in});
}

inline bool is_power_of_two(std::size_t v) { return v && !(v & (v - 1)); }

inline std::vector<ParamSpec> model_layout(Architecture arch, const InputSpec& in, std::size_t k) {
  std::vector<ParamSpec> layout;
  if (arch == Architecture::LeNetVariant) {
    add_conv(layout, "conv1", kLeNetConv1, in.channels, 5);
    add_conv(layout, "conv2", kLeNetConv2, kLeNetConv1, 5);
    add_linear(layout, "fc1", kLeNetHidden, kLeNetConv2 * (in.height / 4) * (in.width / 4));
    add_linear(layout, "fc2", k, kLeNetHidden);
    return layout;
  }
  add_conv(layout, "stem", kResNetWidths[0], in.channels, 3);
  std::size_t prev = kResNetWidths[0];
  for (std::size_t s = 0; s < 3; ++s) {
    const std::size_t w = kResNetWidths[s];
    for (std::size_t b = 0; b < 2; ++b) {
      const std::string name = "stage" + std::to_string(s + 1) + ".block" + std::to_string(b + 1);
      add_conv(layout, name + ".conv_a", w, prev, 3);
      add_conv(layout, name + ".conv_b", w, w, 3);
      if (prev != w) add_conv(layout, name + ".shortcut", w, prev, 1);
      prev = w;
    }
  }
  add_linear(layout, "fc", k, prev);
  return layout;
}

}  // namespace detail

// Weight initialization. The architecture default is uniform in +-0.5 for
// lenet-variant and uniform in +-1/sqrt(fan_in) for small-resnet. With the
// fan-in bound the sigmoid LeNet sits on a loss plateau and its gradients
// carry little information about the input.
struct ModelInit {
  enum class Scheme { Default, FanIn, Fixed };
  Scheme scheme = Scheme::Default;
  double bound = 0.0;  // used by Fixed

  static ModelInit fan_in() { return {Scheme::FanIn, 0.0}; }
  static ModelInit fixed(double bound) {
    if (!(bound > 0.0)) throw std::invalid_argument("ModelInit: bound must be positive");
    return {Scheme::Fixed, bound};
  }
};

inline ModelInit default_init(Architecture arch) {
  return arch == Architecture::LeNetVariant ? ModelInit::fixed(0.5) : ModelInit::fan_in();
}

inline GlobalModel build_model(Architecture arch, const InputSpec& input, std::size_t classes,
                               std::uint64_t seed, ModelInit init = {}) {
  if (classes < 2) throw std::invalid_argument("build_model: need at least 2 classes");
  if (input.channels == 0 || !detail::is_power_of_two(input.height) ||
      !detail::is_power_of_two(input.width) || input.height < 16 || input.width < 16) {
    throw std::invalid_argument("build_model: spatial extents must be powers of two >= 16");
  }
  GlobalModel m;
  m.arch = arch;
  m.input = input;
  m.classes = classes;
  m.layout = detail::model_layout(arch, input, classes);
  std::mt19937_64 rng(seed);
  if (init.scheme == ModelInit::Scheme::Default) init = default_init(arch);
  for (const auto& spec : m.layout) {
    const double bound = init.scheme == ModelInit::Scheme::Fixed
                             ? init.bound
                             : 1.0 / std::sqrt(static_cast<double>(spec.fan_in));
    std::uniform_real_distribution<double> dist(-bound, bound);
    std::vector<double> v(numel(spec.shape));
    for (auto& x : v) x = dist(rng);
    m.params.push_back(Tensor::parameter(spec.shape, std::move(v)));
  }
  return m;
}

inline GlobalModel build_model(const std::string& arch, const InputSpec& input, std::size_t classes,
                               std::uint64_t seed, ModelInit init = {}) {
  return build_model(parse_architecture(arch), input, classes, seed, init);
}

namespace detail {

inline Tensor conv_layer(const Tensor& x, const std::vector<Tensor>& p, std::size_t& i,
                         std::size_t stride, std::size_t pad) {
  Tensor y = conv2d(x, p[i], stride, pad);
  y = add_channel_bias(y, p[i + 1]);
  i += 2;
  return y;
}

inline Tensor lenet_forward(const std::vector<Tensor>& p, const Tensor& x) {
  std::size_t i = 0;
  Tensor h = avg_pool(sigmoid(conv_layer(x, p, i, 1, 2)), 2);
  h = avg_pool(sigmoid(conv_layer(h, p, i, 1, 2)), 2);
  h = reshape(h, {h.dim(0), h.numel() / h.dim(0)});
  h = sigmoid(linear(h, p[4], p[5]));
  return linear(h, p[6], p[7]);
}

inline Tensor resnet_forward(const std::vector<Tensor>& p, const Tensor& x) {
  std::size_t i = 0;
  Tensor h = sigmoid(conv_layer(x, p, i, 1, 1));
  std::size_t prev = kResNetWidths[0];
  for (std::size_t s = 0; s < 3; ++s) {
    const std::size_t w = kResNetWidths[s];
    for (std::size_t b = 0; b < 2; ++b) {
      const std::size_t stride = (s > 0 && b == 0) ? 2 : 1;
      Tensor a = sigmoid(conv_layer(h, p, i, stride, 1));
      Tensor r = conv_layer(a, p, i, 1, 1);
      Tensor shortcut = prev != w ? conv_layer(h, p, i, stride, 0) : h;
      h = sigmoid(add(r, shortcut));
      prev = w;
    }
  }
  h = avg_pool(h, h.dim(2));
  h = reshape(h, {h.dim(0), h.dim(1)});
  return linear(h, p[i], p[i + 1]);
}

}  // namespace detail

// Logits (N, K) for a batch of images (N, C, H, W).
inline Tensor forward(const GlobalModel& model, const Tensor& images) {
  const auto& in = model.input;
  if (images.rank() != 4 || images.dim(1) != in.channels || images.dim(2) != in.height ||
      images.dim(3) != in.width) {
    throw ShapeError("forward: images " + to_string(images.shape()) + " do not match input spec (" +
                     std::to_string(in.channels) + "," + std::to_string(in.height) + "," +
                     std::to_string(in.width) + ")");
  }
  return model.arch == Architecture::LeNetVariant ? detail::lenet_forward(model.params, images)
                                                  : detail::resnet_forward(model.params, images);
}

// Per-parameter gradients in fixed architecture order plus the flat view.
struct GradientVector {
  std::vector<Shape> shapes;
  std::vector<double> values;

  std::size_t size() const { return values.size(); }
  std::size_t offset(std::size_t param) const {
    std::size_t o = 0;
    for (std::size_t i = 0; i < param; ++i) o += numel(shapes[i]);
    return o;
  }
  std::span<const double> param(std::size_t i) const {
    return {values.data() + offset(i), numel(shapes.at(i))};
  }
  Tensor as_tensor() const { return Tensor({values.size()}, values); }
  bool operator==(const GradientVector&) const = default;
};

inline GradientVector flatten_gradient(const std::vector<Tensor>& grads, const GlobalModel& model) {
  if (grads.size() != model.layout.size()) {
    throw ShapeError("flatten_gradient: expected " + std::to_string(model.layout.size()) +
                     " tensors, got " + std::to_string(grads.size()));
  }
  GradientVector v;
  for (std::size_t i = 0; i < grads.size(); ++i) {
    if (grads[i].shape() != model.layout[i].shape) {
      throw ShapeError("flatten_gradient: parameter " + model.layout[i].name + " has shape " +
                       to_string(model.layout[i].shape) + ", gradient has " +
                       to_string(grads[i].shape()));
    }
    v.shapes.push_back(grads[i].shape());
    v.values.insert(v.values.end(), grads[i].values().begin(), grads[i].values().end());
  }
  return v;
}

inline std::vector<Tensor> unflatten(const GradientVector& v, const GlobalModel& model) {
  if (v.size() != model.parameter_count()) {
    throw ShapeError("unflatten: vector length " + std::to_string(v.size()) +
                     " does not match parameter count " + std::to_string(model.parameter_count()));
  }
  std::vector<Tensor> out;
  std::size_t off = 0;
  for (const auto& spec : model.layout) {
    const std::size_t n = numel(spec.shape);
    out.emplace_back(spec.shape, std::vector<double>(v.values.begin() + static_cast<long>(off),
                                                     v.values.begin() + static_cast<long>(off + n)));
    off += n;
  }
  return out;
}

// Differentiable concatenation of gradient tensors into one vector.
inline Tensor flatten_all(const std::vector<Tensor>& parts) {
  std::vector<Tensor> flat;
  flat.reserve(parts.size());
  for (const auto& p : parts) flat.push_back(flatten(p));
  return concat(flat, 0);
}

// Checkpoint container, little-endian:
//   "GRNNMDL1" | arch id (u32 length + bytes) | C, H, W, K (u32)
//   | parameter count (u32) | per parameter: rank (u32), extents (u32 each)
//   | all parameter values as f64 in flattening order.
inline void save_model(const GlobalModel& model, const std::string& path) {
  ByteWriter w;
  w.raw("GRNNMDL1");
  w.str(architecture_name(model.arch));
  w.u32_le(static_cast<std::uint32_t>(model.input.channels));
  w.u32_le(static_cast<std::uint32_t>(model.input.height));
  w.u32_le(static_cast<std::uint32_t>(model.input.width));
  w.u32_le(static_cast<std::uint32_t>(model.classes));
  w.u32_le(static_cast<std::uint32_t>(model.params.size()));
  for (const auto& p : model.params) {
    w.u32_le(static_cast<std::uint32_t>(p.rank()));
    for (auto d : p.shape()) w.u32_le(static_cast<std::uint32_t>(d));
  }
  for (const auto& p : model.params)
    for (double v : p.values()) w.f64_le(v);
  write_file_bytes(path, w.bytes());
}

inline GlobalModel load_model(const std::string& path) {
  const auto bytes = read_file_bytes(path);
  ByteReader r(bytes);
  if (r.raw(8, "magic") != "GRNNMDL1") throw FormatError("not a model checkpoint", 0);
  const std::size_t arch_at = r.offset();
  Architecture arch;
  try {
    arch = parse_architecture(r.str("architecture id"));
  } catch (const UnsupportedArchitecture& e) {
    throw FormatError(e.what(), arch_at);
  }
  InputSpec in;
  in.channels = r.u32_le("channels");
  in.height = r.u32_le("height");
  in.width = r.u32_le("width");
  const std::size_t k = r.u32_le("classes");
  GlobalModel m = build_model(arch, in, k, 0);
  const std::size_t count = r.u32_le("parameter count");
  if (count != m.layout.size()) throw FormatError("parameter count mismatch", r.offset());
  for (std::size_t i = 0; i < count; ++i) {
    const std::size_t rank = r.u32_le("rank");
    Shape s(rank);
    for (auto& d : s) d = r.u32_le("extent");
    if (s != m.layout[i].shape) throw FormatError("parameter shape mismatch", r.offset());
  }
  std::vector<std::vector<double>> values;
  for (const auto& spec : m.layout) {
    std::vector<double> v(numel(spec.shape));
    for (auto& x : v) x = r.f64_le("parameter values");
    values.push_back(std::move(v));
  }
  if (r.remaining() != 0) throw FormatError("trailing bytes after checkpoint", r.offset());
  return m.with_values(values);
}

}  // namespace grnn
