// Copyright 2026 The Gracile Authors
// SPDX-License-Identifier: Apache-2.0
//
// In-memory model description: the layer graph (ModelSpec) and the named
// parameter tensors (ParameterStore). Parameters keep their stored encoding
// (float32, 8-bit affine quantized, or binarized) so that bit flips act on the
// bytes a deployed model would actually hold.

#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstring>
#include <optional>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "gracile/errors.hpp"
#include "gracile/tensor.hpp"

namespace gracile {

enum class LayerKind { kConv2d, kFullyConnected, kMaxPool2d, kBatchNorm, kDropout, kFlatten };

enum class ActivationKind { kNone, kReLU, kPReLU, kReLU6, kReLUClamp, kTanh, kSoftmax };

inline const char* to_string(LayerKind kind) {
  switch (kind) {
    case LayerKind::kConv2d: return "conv2d";
    case LayerKind::kFullyConnected: return "fc";
    case LayerKind::kMaxPool2d: return "maxpool2d";
    case LayerKind::kBatchNorm: return "batchnorm";
    case LayerKind::kDropout: return "dropout";
    case LayerKind::kFlatten: return "flatten";
  }
  return "unknown";
}

inline const char* to_string(ActivationKind kind) {
  switch (kind) {
    case ActivationKind::kNone: return "none";
    case ActivationKind::kReLU: return "relu";
    case ActivationKind::kPReLU: return "prelu";
    case ActivationKind::kReLU6: return "relu6";
    case ActivationKind::kReLUClamp: return "relu_clamp";
    case ActivationKind::kTanh: return "tanh";
    case ActivationKind::kSoftmax: return "softmax";
  }
  return "unknown";
}

struct Activation {
  ActivationKind kind = ActivationKind::kNone;
  std::string slope;   // parameter name holding the PReLU slope(s)
  double bound = 0.0;  // ReLUClamp upper bound A_l

  bool operator==(const Activation&) const = default;
};

struct LayerDescriptor {
  LayerKind kind = LayerKind::kFlatten;
  std::string name;
  Activation activation;
  // conv2d
  std::size_t in_channels = 0;
  std::size_t out_channels = 0;
  std::size_t kernel = 0;
  std::size_t padding = 0;
  // conv2d and maxpool2d
  std::size_t stride = 1;
  // maxpool2d
  std::size_t pool = 2;
  // fc
  std::size_t in_features = 0;
  std::size_t out_features = 0;
  // batchnorm
  std::size_t channels = 0;
  double eps = 1e-5;
  // dropout (identity at inference)
  double dropout = 0.0;
  // parameter names
  std::string weight;
  std::string bias;
  std::string running_mean;
  std::string running_var;

  bool operator==(const LayerDescriptor&) const = default;

  // Names of every parameter tensor this layer reads, in a fixed order.
  std::vector<std::string> parameter_names() const {
    std::vector<std::string> names;
    switch (kind) {
      case LayerKind::kConv2d:
      case LayerKind::kFullyConnected:
        names = {weight, bias};
        break;
      case LayerKind::kBatchNorm:
        names = {weight, bias, running_mean, running_var};
        break;
      default:
        break;
    }
    if (activation.kind == ActivationKind::kPReLU) names.push_back(activation.slope);
    return names;
  }
};

struct ModelSpec {
  std::string name;
  Shape input_shape;
  std::size_t num_classes = 0;
  std::vector<LayerDescriptor> layers;

  bool operator==(const ModelSpec&) const = default;
};

// Output shape of every layer, given the model input shape. Feature maps are
// [C, H, W]; flattened activations are [N]. Throws ConfigError when the layer
// chain is inconsistent.
inline std::vector<Shape> infer_shapes(const ModelSpec& spec) {
  std::vector<Shape> shapes;
  Shape current = spec.input_shape;
  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    const LayerDescriptor& layer = spec.layers[i];
    auto fail = [&](const std::string& why) {
      throw ConfigError("layer '" + layer.name + "' (" + to_string(layer.kind) + "): " + why +
                        "; input shape " + shape_to_string(current));
    };
    switch (layer.kind) {
      case LayerKind::kConv2d: {
        if (current.size() != 3) fail("expects a [C,H,W] input");
        if (current[0] != layer.in_channels) fail("in_channels mismatch");
        if (layer.kernel == 0 || layer.stride == 0) fail("kernel and stride must be positive");
        const std::size_t h = current[1] + 2 * layer.padding;
        const std::size_t w = current[2] + 2 * layer.padding;
        if (h < layer.kernel || w < layer.kernel) fail("kernel larger than padded input");
        current = {layer.out_channels, (h - layer.kernel) / layer.stride + 1,
                   (w - layer.kernel) / layer.stride + 1};
        break;
      }
      case LayerKind::kMaxPool2d: {
        if (current.size() != 3) fail("expects a [C,H,W] input");
        if (layer.pool == 0 || layer.stride == 0) fail("pool and stride must be positive");
        if (current[1] < layer.pool || current[2] < layer.pool) fail("pool window larger than input");
        current = {current[0], (current[1] - layer.pool) / layer.stride + 1,
                   (current[2] - layer.pool) / layer.stride + 1};
        break;
      }
      case LayerKind::kBatchNorm:
        if (current.empty() || current[0] != layer.channels) fail("channels mismatch");
        break;
      case LayerKind::kDropout:
        break;
      case LayerKind::kFlatten:
        current = {element_count(current)};
        break;
      case LayerKind::kFullyConnected:
        if (current.size() != 1) fail("expects a flattened input");
        if (current[0] != layer.in_features) fail("in_features mismatch");
        current = {layer.out_features};
        break;
    }
    if (layer.activation.kind == ActivationKind::kSoftmax && i + 1 != spec.layers.size()) {
      fail("softmax is only allowed on the final layer");
    }
    if (layer.activation.kind == ActivationKind::kReLUClamp && !(layer.activation.bound > 0.0)) {
      fail("relu_clamp bound must be positive");
    }
    shapes.push_back(current);
  }
  if (shapes.empty()) throw ConfigError("model '" + spec.name + "' has no layers");
  if (shapes.back() != Shape{spec.num_classes}) {
    throw ConfigError("model '" + spec.name + "' ends in shape " + shape_to_string(shapes.back()) +
                      " but declares " + std::to_string(spec.num_classes) + " classes");
  }
  return shapes;
}

enum class DType : std::uint8_t { kF32 = 0, kQuant8 = 1, kBinary = 2 };

inline const char* to_string(DType dtype) {
  switch (dtype) {
    case DType::kF32: return "f32";
    case DType::kQuant8: return "u8_affine";
    case DType::kBinary: return "binary";
  }
  return "unknown";
}

// Bytes one element occupies in memory.
inline std::size_t element_bytes(DType dtype) { return dtype == DType::kF32 ? 4 : 1; }

// Bits of one element that the flip engine addresses.
inline std::size_t element_bits(DType dtype) {
  switch (dtype) {
    case DType::kF32: return 32;
    case DType::kQuant8: return 8;
    case DType::kBinary: return 1;
  }
  return 0;
}

// A named parameter tensor in its stored encoding.
//   f32:    value = f32[i]
//   quant8: value = scale * (q8[i] - zero_point)
//   binary: value = scale * bin[i], bin[i] in {-1, +1}
struct Parameter {
  std::string name;
  DType dtype = DType::kF32;
  Shape shape;
  std::vector<float> f32;
  std::vector<std::uint8_t> q8;
  std::vector<std::int8_t> bin;
  float scale = 1.0f;
  std::uint8_t zero_point = 0;

  static Parameter from_floats(std::string name, Shape shape, std::vector<float> values) {
    Parameter p;
    p.name = std::move(name);
    p.shape = std::move(shape);
    p.f32 = std::move(values);
    if (p.f32.size() != element_count(p.shape)) {
      throw ShapeError("parameter '" + p.name + "' has " + std::to_string(p.f32.size()) +
                       " values for shape " + shape_to_string(p.shape));
    }
    return p;
  }

  std::size_t size() const noexcept {
    switch (dtype) {
      case DType::kF32: return f32.size();
      case DType::kQuant8: return q8.size();
      case DType::kBinary: return bin.size();
    }
    return 0;
  }

  std::size_t byte_size() const noexcept { return size() * element_bytes(dtype); }

  // Value the forward pass uses for element i.
  float value(std::size_t i) const {
    switch (dtype) {
      case DType::kF32: return f32[i];
      case DType::kQuant8:
        return scale * static_cast<float>(static_cast<int>(q8[i]) - static_cast<int>(zero_point));
      case DType::kBinary: return scale * static_cast<float>(bin[i]);
    }
    return 0.0f;
  }

  std::vector<float> values() const {
    std::vector<float> out(size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = value(i);
    return out;
  }

  bool operator==(const Parameter& other) const {
    if (name != other.name || dtype != other.dtype || shape != other.shape) return false;
    switch (dtype) {
      case DType::kF32:
        return f32.size() == other.f32.size() &&
               std::memcmp(f32.data(), other.f32.data(), f32.size() * sizeof(float)) == 0;
      case DType::kQuant8:
        return q8 == other.q8 && std::memcmp(&scale, &other.scale, sizeof(float)) == 0 &&
               zero_point == other.zero_point;
      case DType::kBinary:
        return bin == other.bin && std::memcmp(&scale, &other.scale, sizeof(float)) == 0;
    }
    return false;
  }
};

// Identifies one element of one parameter tensor by store index.
struct ParameterRef {
  std::size_t tensor = 0;
  std::size_t element = 0;

  bool operator==(const ParameterRef&) const = default;
  auto operator<=>(const ParameterRef&) const = default;
};

// Ordered collection of parameters with name lookup. Equality is bitwise
// over the stored encoding.
class ParameterStore {
 public:
  std::size_t add(Parameter parameter) {
    if (index_.count(parameter.name)) {
      throw FormatError(FormatErrorKind::kDuplicateName,
                        "duplicate parameter name '" + parameter.name + "'");
    }
    index_.emplace(parameter.name, params_.size());
    params_.push_back(std::move(parameter));
    return params_.size() - 1;
  }

  std::size_t size() const noexcept { return params_.size(); }
  Parameter& operator[](std::size_t i) { return params_[i]; }
  const Parameter& operator[](std::size_t i) const { return params_[i]; }
  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }

  std::optional<std::size_t> find(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) return std::nullopt;
    return it->second;
  }

  std::size_t index_of(const std::string& name) const {
    auto idx = find(name);
    if (!idx) throw ConfigError("no parameter named '" + name + "'");
    return *idx;
  }

  const Parameter& at(const std::string& name) const { return params_[index_of(name)]; }
  Parameter& at(const std::string& name) { return params_[index_of(name)]; }

  std::size_t total_elements() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += p.size();
    return n;
  }

  std::size_t total_bytes() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += p.byte_size();
    return n;
  }

  bool operator==(const ParameterStore& other) const { return params_ == other.params_; }

 private:
  std::vector<Parameter> params_;
  std::unordered_map<std::string, std::size_t> index_;
};

struct Model {
  ModelSpec spec;
  ParameterStore params;
};

// Expected shape of every parameter a layer reads. PReLU slopes may hold a
// single shared value or one value per channel.
inline void validate_model(const Model& model) {
  const std::vector<Shape> outputs = infer_shapes(model.spec);
  auto require = [&](const LayerDescriptor& layer, const std::string& name,
                     const std::vector<Shape>& allowed) {
    auto idx = model.params.find(name);
    if (!idx) {
      throw FormatError(FormatErrorKind::kMissingParameter,
                        "layer '" + layer.name + "' needs parameter '" + name + "'");
    }
    const Shape& got = model.params[*idx].shape;
    for (const Shape& s : allowed) {
      if (got == s) return;
    }
    throw FormatError(FormatErrorKind::kShapeMismatch,
                      "parameter '" + name + "' of layer '" + layer.name + "' has shape " +
                          shape_to_string(got) + ", expected " + shape_to_string(allowed.front()));
  };
  for (std::size_t i = 0; i < model.spec.layers.size(); ++i) {
    const LayerDescriptor& layer = model.spec.layers[i];
    const Shape& out = outputs[i];
    switch (layer.kind) {
      case LayerKind::kConv2d:
        require(layer, layer.weight,
                {{layer.out_channels, layer.in_channels, layer.kernel, layer.kernel}});
        require(layer, layer.bias, {{layer.out_channels}});
        break;
      case LayerKind::kFullyConnected:
        require(layer, layer.weight, {{layer.out_features, layer.in_features}});
        require(layer, layer.bias, {{layer.out_features}});
        break;
      case LayerKind::kBatchNorm:
        for (const std::string* n : {&layer.weight, &layer.bias, &layer.running_mean, &layer.running_var}) {
          require(layer, *n, {{layer.channels}});
        }
        break;
      default:
        break;
    }
    if (layer.activation.kind == ActivationKind::kPReLU) {
      require(layer, layer.activation.slope, {{1}, {out[0]}});
    }
  }
}

}  // namespace gracile
