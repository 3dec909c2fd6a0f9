// Copyright 2026 The Gracile Authors
// SPDX-License-Identifier: Apache-2.0
//
// Model transformations that shrink the damage a single bit flip can do:
// bounded activations, 8-bit affine quantization and binarization. Every
// function returns a new model and leaves its input untouched.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "gracile/errors.hpp"
#include "gracile/forward.hpp"
#include "gracile/model.hpp"
#include "gracile/model_format.hpp"

namespace gracile {

inline bool is_relu_family(ActivationKind k) {
  return k == ActivationKind::kReLU || k == ActivationKind::kReLU6 || k == ActivationKind::kReLUClamp;
}

// Replaces every ReLU-family activation with `target` (ReLU, ReLU6 or
// ReLUClamp). For ReLUClamp, `bounds` holds one positive bound per replaced
// activation in layer order. PReLU layers are rejected; the terminal softmax
// is left alone.
inline Model substitute_activation(const Model& model, ActivationKind target, const std::vector<double>& bounds = {}) {
  if (!is_relu_family(target)) {
    throw ConfigError(std::string("cannot substitute with activation '") + to_string(target) + "'");
  }
  Model out = model;
  std::size_t replaced = 0;
  for (auto& layer : out.spec.layers) {
    const ActivationKind k = layer.activation.kind;
    if (k == ActivationKind::kPReLU) {
      throw ConfigError("layer '" + layer.name + "' uses PReLU, which has no bounded substitute");
    }
    if (!is_relu_family(k)) continue;
    layer.activation = Activation{target, "", 0.0};
    if (target == ActivationKind::kReLUClamp) {
      if (replaced >= bounds.size()) throw ConfigError("not enough ReLUClamp bounds for the model");
      if (!(bounds[replaced] > 0.0)) throw ConfigError("ReLUClamp bounds must be positive");
      layer.activation.bound = bounds[replaced];
    }
    ++replaced;
  }
  if (target == ActivationKind::kReLUClamp && replaced != bounds.size()) {
    throw ConfigError("got " + std::to_string(bounds.size()) + " ReLUClamp bounds for " + std::to_string(replaced) +
                      " activations");
  }
  validate_model(out);
  return out;
}

// Smallest bound used when a layer never activates on the calibration set.
inline constexpr float kMinClampBound = std::numeric_limits<float>::min();

// Per-layer maximum of each ReLU-family activation over the calibration set,
// stored as float32 values so the clamp leaves every calibration activation
// unchanged.
inline std::vector<double> clamp_bounds(const Model& model, const Dataset& calibration) {
  if (calibration.size() == 0) throw ConfigError("calibration set is empty");
  const Network net(model);
  net.check_dataset(calibration);
  std::vector<float> maxima(net.plans().size(), 0.0f);
  Network::Workspace ws = net.make_workspace();
  for (std::size_t i = 0; i < calibration.size(); ++i) {
    net.forward_sample(calibration.sample(i), ws);
    for (std::size_t l = 0; l < net.plans().size(); ++l) {
      if (!is_relu_family(net.plans()[l].act)) continue;
      for (float v : ws.post[l]) maxima[l] = std::max(maxima[l], v);
    }
  }
  std::vector<double> bounds;
  for (std::size_t l = 0; l < net.plans().size(); ++l) {
    if (net.plans()[l].act == ActivationKind::kPReLU) {
      throw ConfigError("layer '" + net.plans()[l].name + "' uses PReLU, which has no bounded substitute");
    }
    if (is_relu_family(net.plans()[l].act)) bounds.push_back(std::max(maxima[l], kMinClampBound));
  }
  return bounds;
}

// ReLUClamp model whose bounds are the per-layer calibration maxima.
inline Model calibrate_clamp(const Model& model, const Dataset& calibration) {
  return substitute_activation(model, ActivationKind::kReLUClamp, clamp_bounds(model, calibration));
}

// Affine 8-bit encoding of one tensor. The range always contains 0, so zero
// stays exactly representable.
inline Parameter quantize_tensor(const Parameter& p) {
  if (p.dtype != DType::kF32) throw ConfigError("parameter '" + p.name + "' is not float32");
  float lo = 0.0f, hi = 0.0f;
  for (float v : p.f32) {
    if (!std::isfinite(v)) throw ConfigError("parameter '" + p.name + "' holds a non-finite value");
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  Parameter q;
  q.name = p.name;
  q.shape = p.shape;
  q.dtype = DType::kQuant8;
  if (hi == lo) {
    q.scale = 1.0f;
    q.zero_point = 0;
  } else {
    q.scale = (hi - lo) / 255.0f;
    q.zero_point = static_cast<std::uint8_t>(std::clamp(std::lround(-lo / q.scale), 0L, 255L));
  }
  q.q8.resize(p.f32.size());
  for (std::size_t i = 0; i < p.f32.size(); ++i) {
    const long v = std::lround(p.f32[i] / q.scale) + q.zero_point;
    q.q8[i] = static_cast<std::uint8_t>(std::clamp(v, 0L, 255L));
  }
  return q;
}

// Quantizes every float32 parameter tensor to 8-bit affine form.
inline Model quantize8(const Model& model) {
  Model out;
  out.spec = model.spec;
  for (const Parameter& p : model.params) out.params.add(p.dtype == DType::kF32 ? quantize_tensor(p) : p);
  validate_model(out);
  return out;
}

// sign(w) * mean(|w|), with sign(0) = +1.
inline Parameter binarize_tensor(const Parameter& p) {
  if (p.dtype != DType::kF32) throw ConfigError("parameter '" + p.name + "' is not float32");
  double sum = 0.0;
  for (float v : p.f32) sum += std::fabs(static_cast<double>(v));
  Parameter b;
  b.name = p.name;
  b.shape = p.shape;
  b.dtype = DType::kBinary;
  b.scale = p.f32.empty() ? 1.0f : static_cast<float>(sum / static_cast<double>(p.f32.size()));
  b.bin.resize(p.f32.size());
  for (std::size_t i = 0; i < p.f32.size(); ++i) b.bin[i] = p.f32[i] >= 0.0f ? 1 : -1;
  return b;
}

// Binarizes the weights and biases of every conv and fc layer except the
// first layer, which must be a convolution and stays float32.
inline Model binarize(const Model& model) {
  if (model.spec.layers.empty() || model.spec.layers.front().kind != LayerKind::kConv2d) {
    throw ConfigError("binarize expects the first layer to be a convolution");
  }
  std::vector<std::string> targets;
  for (std::size_t l = 1; l < model.spec.layers.size(); ++l) {
    const LayerDescriptor& d = model.spec.layers[l];
    if (d.kind == LayerKind::kConv2d || d.kind == LayerKind::kFullyConnected) {
      targets.push_back(d.weight);
      targets.push_back(d.bias);
    }
  }
  Model out;
  out.spec = model.spec;
  for (const Parameter& p : model.params) {
    const bool hit = std::find(targets.begin(), targets.end(), p.name) != targets.end();
    out.params.add(hit ? binarize_tensor(p) : p);
  }
  validate_model(out);
  return out;
}

}  // namespace gracile
