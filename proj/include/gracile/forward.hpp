// Copyright 2026 The Gracile Authors
// SPDX-License-Identifier: Apache-2.0
//
// Forward-only inference. A Network is compiled from a Model: layer shapes
// are resolved once and every parameter is decoded to float32. Samples are
// processed one at a time, so results do not depend on batch size.

#pragma once

#include <cstddef>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "gracile/errors.hpp"
#include "gracile/kernels.hpp"
#include "gracile/model.hpp"
#include "gracile/model_format.hpp"
#include "gracile/tensor.hpp"

namespace gracile {

inline constexpr std::size_t kNoTensor = std::numeric_limits<std::size_t>::max();

// How a parameter tensor is used by a layer.
enum class ParamRole : std::uint8_t { kWeight, kBias, kMean, kVar, kSlope };

struct LayerPlan {
  LayerKind kind = LayerKind::kFlatten;
  ActivationKind act = ActivationKind::kNone;
  float bound = 0.0f;
  std::string name;
  // Input and output viewed as channels x spatial; flat vectors have spatial 1.
  std::size_t in_c = 0, in_h = 1, in_w = 1;
  std::size_t out_c = 0, out_h = 1, out_w = 1;
  std::size_t kernel = 0, stride = 1, pad = 0, pool = 2;
  std::size_t blocks = 0;  // fc input blocks
  float eps = 0.0f;
  std::size_t weight = kNoTensor, bias = kNoTensor, mean = kNoTensor, var = kNoTensor;
  std::size_t slope = kNoTensor;

  std::size_t in_hw() const { return in_h * in_w; }
  std::size_t out_hw() const { return out_h * out_w; }
  std::size_t out_size() const { return out_c * out_hw(); }
  std::size_t in_size() const { return in_c * in_hw(); }
  std::size_t padded_h() const { return in_h + 2 * pad; }
  std::size_t padded_w() const { return in_w + 2 * pad; }
  // Floats of cached partial sums per sample (conv and fc only).
  std::size_t partial_size() const {
    if (kind == LayerKind::kConv2d) return out_c * in_c * out_hw();
    if (kind == LayerKind::kFullyConnected) return out_c * blocks;
    return 0;
  }
};

// Top-1/top-5 tallies over a labelled set.
struct EvalResult {
  std::size_t total = 0;
  std::size_t top1 = 0;
  std::size_t top5 = 0;
  std::vector<std::uint32_t> per_class_correct;
  std::vector<std::uint32_t> per_class_total;

  double accuracy() const { return total ? static_cast<double>(top1) / static_cast<double>(total) : 0.0; }
  double top5_accuracy() const {
    return total ? static_cast<double>(top5) / static_cast<double>(total) : 0.0;
  }
};

class Network {
 public:
  struct Use {
    std::size_t layer;
    ParamRole role;
  };

  explicit Network(const Model& model) : spec_(model.spec) {
    validate_model(model);
    const std::vector<Shape> shapes = infer_shapes(spec_);
    Shape in = spec_.input_shape;
    values_.resize(model.params.size());
    uses_.resize(model.params.size());
    for (std::size_t t = 0; t < model.params.size(); ++t) values_[t] = model.params[t].values();
    for (std::size_t l = 0; l < spec_.layers.size(); ++l) {
      const LayerDescriptor& d = spec_.layers[l];
      LayerPlan p;
      p.kind = d.kind;
      p.act = d.activation.kind;
      p.bound = static_cast<float>(d.activation.bound);
      p.name = d.name;
      set_dims(in, p.in_c, p.in_h, p.in_w);
      set_dims(shapes[l], p.out_c, p.out_h, p.out_w);
      p.kernel = d.kernel;
      p.stride = d.stride;
      p.pad = d.padding;
      p.pool = d.pool;
      p.eps = static_cast<float>(d.eps);
      auto bind = [&](const std::string& name, ParamRole role) {
        const std::size_t t = model.params.index_of(name);
        uses_[t].push_back({l, role});
        return t;
      };
      if (d.kind == LayerKind::kConv2d || d.kind == LayerKind::kFullyConnected ||
          d.kind == LayerKind::kBatchNorm) {
        p.weight = bind(d.weight, ParamRole::kWeight);
        p.bias = bind(d.bias, ParamRole::kBias);
      }
      if (d.kind == LayerKind::kBatchNorm) {
        p.mean = bind(d.running_mean, ParamRole::kMean);
        p.var = bind(d.running_var, ParamRole::kVar);
      }
      if (d.kind == LayerKind::kFullyConnected) p.blocks = kernels::fc_blocks(p.in_c);
      if (p.act == ActivationKind::kPReLU) p.slope = bind(d.activation.slope, ParamRole::kSlope);
      plans_.push_back(p);
      in = shapes[l];
    }
    input_size_ = element_count(spec_.input_shape);
  }

  const ModelSpec& spec() const noexcept { return spec_; }
  const std::vector<LayerPlan>& plans() const noexcept { return plans_; }
  const std::vector<float>& values(std::size_t tensor) const { return values_[tensor]; }
  const std::vector<Use>& uses(std::size_t tensor) const { return uses_[tensor]; }
  std::size_t input_size() const noexcept { return input_size_; }
  std::size_t tensor_count() const noexcept { return values_.size(); }
  std::size_t num_classes() const noexcept { return spec_.num_classes; }

  // Slope applied to channel c of layer plan p.
  float slope(const LayerPlan& p, std::size_t c) const {
    if (p.slope == kNoTensor) return 0.0f;
    const auto& s = values_[p.slope];
    return s.size() == 1 ? s[0] : s[c];
  }

  // Scratch memory for one in-flight sample.
  struct Workspace {
    std::vector<std::vector<float>> pre, post;
    std::vector<float> padded, partials;
    std::vector<const float*> partial_ptrs;
  };

  Workspace make_workspace() const {
    Workspace ws;
    std::size_t max_partial = 0, max_pad = 0, max_c = 0;
    for (const auto& p : plans_) {
      ws.pre.emplace_back(p.out_size());
      ws.post.emplace_back(p.out_size());
      if (p.kind == LayerKind::kConv2d) {
        max_partial = std::max(max_partial, p.in_c * p.out_hw());
        max_pad = std::max(max_pad, p.in_c * p.padded_h() * p.padded_w());
        max_c = std::max(max_c, p.in_c);
      }
    }
    ws.padded.resize(max_pad);
    ws.partials.resize(max_partial);
    ws.partial_ptrs.resize(max_c);
    return ws;
  }

  // Computes layer l in full from input `in`. When `partials` is non-null the
  // conv or fc partial sums are stored there in cache layout.
  void run_layer(std::size_t l, const float* in, float* pre, float* post, float* partials, Workspace& ws) const {
    const LayerPlan& p = plans_[l];
    switch (p.kind) {
      case LayerKind::kConv2d: {
        const float* w = values_[p.weight].data();
        const float* b = values_[p.bias].data();
        const std::size_t ph = p.padded_h(), pw = p.padded_w(), ohw = p.out_hw(), kk = p.kernel * p.kernel;
        const float* src = in;
        if (p.pad) {
          for (std::size_t c = 0; c < p.in_c; ++c) {
            kernels::pad_channel(in + c * p.in_hw(), p.in_h, p.in_w, p.pad, ws.padded.data() + c * ph * pw);
          }
          src = ws.padded.data();
        }
        for (std::size_t o = 0; o < p.out_c; ++o) {
          float* part = partials ? partials + o * p.in_c * ohw : ws.partials.data();
          for (std::size_t c = 0; c < p.in_c; ++c) {
            kernels::conv_partial(src + c * ph * pw, pw, w + (o * p.in_c + c) * kk, p.kernel, p.stride, p.out_h,
                                  p.out_w, part + c * ohw);
            ws.partial_ptrs[c] = part + c * ohw;
          }
          kernels::conv_combine(b[o], ws.partial_ptrs.data(), p.in_c, ohw, pre + o * ohw);
        }
        break;
      }
      case LayerKind::kFullyConnected: {
        const float* w = values_[p.weight].data();
        const float* b = values_[p.bias].data();
        float local[64];
        std::vector<float> big;
        float* part = local;
        if (!partials && p.blocks > 64) {
          big.resize(p.blocks);
          part = big.data();
        }
        for (std::size_t j = 0; j < p.out_c; ++j) {
          float* row = partials ? partials + j * p.blocks : part;
          for (std::size_t blk = 0; blk < p.blocks; ++blk) {
            row[blk] = kernels::fc_partial(w + j * p.in_c, in, blk, p.in_c);
          }
          pre[j] = kernels::fc_combine(b[j], row, p.blocks);
        }
        break;
      }
      case LayerKind::kMaxPool2d:
        for (std::size_t c = 0; c < p.out_c; ++c) {
          kernels::maxpool_channel(in + c * p.in_hw(), p.in_h, p.in_w, p.pool, p.stride, p.out_h, p.out_w,
                                   pre + c * p.out_hw());
        }
        break;
      case LayerKind::kBatchNorm:
        for (std::size_t c = 0; c < p.out_c; ++c) {
          kernels::batchnorm_channel(in + c * p.in_hw(), p.in_hw(), values_[p.weight][c], values_[p.bias][c],
                                     values_[p.mean][c], values_[p.var][c], p.eps, pre + c * p.out_hw());
        }
        break;
      case LayerKind::kDropout:
      case LayerKind::kFlatten:
        std::copy(in, in + p.out_size(), pre);
        break;
    }
    finish_layer(p, pre, post);
  }

  // Applies the activation of plan p to a full pre-activation vector.
  void finish_layer(const LayerPlan& p, const float* pre, float* post) const {
    if (p.act == ActivationKind::kSoftmax) {
      kernels::softmax_row(pre, p.out_size(), post);
      return;
    }
    std::copy(pre, pre + p.out_size(), post);
    for (std::size_t c = 0; c < p.out_c; ++c) {
      kernels::activate(p.act, slope(p, c), p.bound, post + c * p.out_hw(), p.out_hw());
    }
  }

  // Runs one sample; the scores end up in ws.post.back().
  const std::vector<float>& forward_sample(const float* x, Workspace& ws) const {
    const float* in = x;
    for (std::size_t l = 0; l < plans_.size(); ++l) {
      run_layer(l, in, ws.pre[l].data(), ws.post[l].data(), nullptr, ws);
      in = ws.post[l].data();
    }
    return ws.post.back();
  }

  // Batch forward: input [N, ...input_shape] to scores [N, num_classes].
  Tensor forward(const Tensor& batch) const { return activations(batch, plans_.size() - 1); }

  // Post-activation output of layer `layer` for every sample of the batch.
  Tensor activations(const Tensor& batch, std::size_t layer) const {
    if (layer >= plans_.size()) throw ConfigError("layer index " + std::to_string(layer) + " out of range");
    Shape expect = spec_.input_shape;
    if (batch.rank() != expect.size() + 1 || !std::equal(expect.begin(), expect.end(), batch.shape().begin() + 1)) {
      throw ShapeError("model '" + spec_.name + "' expects input [N]" + shape_to_string(expect) + ", got " +
                       shape_to_string(batch.shape()));
    }
    const std::size_t n = batch.dim(0);
    const std::size_t out = plans_[layer].out_size();
    Shape shape{n};
    const std::vector<Shape> shapes = infer_shapes(spec_);
    shape.insert(shape.end(), shapes[layer].begin(), shapes[layer].end());
    Tensor result(shape);
    Workspace ws = make_workspace();
    for (std::size_t i = 0; i < n; ++i) {
      const float* in = batch.data() + i * input_size_;
      for (std::size_t l = 0; l <= layer; ++l) {
        run_layer(l, in, ws.pre[l].data(), ws.post[l].data(), nullptr, ws);
        in = ws.post[l].data();
      }
      std::copy(in, in + out, result.data() + i * out);
    }
    result.set_corrupted(!result.all_finite());
    return result;
  }

  // Top-1, top-5 and per-class correctness over a dataset.
  EvalResult evaluate(const Dataset& data) const {
    check_dataset(data);
    EvalResult r = empty_result(data);
    Workspace ws = make_workspace();
    for (std::size_t i = 0; i < data.size(); ++i) {
      const auto& scores = forward_sample(data.sample(i), ws);
      tally(r, kernels::label_rank(scores.data(), spec_.num_classes, data.labels[i]), data.labels[i]);
    }
    return r;
  }

  void check_dataset(const Dataset& data) const {
    if (data.sample_shape != spec_.input_shape) {
      throw ShapeError("dataset samples have shape " + shape_to_string(data.sample_shape) + " but model '" +
                       spec_.name + "' expects " + shape_to_string(spec_.input_shape));
    }
    if (data.num_classes != spec_.num_classes) {
      throw ShapeError("dataset has " + std::to_string(data.num_classes) + " classes but model '" + spec_.name +
                       "' has " + std::to_string(spec_.num_classes));
    }
  }

  EvalResult empty_result(const Dataset& data) const {
    EvalResult r;
    r.per_class_correct.assign(spec_.num_classes, 0);
    r.per_class_total.assign(spec_.num_classes, 0);
    for (std::uint16_t label : data.labels) r.per_class_total[label]++;
    r.total = data.size();
    return r;
  }

  static void tally(EvalResult& r, std::size_t rank, std::size_t label) {
    if (rank < 1) {
      r.top1++;
      r.per_class_correct[label]++;
    }
    if (rank < 5) r.top5++;
  }

 private:
  static void set_dims(const Shape& s, std::size_t& c, std::size_t& h, std::size_t& w) {
    c = s.empty() ? 1 : s[0];
    h = s.size() > 1 ? s[1] : 1;
    w = s.size() > 2 ? s[2] : 1;
    for (std::size_t i = 3; i < s.size(); ++i) w *= s[i];
  }

  ModelSpec spec_;
  std::vector<LayerPlan> plans_;
  std::vector<std::vector<float>> values_;
  std::vector<std::vector<Use>> uses_;
  std::size_t input_size_ = 0;
};

// Top-1 accuracy of `model` on `data` (top-k with k > 1 via accuracy_topk).
inline double accuracy(const Model& model, const Dataset& data) { return Network(model).evaluate(data).accuracy(); }

inline double accuracy_topk(const Model& model, const Dataset& data, std::size_t k) {
  if (k == 0) throw ConfigError("top-k needs k >= 1");
  const Network net(model);
  net.check_dataset(data);
  Network::Workspace ws = net.make_workspace();
  std::size_t hits = 0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    const auto& scores = net.forward_sample(data.sample(i), ws);
    if (kernels::label_rank(scores.data(), net.num_classes(), data.labels[i]) < k) ++hits;
  }
  return data.size() ? static_cast<double>(hits) / static_cast<double>(data.size()) : 0.0;
}

}  // namespace gracile
