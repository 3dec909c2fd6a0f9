// Copyright 2026 The Gracile Authors
// SPDX-License-Identifier: Apache-2.0
//
// Incremental evaluation of a network under a handful of changed parameter
// values. Every intermediate activation and partial sum of the pristine
// network is cached per sample; a query recomputes only the partial sums and
// channels reachable from the changed values, reusing the shared kernels, so
// its result matches a full forward pass of the modified model bit for bit.
// A changed channel whose recomputed activation equals the cached one stops
// propagating.

#pragma once

#include <cstddef>
#include <cstdint>
#include <cstring>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "gracile/errors.hpp"
#include "gracile/forward.hpp"
#include "gracile/kernels.hpp"
#include "gracile/model_format.hpp"

namespace gracile {

// Replacement effective value for one parameter element.
struct Override {
  std::size_t tensor = 0;
  std::size_t element = 0;
  float value = 0.0f;
};

class IncrementalEvaluator {
 public:
  IncrementalEvaluator(const Network& net, const Dataset& data) : net_(net), data_(data) {
    net.check_dataset(data);
    const auto& plans = net.plans();
    std::size_t off = 0;
    for (const auto& p : plans) {
      pre_off_.push_back(off);
      off += p.out_size();
      post_off_.push_back(off);
      off += p.out_size();
      part_off_.push_back(off);
      off += p.partial_size();
    }
    stride_ = off;
    cache_.resize(stride_ * data.size());
    ranks_.resize(data.size());
    pristine_ = net.empty_result(data);
    Network::Workspace ws = net.make_workspace();
    for (std::size_t s = 0; s < data.size(); ++s) {
      float* base = cache_.data() + s * stride_;
      const float* in = data.sample(s);
      for (std::size_t l = 0; l < plans.size(); ++l) {
        const bool has_partials = plans[l].partial_size() > 0;
        net.run_layer(l, in, base + pre_off_[l], base + post_off_[l], has_partials ? base + part_off_[l] : nullptr,
                      ws);
        in = base + post_off_[l];
      }
      ranks_[s] = static_cast<std::uint16_t>(kernels::label_rank(in, net.num_classes(), data.labels[s]));
      Network::tally(pristine_, ranks_[s], data.labels[s]);
    }
  }

  IncrementalEvaluator(const IncrementalEvaluator&) = delete;
  IncrementalEvaluator& operator=(const IncrementalEvaluator&) = delete;

  const EvalResult& pristine() const noexcept { return pristine_; }
  const Network& network() const noexcept { return net_; }
  const Dataset& dataset() const noexcept { return data_; }
  std::size_t samples() const noexcept { return data_.size(); }

  // Per-worker mutable state.
  class Scratch {
    friend class IncrementalEvaluator;
    struct Edit {
      ParamRole role;
      std::size_t element;
      float value;
    };
    struct LayerState {
      std::vector<float> pre, post;
      std::vector<std::uint8_t> mark;
      std::vector<std::uint32_t> dirty;
      std::vector<float> padded;
      std::vector<std::uint8_t> pad_mark;
      std::vector<std::uint32_t> pad_list;
      std::vector<float> input;  // assembled fc input
      std::vector<std::uint8_t> block_mark;
      std::vector<std::uint32_t> blocks;
      std::vector<Edit> edits;
    };
    std::vector<LayerState> layers;
    std::vector<float> partials;
    std::vector<const float*> ptrs;
    std::vector<float> row;
    std::vector<float> kernel;
  };

  Scratch make_scratch() const {
    Scratch s;
    std::size_t max_partial = 0, max_c = 0, max_k = 0, max_blocks = 0;
    for (const auto& p : net_.plans()) {
      Scratch::LayerState st;
      st.pre.resize(p.out_size());
      st.post.resize(p.out_size());
      st.mark.assign(p.out_c, 0);
      if (p.kind == LayerKind::kConv2d) {
        if (p.pad) st.padded.resize(p.in_c * p.padded_h() * p.padded_w());
        st.pad_mark.assign(p.in_c, 0);
        max_partial = std::max(max_partial, p.in_c * p.out_hw());
        max_c = std::max(max_c, p.in_c);
        max_k = std::max(max_k, p.kernel * p.kernel);
      }
      if (p.kind == LayerKind::kFullyConnected) {
        st.input.resize(p.in_c);
        st.block_mark.assign(p.blocks, 0);
        max_blocks = std::max(max_blocks, p.blocks);
      }
      s.layers.push_back(std::move(st));
    }
    s.partials.resize(max_partial);
    s.ptrs.resize(max_c);
    s.row.resize(std::max(net_.num_classes(), max_blocks));
    s.kernel.resize(std::max<std::size_t>(max_k, kernels::kFcBlock));
    return s;
  }

  // Tallies of the network with `overrides` applied to its effective values.
  EvalResult evaluate(std::span<const Override> overrides, Scratch& s) const {
    const std::optional<std::size_t> last_edit = prepare(overrides, s);
    if (!last_edit) return pristine_;
    EvalResult r = net_.empty_result(data_);
    for (std::size_t i = 0; i < data_.size(); ++i) {
      const std::size_t rank = evaluate_sample(i, s, *last_edit, nullptr);
      Network::tally(r, rank, data_.labels[i]);
    }
    return r;
  }

  // Output scores of sample i under `overrides`, for exactness checks.
  std::vector<float> sample_scores(std::span<const Override> overrides, std::size_t i, Scratch& s) const {
    const std::size_t n = net_.num_classes();
    const float* cached = cache_.data() + i * stride_ + post_off_.back();
    std::vector<float> out(cached, cached + n);
    const std::optional<std::size_t> last_edit = prepare(overrides, s);
    if (last_edit) evaluate_sample(i, s, *last_edit, &out);
    return out;
  }

 private:
  // Groups overrides by consuming layer. Returns the last affected layer, or
  // nothing when no layer reads any overridden tensor.
  std::optional<std::size_t> prepare(std::span<const Override> overrides, Scratch& s) const {
    std::optional<std::size_t> last_edit;
    for (auto& st : s.layers) st.edits.clear();
    for (const Override& o : overrides) {
      if (o.tensor >= net_.tensor_count() || o.element >= net_.values(o.tensor).size()) {
        throw ConfigError("override targets tensor " + std::to_string(o.tensor) + " element " +
                          std::to_string(o.element) + " outside the model");
      }
      for (const auto& use : net_.uses(o.tensor)) {
        s.layers[use.layer].edits.push_back({use.role, o.element, o.value});
        last_edit = std::max(last_edit.value_or(0), use.layer);
      }
    }
    return last_edit;
  }

  // Rank of the true label; also overwrites `scores` (when given) with the
  // output row if it changed.
  std::size_t evaluate_sample(std::size_t i, Scratch& s, std::size_t last_edit, std::vector<float>* scores) const {
    const auto& plans = net_.plans();
    const float* cache = cache_.data() + i * stride_;
    const std::size_t n_layers = plans.size();
    std::size_t rank = ranks_[i];
    bool final_dirty = false;
    for (std::size_t l = 0; l < n_layers; ++l) {
      auto& st = s.layers[l];
      for (std::uint32_t c : st.dirty) st.mark[c] = 0;
      st.dirty.clear();
      const bool prev_dirty = l > 0 && !s.layers[l - 1].dirty.empty();
      if (!prev_dirty && st.edits.empty()) {
        if (l >= last_edit) break;
        continue;
      }
      const LayerPlan& p = plans[l];
      switch (p.kind) {
        case LayerKind::kConv2d: conv_layer(l, p, cache, i, s); break;
        case LayerKind::kFullyConnected: fc_layer(l, p, cache, i, s); break;
        default: channel_layer(l, p, cache, i, s); break;
      }
      activation_stage(l, p, cache, s);
      if (l + 1 == n_layers) final_dirty = !st.dirty.empty();
      if (st.dirty.empty() && l >= last_edit) break;
    }
    if (final_dirty) {
      const LayerPlan& p = plans.back();
      const auto& st = s.layers.back();
      const float* cached = cache + post_off_.back();
      for (std::size_t c = 0; c < p.out_size(); ++c) s.row[c] = st.mark[c] ? st.post[c] : cached[c];
      rank = kernels::label_rank(s.row.data(), net_.num_classes(), data_.labels[i]);
      if (scores) std::copy(s.row.begin(), s.row.begin() + p.out_size(), scores->begin());
    }
    // Leave every mark clear for the next sample.
    for (auto& st : s.layers) {
      for (std::uint32_t c : st.dirty) st.mark[c] = 0;
      st.dirty.clear();
    }
    return rank;
  }

  const float* input_channel(std::size_t l, std::size_t c, std::size_t hw, const float* cache, std::size_t i,
                             const Scratch& s) const {
    if (l == 0) return data_.sample(i) + c * hw;
    const auto& prev = s.layers[l - 1];
    if (prev.mark[c]) return prev.post.data() + c * hw;
    return cache + post_off_[l - 1] + c * hw;
  }

  float effective(std::size_t tensor, ParamRole role, std::size_t element, const Scratch::LayerState& st) const {
    float v = net_.values(tensor)[element];
    for (const auto& e : st.edits) {
      if (e.role == role && e.element == element) v = e.value;
    }
    return v;
  }

  static void mark(Scratch::LayerState& st, std::size_t c) {
    if (!st.mark[c]) {
      st.mark[c] = 1;
      st.dirty.push_back(static_cast<std::uint32_t>(c));
    }
  }

  void conv_layer(std::size_t l, const LayerPlan& p, const float* cache, std::size_t i, Scratch& s) const {
    auto& st = s.layers[l];
    const std::size_t kk = p.kernel * p.kernel, ohw = p.out_hw(), pw = p.padded_w(), ph = p.padded_h();
    const float* w = net_.values(p.weight).data();
    const float* part_cache = cache + part_off_[l];
    const bool has_prev = l > 0;
    const std::vector<std::uint32_t> empty;
    const std::vector<std::uint32_t>& dirty_in = has_prev ? s.layers[l - 1].dirty : empty;
    for (std::uint32_t c : st.pad_list) st.pad_mark[c] = 0;
    st.pad_list.clear();
    auto padded = [&](std::size_t c) -> const float* {
      const float* src = input_channel(l, c, p.in_hw(), cache, i, s);
      if (!p.pad) return src;
      float* dst = st.padded.data() + c * ph * pw;
      if (!st.pad_mark[c]) {
        kernels::pad_channel(src, p.in_h, p.in_w, p.pad, dst);
        st.pad_mark[c] = 1;
        st.pad_list.push_back(static_cast<std::uint32_t>(c));
      }
      return dst;
    };
    for (std::size_t o = 0; o < p.out_c; ++o) {
      bool weight_edit = false, bias_edit = false;
      for (const auto& e : st.edits) {
        if (e.role == ParamRole::kWeight && e.element / (p.in_c * kk) == o) weight_edit = true;
        if (e.role == ParamRole::kBias && e.element == o) bias_edit = true;
      }
      if (dirty_in.empty() && !weight_edit && !bias_edit) continue;
      for (std::size_t c = 0; c < p.in_c; ++c) s.ptrs[c] = part_cache + (o * p.in_c + c) * ohw;
      auto recompute = [&](std::size_t c) {
        const float* kernel = w + (o * p.in_c + c) * kk;
        if (weight_edit) {
          bool patched = false;
          for (const auto& e : st.edits) {
            if (e.role == ParamRole::kWeight && e.element / kk == o * p.in_c + c) {
              if (!patched) std::copy(kernel, kernel + kk, s.kernel.begin());
              s.kernel[e.element % kk] = e.value;
              patched = true;
            }
          }
          if (patched) kernel = s.kernel.data();
        }
        float* out = s.partials.data() + c * ohw;
        kernels::conv_partial(padded(c), p.pad ? pw : p.in_w, kernel, p.kernel, p.stride, p.out_h, p.out_w, out);
        s.ptrs[c] = out;
      };
      for (std::uint32_t c : dirty_in) recompute(c);
      if (weight_edit) {
        for (const auto& e : st.edits) {
          if (e.role != ParamRole::kWeight || e.element / (p.in_c * kk) != o) continue;
          const std::size_t c = (e.element / kk) % p.in_c;
          if (!(has_prev && s.layers[l - 1].mark[c])) recompute(c);
        }
      }
      const float bias = effective(p.bias, ParamRole::kBias, o, st);
      kernels::conv_combine(bias, s.ptrs.data(), p.in_c, ohw, st.pre.data() + o * ohw);
      mark(st, o);
    }
  }

  void fc_layer(std::size_t l, const LayerPlan& p, const float* cache, std::size_t i, Scratch& s) const {
    auto& st = s.layers[l];
    const float* w = net_.values(p.weight).data();
    const float* part_cache = cache + part_off_[l];
    const float* x;
    for (std::uint32_t b : st.blocks) st.block_mark[b] = 0;
    st.blocks.clear();
    const bool prev_dirty = l > 0 && !s.layers[l - 1].dirty.empty();
    if (prev_dirty) {
      const auto& prev = s.layers[l - 1];
      const float* cached_in = cache + post_off_[l - 1];
      std::copy(cached_in, cached_in + p.in_c, st.input.begin());
      for (std::uint32_t f : prev.dirty) {
        st.input[f] = prev.post[f];
        const std::size_t b = f / kernels::kFcBlock;
        if (!st.block_mark[b]) {
          st.block_mark[b] = 1;
          st.blocks.push_back(static_cast<std::uint32_t>(b));
        }
      }
      x = st.input.data();
    } else {
      x = l == 0 ? data_.sample(i) : cache + post_off_[l - 1];
    }
    float* row = s.row.data();
    for (std::size_t j = 0; j < p.out_c; ++j) {
      bool weight_edit = false, bias_edit = false;
      for (const auto& e : st.edits) {
        if (e.role == ParamRole::kWeight && e.element / p.in_c == j) weight_edit = true;
        if (e.role == ParamRole::kBias && e.element == j) bias_edit = true;
      }
      if (st.blocks.empty() && !weight_edit && !bias_edit) continue;
      std::copy(part_cache + j * p.blocks, part_cache + (j + 1) * p.blocks, row);
      const float* wrow = w + j * p.in_c;
      for (std::uint32_t b : st.blocks) row[b] = kernels::fc_partial(wrow, x, b, p.in_c);
      if (weight_edit) {
        for (const auto& e : st.edits) {
          if (e.role != ParamRole::kWeight || e.element / p.in_c != j) continue;
          const std::size_t b = (e.element % p.in_c) / kernels::kFcBlock;
          const std::size_t begin = b * kernels::kFcBlock, len = kernels::fc_block_len(b, p.in_c);
          std::copy(wrow + begin, wrow + begin + len, s.kernel.begin());
          for (const auto& e2 : st.edits) {
            if (e2.role == ParamRole::kWeight && e2.element / p.in_c == j &&
                (e2.element % p.in_c) / kernels::kFcBlock == b) {
              s.kernel[e2.element % p.in_c - begin] = e2.value;
            }
          }
          row[b] = kernels::fc_block_sum(s.kernel.data(), x + begin, len);
        }
      }
      const float bias = effective(p.bias, ParamRole::kBias, j, st);
      st.pre[j] = kernels::fc_combine(bias, row, p.blocks);
      mark(st, j);
    }
  }

  // maxpool, batchnorm, dropout and flatten: output channel c depends on
  // input channel c only (flatten maps channel c to a run of features).
  void channel_layer(std::size_t l, const LayerPlan& p, const float* cache, std::size_t i, Scratch& s) const {
    auto& st = s.layers[l];
    const std::vector<std::uint32_t> empty;
    const std::vector<std::uint32_t>& dirty_in = l > 0 ? s.layers[l - 1].dirty : empty;
    auto compute = [&](std::size_t c) {
      const float* in = input_channel(l, c, p.in_hw(), cache, i, s);
      switch (p.kind) {
        case LayerKind::kMaxPool2d:
          kernels::maxpool_channel(in, p.in_h, p.in_w, p.pool, p.stride, p.out_h, p.out_w,
                                   st.pre.data() + c * p.out_hw());
          mark(st, c);
          break;
        case LayerKind::kBatchNorm:
          kernels::batchnorm_channel(in, p.in_hw(), effective(p.weight, ParamRole::kWeight, c, st),
                                     effective(p.bias, ParamRole::kBias, c, st),
                                     effective(p.mean, ParamRole::kMean, c, st),
                                     effective(p.var, ParamRole::kVar, c, st), p.eps, st.pre.data() + c * p.out_hw());
          mark(st, c);
          break;
        case LayerKind::kDropout:
          std::copy(in, in + p.out_hw(), st.pre.data() + c * p.out_hw());
          mark(st, c);
          break;
        case LayerKind::kFlatten: {
          const std::size_t hw = p.in_hw();
          for (std::size_t k = 0; k < hw; ++k) {
            st.pre[c * hw + k] = in[k];
            mark(st, c * hw + k);
          }
          break;
        }
        default:
          break;
      }
    };
    for (std::uint32_t c : dirty_in) compute(c);
    if (p.kind == LayerKind::kBatchNorm) {
      for (const auto& e : st.edits) {
        if (e.role != ParamRole::kSlope && !st.mark[e.element]) compute(e.element);
      }
    }
  }

  // Applies activations to dirty channels, handles slope edits, and drops
  // channels whose activation came out bit-identical to the cache.
  void activation_stage(std::size_t l, const LayerPlan& p, const float* cache, Scratch& s) const {
    auto& st = s.layers[l];
    const float* cached_pre = cache + pre_off_[l];
    const float* cached_post = cache + post_off_[l];
    const std::size_t hw = p.out_hw();
    bool slope_edit = false;
    for (const auto& e : st.edits) {
      if (e.role == ParamRole::kSlope) slope_edit = true;
    }
    if (slope_edit) {
      const bool shared = net_.values(p.slope).size() == 1;
      for (const auto& e : st.edits) {
        if (e.role != ParamRole::kSlope) continue;
        const std::size_t lo = shared ? 0 : e.element, hi = shared ? p.out_c : e.element + 1;
        for (std::size_t c = lo; c < hi; ++c) {
          if (!st.mark[c]) {
            std::copy(cached_pre + c * hw, cached_pre + (c + 1) * hw, st.pre.data() + c * hw);
            mark(st, c);
          }
        }
      }
    }
    if (st.dirty.empty()) return;
    if (p.act == ActivationKind::kSoftmax) {
      for (std::size_t c = 0; c < p.out_size(); ++c) {
        if (!st.mark[c]) st.pre[c] = cached_pre[c];
      }
      kernels::softmax_row(st.pre.data(), p.out_size(), st.post.data());
      for (std::size_t c = 0; c < p.out_c; ++c) mark(st, c);
      return;
    }
    std::size_t keep = 0;
    for (std::size_t k = 0; k < st.dirty.size(); ++k) {
      const std::size_t c = st.dirty[k];
      float* post = st.post.data() + c * hw;
      std::copy(st.pre.data() + c * hw, st.pre.data() + (c + 1) * hw, post);
      float slope = 0.0f;
      if (p.act == ActivationKind::kPReLU) {
        const bool shared = net_.values(p.slope).size() == 1;
        slope = effective(p.slope, ParamRole::kSlope, shared ? 0 : c, st);
      }
      kernels::activate(p.act, slope, p.bound, post, hw);
      if (std::memcmp(post, cached_post + c * hw, hw * sizeof(float)) == 0) {
        st.mark[c] = 0;
      } else {
        st.dirty[keep++] = static_cast<std::uint32_t>(c);
      }
    }
    st.dirty.resize(keep);
  }

  const Network& net_;
  const Dataset& data_;
  std::vector<std::size_t> pre_off_, post_off_, part_off_;
  std::size_t stride_ = 0;
  std::vector<float> cache_;
  std::vector<std::uint16_t> ranks_;
  EvalResult pristine_;
};

}  // namespace gracile
