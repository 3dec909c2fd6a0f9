// Copyright 2026 The Gracile Authors
// SPDX-License-Identifier: Apache-2.0
//
// Readers and writers for the NNXF model container and the NNXD dataset
// container. Byte layouts are documented in docs/format.md. Every integer
// and float is little-endian.

#pragma once

#include <algorithm>
#include <bit>
#include <cstddef>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "gracile/errors.hpp"
#include "gracile/model.hpp"
#include "gracile/rng.hpp"
#include "gracile/tensor.hpp"

namespace gracile {

static_assert(std::endian::native == std::endian::little, "gracile assumes a little-endian host");

inline constexpr std::uint32_t kFormatVersion = 1;

// Labelled samples with a common per-sample shape, stored contiguously.
struct Dataset {
  Shape sample_shape;
  std::size_t num_classes = 0;
  std::vector<float> data;
  std::vector<std::uint16_t> labels;

  std::size_t size() const noexcept { return labels.size(); }
  std::size_t sample_size() const { return element_count(sample_shape); }
  const float* sample(std::size_t i) const { return data.data() + i * sample_size(); }

  Dataset subset(const std::vector<std::size_t>& indices) const {
    Dataset out;
    out.sample_shape = sample_shape;
    out.num_classes = num_classes;
    const std::size_t n = sample_size();
    out.data.reserve(indices.size() * n);
    for (std::size_t i : indices) {
      out.data.insert(out.data.end(), sample(i), sample(i) + n);
      out.labels.push_back(labels[i]);
    }
    return out;
  }

  Tensor as_batch() const {
    Shape shape{size()};
    shape.insert(shape.end(), sample_shape.begin(), sample_shape.end());
    return Tensor(shape, data);
  }
};

namespace detail {

inline std::vector<std::uint8_t> read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError(FormatErrorKind::kIo, "cannot open '" + path + "'");
  return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(in), {});
}

inline void write_file(const std::string& path, const std::vector<std::uint8_t>& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError(FormatErrorKind::kIo, "cannot write '" + path + "'");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw FormatError(FormatErrorKind::kIo, "short write to '" + path + "'");
}

class ByteReader {
 public:
  ByteReader(const std::vector<std::uint8_t>& bytes, std::string what)
      : bytes_(bytes), what_(std::move(what)) {}

  template <typename T>
  T read() {
    T value;
    need(sizeof(T), "field");
    std::memcpy(&value, bytes_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return value;
  }

  void read_bytes(void* dst, std::size_t n, const char* field) {
    need(n, field);
    if (n) std::memcpy(dst, bytes_.data() + pos_, n);
    pos_ += n;
  }

  std::string read_string(std::size_t n, const char* field) {
    need(n, field);
    std::string s(reinterpret_cast<const char*>(bytes_.data() + pos_), n);
    pos_ += n;
    return s;
  }

  std::size_t remaining() const noexcept { return bytes_.size() - pos_; }
  std::size_t position() const noexcept { return pos_; }

  void expect_end() const {
    if (pos_ != bytes_.size()) {
      throw FormatError(FormatErrorKind::kTrailingBytes,
                        what_ + ": " + std::to_string(bytes_.size() - pos_) +
                            " unexpected bytes after offset " + std::to_string(pos_));
    }
  }

 private:
  void need(std::size_t n, const char* field) const {
    if (n > bytes_.size() - pos_) {
      throw FormatError(FormatErrorKind::kTruncated,
                        what_ + ": " + field + " at offset " + std::to_string(pos_) + " needs " +
                            std::to_string(n) + " bytes, " + std::to_string(bytes_.size() - pos_) +
                            " left");
    }
  }

  const std::vector<std::uint8_t>& bytes_;
  std::string what_;
  std::size_t pos_ = 0;
};

class ByteWriter {
 public:
  template <typename T>
  void write(T value) {
    const auto* p = reinterpret_cast<const std::uint8_t*>(&value);
    bytes.insert(bytes.end(), p, p + sizeof(T));
  }
  void write_bytes(const void* src, std::size_t n) {
    const auto* p = static_cast<const std::uint8_t*>(src);
    bytes.insert(bytes.end(), p, p + n);
  }
  std::vector<std::uint8_t> bytes;
};

inline void check_magic(ByteReader& r, const char* magic, const std::string& what) {
  char got[4];
  r.read_bytes(got, 4, "magic");
  if (std::memcmp(got, magic, 4) != 0) {
    throw FormatError(FormatErrorKind::kBadMagic, what + ": expected magic '" + magic + "'");
  }
  const auto version = r.read<std::uint32_t>();
  if (version != kFormatVersion) {
    throw FormatError(FormatErrorKind::kUnsupportedVersion,
                      what + ": version " + std::to_string(version) + " is not supported");
  }
}

using Json = nlohmann::json;

inline void check_keys(const Json& obj, const std::set<std::string>& allowed, const std::string& where) {
  if (!obj.is_object()) {
    throw FormatError(FormatErrorKind::kBadArchitecture, where + " must be a JSON object");
  }
  for (auto it = obj.begin(); it != obj.end(); ++it) {
    if (!allowed.count(it.key())) {
      throw FormatError(FormatErrorKind::kBadArchitecture, where + ": unknown key '" + it.key() + "'");
    }
  }
  for (const auto& key : allowed) {
    if (!obj.contains(key)) {
      throw FormatError(FormatErrorKind::kBadArchitecture, where + ": missing key '" + key + "'");
    }
  }
}

template <typename T>
T get_field(const Json& obj, const char* key, const std::string& where) {
  try {
    return obj.at(key).get<T>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(FormatErrorKind::kBadArchitecture, where + ": field '" + key + "': " + e.what());
  }
}

inline Activation activation_from_json(const Json& j, const std::string& where) {
  if (!j.is_object() || !j.contains("kind")) {
    throw FormatError(FormatErrorKind::kBadArchitecture, where + ": activation needs a kind");
  }
  const auto kind = get_field<std::string>(j, "kind", where);
  Activation a;
  if (kind == "none") {
    a.kind = ActivationKind::kNone;
    check_keys(j, {"kind"}, where);
  } else if (kind == "relu") {
    a.kind = ActivationKind::kReLU;
    check_keys(j, {"kind"}, where);
  } else if (kind == "relu6") {
    a.kind = ActivationKind::kReLU6;
    check_keys(j, {"kind"}, where);
  } else if (kind == "tanh") {
    a.kind = ActivationKind::kTanh;
    check_keys(j, {"kind"}, where);
  } else if (kind == "softmax") {
    a.kind = ActivationKind::kSoftmax;
    check_keys(j, {"kind"}, where);
  } else if (kind == "prelu") {
    a.kind = ActivationKind::kPReLU;
    check_keys(j, {"kind", "slope"}, where);
    a.slope = get_field<std::string>(j, "slope", where);
  } else if (kind == "relu_clamp") {
    a.kind = ActivationKind::kReLUClamp;
    check_keys(j, {"kind", "bound"}, where);
    a.bound = get_field<double>(j, "bound", where);
  } else {
    throw FormatError(FormatErrorKind::kBadArchitecture, where + ": unknown activation '" + kind + "'");
  }
  return a;
}

inline Json activation_to_json(const Activation& a) {
  Json j;
  j["kind"] = to_string(a.kind);
  if (a.kind == ActivationKind::kPReLU) j["slope"] = a.slope;
  if (a.kind == ActivationKind::kReLUClamp) j["bound"] = a.bound;
  return j;
}

inline LayerDescriptor layer_from_json(const Json& j, std::size_t index) {
  const std::string where = "layer " + std::to_string(index);
  if (!j.is_object() || !j.contains("kind")) {
    throw FormatError(FormatErrorKind::kBadArchitecture, where + ": missing kind");
  }
  const auto kind = get_field<std::string>(j, "kind", where);
  LayerDescriptor l;
  if (kind == "conv2d") {
    check_keys(j, {"kind", "name", "in_channels", "out_channels", "kernel", "stride", "padding",
                   "weight", "bias", "activation"}, where);
    l.kind = LayerKind::kConv2d;
    l.in_channels = get_field<std::size_t>(j, "in_channels", where);
    l.out_channels = get_field<std::size_t>(j, "out_channels", where);
    l.kernel = get_field<std::size_t>(j, "kernel", where);
    l.stride = get_field<std::size_t>(j, "stride", where);
    l.padding = get_field<std::size_t>(j, "padding", where);
    l.weight = get_field<std::string>(j, "weight", where);
    l.bias = get_field<std::string>(j, "bias", where);
  } else if (kind == "fc") {
    check_keys(j, {"kind", "name", "in_features", "out_features", "weight", "bias", "activation"}, where);
    l.kind = LayerKind::kFullyConnected;
    l.in_features = get_field<std::size_t>(j, "in_features", where);
    l.out_features = get_field<std::size_t>(j, "out_features", where);
    l.weight = get_field<std::string>(j, "weight", where);
    l.bias = get_field<std::string>(j, "bias", where);
  } else if (kind == "maxpool2d") {
    check_keys(j, {"kind", "name", "pool", "stride", "activation"}, where);
    l.kind = LayerKind::kMaxPool2d;
    l.pool = get_field<std::size_t>(j, "pool", where);
    l.stride = get_field<std::size_t>(j, "stride", where);
  } else if (kind == "batchnorm") {
    check_keys(j, {"kind", "name", "channels", "eps", "weight", "bias", "running_mean", "running_var",
                   "activation"}, where);
    l.kind = LayerKind::kBatchNorm;
    l.channels = get_field<std::size_t>(j, "channels", where);
    l.eps = get_field<double>(j, "eps", where);
    l.weight = get_field<std::string>(j, "weight", where);
    l.bias = get_field<std::string>(j, "bias", where);
    l.running_mean = get_field<std::string>(j, "running_mean", where);
    l.running_var = get_field<std::string>(j, "running_var", where);
  } else if (kind == "dropout") {
    check_keys(j, {"kind", "name", "p", "activation"}, where);
    l.kind = LayerKind::kDropout;
    l.dropout = get_field<double>(j, "p", where);
  } else if (kind == "flatten") {
    check_keys(j, {"kind", "name", "activation"}, where);
    l.kind = LayerKind::kFlatten;
  } else {
    throw FormatError(FormatErrorKind::kBadArchitecture, where + ": unknown layer kind '" + kind + "'");
  }
  l.name = get_field<std::string>(j, "name", where);
  l.activation = activation_from_json(j.at("activation"), where + " ('" + l.name + "')");
  return l;
}

inline Json layer_to_json(const LayerDescriptor& l) {
  Json j;
  j["kind"] = to_string(l.kind);
  j["name"] = l.name;
  j["activation"] = activation_to_json(l.activation);
  switch (l.kind) {
    case LayerKind::kConv2d:
      j["in_channels"] = l.in_channels;
      j["out_channels"] = l.out_channels;
      j["kernel"] = l.kernel;
      j["stride"] = l.stride;
      j["padding"] = l.padding;
      j["weight"] = l.weight;
      j["bias"] = l.bias;
      break;
    case LayerKind::kFullyConnected:
      j["in_features"] = l.in_features;
      j["out_features"] = l.out_features;
      j["weight"] = l.weight;
      j["bias"] = l.bias;
      break;
    case LayerKind::kMaxPool2d:
      j["pool"] = l.pool;
      j["stride"] = l.stride;
      break;
    case LayerKind::kBatchNorm:
      j["channels"] = l.channels;
      j["eps"] = l.eps;
      j["weight"] = l.weight;
      j["bias"] = l.bias;
      j["running_mean"] = l.running_mean;
      j["running_var"] = l.running_var;
      break;
    case LayerKind::kDropout:
      j["p"] = l.dropout;
      break;
    case LayerKind::kFlatten:
      break;
  }
  return j;
}

}  // namespace detail

// Architecture description as canonical JSON: keys sorted, no whitespace.
inline std::string architecture_json(const ModelSpec& spec) {
  detail::Json j;
  j["name"] = spec.name;
  j["input_shape"] = spec.input_shape;
  j["num_classes"] = spec.num_classes;
  j["layers"] = detail::Json::array();
  for (const auto& l : spec.layers) j["layers"].push_back(detail::layer_to_json(l));
  return j.dump();
}

inline ModelSpec parse_architecture(const std::string& text) {
  detail::Json j;
  try {
    j = detail::Json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(FormatErrorKind::kBadArchitecture, std::string("architecture JSON: ") + e.what());
  }
  detail::check_keys(j, {"name", "input_shape", "num_classes", "layers"}, "architecture");
  ModelSpec spec;
  spec.name = detail::get_field<std::string>(j, "name", "architecture");
  spec.input_shape = detail::get_field<Shape>(j, "input_shape", "architecture");
  spec.num_classes = detail::get_field<std::size_t>(j, "num_classes", "architecture");
  if (!j.at("layers").is_array()) {
    throw FormatError(FormatErrorKind::kBadArchitecture, "architecture: layers must be an array");
  }
  for (std::size_t i = 0; i < j.at("layers").size(); ++i) {
    spec.layers.push_back(detail::layer_from_json(j.at("layers")[i], i));
  }
  return spec;
}

inline void validate_or_format_error(const Model& model) {
  try {
    validate_model(model);
  } catch (const ConfigError& e) {
    throw FormatError(FormatErrorKind::kBadArchitecture, e.what());
  }
}

inline Model parse_model(const std::vector<std::uint8_t>& bytes, const std::string& what = "model") {
  detail::ByteReader r(bytes, what);
  detail::check_magic(r, "NNXF", what);
  Model model;
  const auto arch_len = r.read<std::uint32_t>();
  model.spec = parse_architecture(r.read_string(arch_len, "architecture"));
  const auto count = r.read<std::uint32_t>();
  for (std::uint32_t t = 0; t < count; ++t) {
    Parameter p;
    const auto name_len = r.read<std::uint32_t>();
    p.name = r.read_string(name_len, "parameter name");
    const auto dtype = r.read<std::uint8_t>();
    if (dtype > static_cast<std::uint8_t>(DType::kBinary)) {
      throw FormatError(FormatErrorKind::kUnknownDType,
                        what + ": parameter '" + p.name + "' has dtype code " + std::to_string(dtype));
    }
    p.dtype = static_cast<DType>(dtype);
    const auto rank = r.read<std::uint32_t>();
    if (rank > 8) {
      throw FormatError(FormatErrorKind::kShapeMismatch,
                        what + ": parameter '" + p.name + "' has rank " + std::to_string(rank));
    }
    for (std::uint32_t d = 0; d < rank; ++d) p.shape.push_back(r.read<std::uint32_t>());
    if (p.dtype == DType::kQuant8) {
      p.scale = r.read<float>();
      p.zero_point = r.read<std::uint8_t>();
    } else if (p.dtype == DType::kBinary) {
      p.scale = r.read<float>();
    }
    const auto payload = r.read<std::uint64_t>();
    const std::size_t n = element_count(p.shape);
    if (payload != n * element_bytes(p.dtype)) {
      throw FormatError(FormatErrorKind::kShapeMismatch,
                        what + ": parameter '" + p.name + "' shape " + shape_to_string(p.shape) +
                            " needs " + std::to_string(n * element_bytes(p.dtype)) +
                            " payload bytes, header declares " + std::to_string(payload));
    }
    switch (p.dtype) {
      case DType::kF32:
        p.f32.resize(n);
        r.read_bytes(p.f32.data(), payload, "parameter payload");
        break;
      case DType::kQuant8:
        p.q8.resize(n);
        r.read_bytes(p.q8.data(), payload, "parameter payload");
        break;
      case DType::kBinary:
        p.bin.resize(n);
        r.read_bytes(p.bin.data(), payload, "parameter payload");
        for (std::int8_t b : p.bin) {
          if (b != 1 && b != -1) {
            throw FormatError(FormatErrorKind::kShapeMismatch,
                              what + ": binarized parameter '" + p.name + "' holds a value other than +-1");
          }
        }
        break;
    }
    model.params.add(std::move(p));
  }
  r.expect_end();
  validate_or_format_error(model);
  return model;
}

inline std::vector<std::uint8_t> serialize_model(const Model& model) {
  detail::ByteWriter w;
  w.write_bytes("NNXF", 4);
  w.write<std::uint32_t>(kFormatVersion);
  const std::string arch = architecture_json(model.spec);
  w.write<std::uint32_t>(static_cast<std::uint32_t>(arch.size()));
  w.write_bytes(arch.data(), arch.size());
  w.write<std::uint32_t>(static_cast<std::uint32_t>(model.params.size()));
  for (const Parameter& p : model.params) {
    w.write<std::uint32_t>(static_cast<std::uint32_t>(p.name.size()));
    w.write_bytes(p.name.data(), p.name.size());
    w.write<std::uint8_t>(static_cast<std::uint8_t>(p.dtype));
    w.write<std::uint32_t>(static_cast<std::uint32_t>(p.shape.size()));
    for (std::size_t d : p.shape) w.write<std::uint32_t>(static_cast<std::uint32_t>(d));
    if (p.dtype == DType::kQuant8) {
      w.write<float>(p.scale);
      w.write<std::uint8_t>(p.zero_point);
    } else if (p.dtype == DType::kBinary) {
      w.write<float>(p.scale);
    }
    w.write<std::uint64_t>(p.byte_size());
    switch (p.dtype) {
      case DType::kF32: w.write_bytes(p.f32.data(), p.byte_size()); break;
      case DType::kQuant8: w.write_bytes(p.q8.data(), p.byte_size()); break;
      case DType::kBinary: w.write_bytes(p.bin.data(), p.byte_size()); break;
    }
  }
  return std::move(w.bytes);
}

inline Model load_model(const std::string& path) { return parse_model(detail::read_file(path), path); }

inline void save_model(const Model& model, const std::string& path) {
  validate_model(model);
  detail::write_file(path, serialize_model(model));
}

inline Dataset parse_dataset(const std::vector<std::uint8_t>& bytes, const std::string& what = "dataset") {
  detail::ByteReader r(bytes, what);
  detail::check_magic(r, "NNXD", what);
  Dataset ds;
  ds.num_classes = r.read<std::uint32_t>();
  const auto rank = r.read<std::uint32_t>();
  if (rank == 0 || rank > 8) {
    throw FormatError(FormatErrorKind::kShapeMismatch, what + ": sample rank " + std::to_string(rank));
  }
  for (std::uint32_t d = 0; d < rank; ++d) ds.sample_shape.push_back(r.read<std::uint32_t>());
  const auto count = r.read<std::uint32_t>();
  const std::size_t n = ds.sample_size();
  if (static_cast<std::uint64_t>(count) * (2 + 4 * n) > r.remaining()) {
    throw FormatError(FormatErrorKind::kTruncated,
                      what + ": " + std::to_string(count) + " samples declared but only " +
                          std::to_string(r.remaining()) + " bytes remain");
  }
  ds.data.resize(static_cast<std::size_t>(count) * n);
  ds.labels.resize(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    ds.labels[i] = r.read<std::uint16_t>();
    if (ds.labels[i] >= ds.num_classes) {
      throw FormatError(FormatErrorKind::kShapeMismatch,
                        what + ": sample " + std::to_string(i) + " has label " +
                            std::to_string(ds.labels[i]) + " >= num_classes");
    }
    r.read_bytes(ds.data.data() + i * n, n * 4, "sample data");
  }
  r.expect_end();
  return ds;
}

inline std::vector<std::uint8_t> serialize_dataset(const Dataset& ds) {
  detail::ByteWriter w;
  w.write_bytes("NNXD", 4);
  w.write<std::uint32_t>(kFormatVersion);
  w.write<std::uint32_t>(static_cast<std::uint32_t>(ds.num_classes));
  w.write<std::uint32_t>(static_cast<std::uint32_t>(ds.sample_shape.size()));
  for (std::size_t d : ds.sample_shape) w.write<std::uint32_t>(static_cast<std::uint32_t>(d));
  w.write<std::uint32_t>(static_cast<std::uint32_t>(ds.size()));
  const std::size_t n = ds.sample_size();
  for (std::size_t i = 0; i < ds.size(); ++i) {
    w.write<std::uint16_t>(ds.labels[i]);
    w.write_bytes(ds.sample(i), n * 4);
  }
  return std::move(w.bytes);
}

inline Dataset load_dataset(const std::string& path) { return parse_dataset(detail::read_file(path), path); }

inline void save_dataset(const Dataset& ds, const std::string& path) {
  detail::write_file(path, serialize_dataset(ds));
}

// Selects which parameter elements a sweep visits.
struct ParameterFilter {
  std::vector<std::string> tensors;   // empty selects every tensor
  std::size_t min_tensor_bytes = 0;   // skip tensors smaller than this
  std::optional<std::size_t> sample;  // uniform sample size without replacement
  std::uint64_t seed = 0;
};

// Parameter elements in store order, or a seeded uniform sample of them
// returned in store order.
inline std::vector<ParameterRef> enumerate_parameters(const ParameterStore& store,
                                                      const ParameterFilter& filter = {}) {
  for (const auto& name : filter.tensors) {
    if (!store.find(name)) throw ConfigError("no parameter tensor named '" + name + "'");
  }
  std::vector<ParameterRef> refs;
  for (std::size_t t = 0; t < store.size(); ++t) {
    const Parameter& p = store[t];
    if (!filter.tensors.empty() &&
        std::find(filter.tensors.begin(), filter.tensors.end(), p.name) == filter.tensors.end()) {
      continue;
    }
    if (p.byte_size() < filter.min_tensor_bytes) continue;
    for (std::size_t e = 0; e < p.size(); ++e) refs.push_back({t, e});
  }
  if (filter.sample) {
    const std::size_t k = *filter.sample;
    if (k == 0 || k > refs.size()) {
      throw ConfigError("parameter sample size " + std::to_string(k) + " outside 1.." +
                        std::to_string(refs.size()));
    }
    Rng rng(filter.seed);
    std::vector<std::size_t> picks = sample_without_replacement(refs.size(), k, rng);
    std::sort(picks.begin(), picks.end());
    std::vector<ParameterRef> sampled;
    sampled.reserve(k);
    for (std::size_t i : picks) sampled.push_back(refs[i]);
    refs = std::move(sampled);
  }
  return refs;
}

}  // namespace gracile
