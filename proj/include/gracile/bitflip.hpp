// Copyright 2026 The Gracile Authors
// SPDX-License-Identifier: Apache-2.0
//
// Single-bit flips on stored parameter encodings.
//
// Bit positions are 1-based. For float32, position 32 is the sign, 31..24 the
// exponent from most to least significant bit, and 23..1 the mantissa, so
// position p is IEEE-754 bit p-1. For 8-bit quantized values position p is
// bit p-1 of the byte. A binarized element has a single position whose bit is
// set when the element is -1.

#pragma once

#include <bit>
#include <cstddef>
#include <cstdint>
#include <string>

#include "gracile/errors.hpp"
#include "gracile/model.hpp"

namespace gracile {

enum class FlipDirection : std::uint8_t { kZeroToOne, kOneToZero, kUnconditional };

inline const char* to_string(FlipDirection d) {
  switch (d) {
    case FlipDirection::kZeroToOne: return "0to1";
    case FlipDirection::kOneToZero: return "1to0";
    case FlipDirection::kUnconditional: return "any";
  }
  return "unknown";
}

inline FlipDirection parse_direction(const std::string& text) {
  if (text == "0to1") return FlipDirection::kZeroToOne;
  if (text == "1to0") return FlipDirection::kOneToZero;
  if (text == "any") return FlipDirection::kUnconditional;
  throw ConfigError("unknown flip direction '" + text + "' (expected 0to1, 1to0 or any)");
}

struct BitLocation {
  ParameterRef param;
  int position = 1;
  FlipDirection direction = FlipDirection::kUnconditional;

  bool operator==(const BitLocation&) const = default;
};

template <typename Word>
struct FlipOutcome {
  Word value;
  bool applied;
};

// Flips bit `position` of `word` when the direction's precondition holds.
template <typename Word>
FlipOutcome<Word> flip_word(Word word, int position, int width, FlipDirection direction) {
  if (position < 1 || position > width) {
    throw ConfigError("bit position " + std::to_string(position) + " outside 1.." +
                      std::to_string(width));
  }
  const Word mask = static_cast<Word>(Word{1} << (position - 1));
  const bool set = (word & mask) != 0;
  if ((direction == FlipDirection::kZeroToOne && set) ||
      (direction == FlipDirection::kOneToZero && !set)) {
    return {word, false};
  }
  return {static_cast<Word>(word ^ mask), true};
}

inline FlipOutcome<float> flip_f32(float value, int position, FlipDirection direction) {
  const auto r = flip_word<std::uint32_t>(std::bit_cast<std::uint32_t>(value), position, 32, direction);
  return {std::bit_cast<float>(r.value), r.applied};
}

inline FlipOutcome<std::uint8_t> flip_quant8(std::uint8_t byte, int position, FlipDirection direction) {
  return flip_word<std::uint8_t>(byte, position, 8, direction);
}

inline FlipOutcome<std::int8_t> flip_binary(std::int8_t value, int position, FlipDirection direction) {
  if (position != 1) {
    throw ConfigError("binarized elements have a single bit position (1), got " +
                      std::to_string(position));
  }
  const bool set = value < 0;
  if ((direction == FlipDirection::kZeroToOne && set) ||
      (direction == FlipDirection::kOneToZero && !set)) {
    return {value, false};
  }
  return {static_cast<std::int8_t>(-value), true};
}

// Record of one flip applied to a store, sufficient to undo it.
struct FlipRecord {
  BitLocation location;
  bool applied = false;
  std::uint32_t old_raw = 0;  // previous stored encoding, zero-extended
  float old_value = 0.0f;     // effective value before the flip
  float new_value = 0.0f;     // effective value after the flip
};

inline void check_location(const ParameterStore& store, const BitLocation& loc) {
  if (loc.param.tensor >= store.size()) {
    throw ConfigError("parameter tensor index " + std::to_string(loc.param.tensor) + " out of range");
  }
  const Parameter& p = store[loc.param.tensor];
  if (loc.param.element >= p.size()) {
    throw ConfigError("element " + std::to_string(loc.param.element) + " out of range for '" +
                      p.name + "'");
  }
  const int bits = static_cast<int>(element_bits(p.dtype));
  if (loc.position < 1 || loc.position > bits) {
    throw ConfigError("bit position " + std::to_string(loc.position) + " outside 1.." +
                      std::to_string(bits) + " for '" + p.name + "'");
  }
}

// Applies one flip in place. A flip whose direction precondition does not
// hold leaves the store untouched and reports applied = false.
inline FlipRecord apply_flip(ParameterStore& store, const BitLocation& loc) {
  check_location(store, loc);
  Parameter& p = store[loc.param.tensor];
  const std::size_t i = loc.param.element;
  FlipRecord rec;
  rec.location = loc;
  rec.old_value = p.value(i);
  switch (p.dtype) {
    case DType::kF32: {
      rec.old_raw = std::bit_cast<std::uint32_t>(p.f32[i]);
      const auto r = flip_f32(p.f32[i], loc.position, loc.direction);
      p.f32[i] = r.value;
      rec.applied = r.applied;
      break;
    }
    case DType::kQuant8: {
      rec.old_raw = p.q8[i];
      const auto r = flip_quant8(p.q8[i], loc.position, loc.direction);
      p.q8[i] = r.value;
      rec.applied = r.applied;
      break;
    }
    case DType::kBinary: {
      rec.old_raw = static_cast<std::uint8_t>(p.bin[i]);
      const auto r = flip_binary(p.bin[i], loc.position, loc.direction);
      p.bin[i] = r.value;
      rec.applied = r.applied;
      break;
    }
  }
  rec.new_value = p.value(i);
  return rec;
}

// Restores the encoding captured in `rec`.
inline void revert(ParameterStore& store, const FlipRecord& rec) {
  Parameter& p = store[rec.location.param.tensor];
  const std::size_t i = rec.location.param.element;
  switch (p.dtype) {
    case DType::kF32: p.f32[i] = std::bit_cast<float>(rec.old_raw); break;
    case DType::kQuant8: p.q8[i] = static_cast<std::uint8_t>(rec.old_raw); break;
    case DType::kBinary: p.bin[i] = static_cast<std::int8_t>(static_cast<std::uint8_t>(rec.old_raw)); break;
  }
}

// Value element `loc.param` would take after the flip, without touching the
// store. Returns applied = false when the precondition fails.
inline FlipOutcome<float> flipped_value(const ParameterStore& store, const BitLocation& loc) {
  check_location(store, loc);
  const Parameter& p = store[loc.param.tensor];
  const std::size_t i = loc.param.element;
  switch (p.dtype) {
    case DType::kF32: return flip_f32(p.f32[i], loc.position, loc.direction);
    case DType::kQuant8: {
      const auto r = flip_quant8(p.q8[i], loc.position, loc.direction);
      return {p.scale * static_cast<float>(static_cast<int>(r.value) - static_cast<int>(p.zero_point)),
              r.applied};
    }
    case DType::kBinary: {
      const auto r = flip_binary(p.bin[i], loc.position, loc.direction);
      return {p.scale * static_cast<float>(r.value), r.applied};
    }
  }
  return {0.0f, false};
}

}  // namespace gracile
