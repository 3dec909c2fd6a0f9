// Copyright 2026 The Gracile Authors
// SPDX-License-Identifier: Apache-2.0
//
// Unit tests for the mitigation transforms and the Rowhammer simulator.

#include <gtest/gtest.h>

#include <cmath>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "gracile/evaluator.hpp"
#include "gracile/forward.hpp"
#include "gracile/mitigation.hpp"
#include "gracile/model_format.hpp"
#include "gracile/rowhammer.hpp"
#include "test_support.hpp"

namespace gracile {
namespace {

using testing::random_dataset;
using testing::relu_model;
using testing::self_labelled;
using testing::small_model;

// ------------------------------------------------------------ mitigation

TEST(Mitigation, QuantizeTensorIsAffineWithinOneStep) {
  Rng rng(3);
  const auto values = testing::random_values(500, 2.0f, rng);
  const Parameter p = Parameter::from_floats("w", {500}, values);
  const Parameter q = quantize_tensor(p);
  ASSERT_EQ(q.dtype, DType::kQuant8);
  float lo = 0.0f, hi = 0.0f;
  for (float v : values) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  EXPECT_FLOAT_EQ(q.scale, (hi - lo) / 255.0f);
  for (std::size_t i = 0; i < values.size(); ++i) {
    EXPECT_LE(std::fabs(q.value(i) - values[i]), q.scale) << i;
  }
  // Zero maps to the zero point exactly.
  const Parameter z = quantize_tensor(Parameter::from_floats("z", {3}, {-1.0f, 0.0f, 3.0f}));
  EXPECT_EQ(z.value(1), 0.0f);
  EXPECT_EQ(z.q8[1], z.zero_point);
}

TEST(Mitigation, QuantizeConstantTensor) {
  const Parameter q = quantize_tensor(Parameter::from_floats("c", {2}, {0.0f, 0.0f}));
  EXPECT_EQ(q.value(0), 0.0f);
  EXPECT_EQ(q.value(1), 0.0f);
}

TEST(Mitigation, BinarizeTensorScaleAndSigns) {
  const Parameter b = binarize_tensor(Parameter::from_floats("w", {2}, {0.3f, -0.1f}));
  ASSERT_EQ(b.dtype, DType::kBinary);
  EXPECT_EQ(b.bin[0], 1);
  EXPECT_EQ(b.bin[1], -1);
  EXPECT_FLOAT_EQ(b.scale, 0.2f);
  EXPECT_FLOAT_EQ(b.value(1), -0.2f);
}

TEST(Mitigation, BinarizeKeepsFirstConvAndRoundTrips) {
  const Model m = binarize(relu_model(5));
  EXPECT_EQ(m.params.at("c1.weight").dtype, DType::kF32);
  EXPECT_EQ(m.params.at("c1.bias").dtype, DType::kF32);
  for (const char* n : {"f1.weight", "f1.bias", "f2.weight", "f2.bias"}) {
    const Parameter& p = m.params.at(n);
    ASSERT_EQ(p.dtype, DType::kBinary) << n;
    for (auto v : p.bin) EXPECT_TRUE(v == 1 || v == -1);
  }
  const Model back = parse_model(serialize_model(m));
  EXPECT_EQ(back.params, m.params);
  // A double flip restores the model exactly.
  ParameterStore store = m.params;
  const BitLocation loc{{store.index_of("f1.weight"), 17}, 1, FlipDirection::kUnconditional};
  apply_flip(store, loc);
  EXPECT_FALSE(store == m.params);
  apply_flip(store, loc);
  EXPECT_TRUE(store == m.params);
}

TEST(Mitigation, BinarizeRejectsNonConvFirstLayer) {
  Model m = relu_model(1);
  m.spec.layers.erase(m.spec.layers.begin());
  EXPECT_THROW(binarize(m), ConfigError);
}

TEST(Mitigation, Quantize8RoundTripsAndTracksAccuracy) {
  const Model m = relu_model(7);
  const Dataset d = self_labelled(m, random_dataset(m.spec.input_shape, 3, 300, 8));
  const Model q = quantize8(m);
  for (const Parameter& p : q.params) EXPECT_EQ(p.dtype, DType::kQuant8);
  EXPECT_EQ(parse_model(serialize_model(q)).params, q.params);
  EXPECT_GT(accuracy(q, d), 0.8);
}

TEST(Mitigation, ClampCalibrationLeavesCalibrationOutputsUnchanged) {
  const Model m = relu_model(11);
  const Dataset d = random_dataset(m.spec.input_shape, 3, 200, 12);
  const Model c = calibrate_clamp(m, d);
  std::size_t clamps = 0;
  for (const auto& l : c.spec.layers) {
    if (l.activation.kind == ActivationKind::kReLUClamp) {
      ++clamps;
      EXPECT_GT(l.activation.bound, 0.0);
    }
  }
  EXPECT_EQ(clamps, 2u);
  const Tensor a = Network(m).forward(d.as_batch());
  const Tensor b = Network(c).forward(d.as_batch());
  ASSERT_EQ(a.size(), b.size());
  EXPECT_EQ(0, std::memcmp(a.data(), b.data(), a.size() * sizeof(float)));
  EXPECT_EQ(accuracy(m, d), accuracy(c, d));
  // The bound survives serialization bit-exactly.
  EXPECT_EQ(parse_model(serialize_model(c)).spec.layers[0].activation.bound, c.spec.layers[0].activation.bound);
}

TEST(Mitigation, SubstitutionRules) {
  EXPECT_THROW(substitute_activation(small_model(1), ActivationKind::kReLU6), ConfigError);
  EXPECT_THROW(substitute_activation(relu_model(1), ActivationKind::kTanh), ConfigError);
  EXPECT_THROW(substitute_activation(relu_model(1), ActivationKind::kReLUClamp, {1.0}), ConfigError);
  const Model r6 = substitute_activation(relu_model(1), ActivationKind::kReLU6);
  EXPECT_EQ(r6.spec.layers[0].activation.kind, ActivationKind::kReLU6);
  EXPECT_EQ(r6.spec.layers.back().activation.kind, ActivationKind::kSoftmax);
  EXPECT_EQ(r6.params, relu_model(1).params);
}

// ------------------------------------------------------------ template db

TEST(TemplateDb, ParsesAndRoundTrips) {
  std::istringstream in(
      "# measured on a test box\n"
      "setup=X_1\n"
      "row=7 flips=12:3:0to1,4095:7:1to0\n"
      "\n"
      "row=9\n");
  const FlipTemplateDb db = parse_template_db(in);
  EXPECT_EQ(db.setup, "X_1");
  ASSERT_EQ(db.rows.size(), 2u);
  EXPECT_EQ(db.rows[0].row, 7u);
  ASSERT_EQ(db.rows[0].flips.size(), 2u);
  EXPECT_EQ(db.rows[0].flips[1], (DramFlip{4095, 7, FlipDirection::kOneToZero}));
  EXPECT_TRUE(db.rows[1].flips.empty());
  std::ostringstream out;
  write_template_db(db, out);
  std::istringstream again(out.str());
  EXPECT_EQ(parse_template_db(again), db);
}

TEST(TemplateDb, ErrorsNameTheLine) {
  const std::vector<std::pair<std::string, std::string>> bad{
      {"row=1 flips=4096:0:0to1\n", ":1:"},
      {"# c\nrow=1 flips=1:8:0to1\n", ":2:"},
      {"row=1\nrow=2 flips=1:1:sideways\n", ":2:"},
      {"row=1\nrow=1\n", ":2:"},
      {"flips=1:1:0to1\n", ":1:"},
      {"row=x\n", ":1:"},
      {"row=1 flips=1:1\n", ":1:"},
  };
  for (const auto& [text, where] : bad) {
    std::istringstream in(text);
    try {
      parse_template_db(in);
      ADD_FAILURE() << "accepted: " << text;
    } catch (const FormatError& e) {
      EXPECT_EQ(e.kind(), FormatErrorKind::kMalformedText);
      EXPECT_NE(std::string(e.what()).find(where), std::string::npos) << e.what();
    }
  }
}

TEST(TemplateDb, SyntheticCountsAndDeterminism) {
  SyntheticDbConfig cfg;
  cfg.rows = 500;
  cfg.zero_to_one = 1234;
  cfg.one_to_zero = 56;
  cfg.seed = 4;
  const FlipTemplateDb db = generate_synthetic_db(cfg);
  EXPECT_EQ(db.rows.size(), 500u);
  EXPECT_EQ(db.count(FlipDirection::kZeroToOne), 1234u);
  EXPECT_EQ(db.count(FlipDirection::kOneToZero), 56u);
  for (const auto& r : db.rows) {
    std::set<std::pair<int, int>> cells;
    for (const auto& f : r.flips) EXPECT_TRUE(cells.insert({f.offset, f.bit}).second);
  }
  EXPECT_EQ(generate_synthetic_db(cfg), db);
  cfg.seed = 5;
  EXPECT_NE(generate_synthetic_db(cfg), db);
  EXPECT_EQ(generate_setup_db("C_1", 0).count(FlipDirection::kZeroToOne), 1365u);
  EXPECT_THROW(generate_setup_db("Z_9", 0), ConfigError);
}

// ------------------------------------------------------------ layout

Model layout_model() {
  Model m = relu_model(2);
  return m;
}

TEST(Layout, PlacementAndByteMapping) {
  const Model m = layout_model();
  LayoutConfig cfg;
  cfg.min_aligned_bytes = 1024;  // only f1.weight (3072 bytes) is page-aligned
  cfg.seed = 9;
  const MemoryLayout layout = build_layout(m.params, cfg);
  ASSERT_EQ(layout.tensors.size(), m.params.size());
  for (const auto& pl : layout.tensors) {
    EXPECT_EQ(pl.offset % pl.element_bytes, 0u);
    EXPECT_EQ(pl.aligned, m.params[pl.tensor].name == "f1.weight");
    if (pl.aligned) EXPECT_EQ(pl.offset, 0u);
  }
  EXPECT_EQ(layout.other_pages, static_cast<std::size_t>(std::ceil(0.25 * m.params.total_bytes() / 4096.0)));

  const std::size_t f1 = m.params.index_of("f1.weight");
  const TensorPlacement& pl = layout.tensors[f1];
  // Byte 3 bit 6 of element 5 is IEEE bit 30, position 31.
  auto loc = map_flip_to_parameter(layout, m.params, pl.first_page, {5 * 4 + 3, 6, FlipDirection::kZeroToOne});
  ASSERT_TRUE(loc.has_value());
  EXPECT_EQ(loc->param, (ParameterRef{f1, 5}));
  EXPECT_EQ(loc->position, 31);
  EXPECT_EQ(loc->direction, FlipDirection::kZeroToOne);
  loc = map_flip_to_parameter(layout, m.params, pl.first_page, {0, 0, FlipDirection::kOneToZero});
  ASSERT_TRUE(loc.has_value());
  EXPECT_EQ(loc->position, 1);
  // Small tensors are reachable by blind flips but not by templates.
  const TensorPlacement& c1 = layout.tensors[m.params.index_of("c1.weight")];
  const DramFlip in_c1{static_cast<std::uint16_t>(c1.offset + 3), 6, FlipDirection::kZeroToOne};
  EXPECT_EQ(locate_flip(layout, m.params, c1.first_page, in_c1).region, RegionKind::kParameter);
  EXPECT_FALSE(map_flip_to_parameter(layout, m.params, c1.first_page, in_c1).has_value());
  // Past the end of the tensor is slack.
  const std::size_t end = pl.offset + pl.bytes;
  const FlipTarget slack =
      locate_flip(layout, m.params, pl.first_page + end / 4096, {static_cast<std::uint16_t>(end % 4096), 0,
                                                                 FlipDirection::kZeroToOne});
  EXPECT_EQ(slack.region, RegionKind::kSlack);
  EXPECT_EQ(locate_flip(layout, m.params, layout.param_pages, {0, 0, FlipDirection::kZeroToOne}).region,
            RegionKind::kOther);
  EXPECT_THROW(locate_flip(layout, m.params, layout.total_pages(), {}), ConfigError);
}

TEST(Layout, BinaryElementsOnlyReactToTheSignBit) {
  const Model m = binarize(relu_model(2));
  LayoutConfig cfg;
  cfg.min_aligned_bytes = 1;
  const MemoryLayout layout = build_layout(m.params, cfg);
  const std::size_t f1 = m.params.index_of("f1.weight");
  const std::size_t page = layout.tensors[f1].first_page;
  EXPECT_FALSE(map_flip_to_parameter(layout, m.params, page, {10, 0, FlipDirection::kZeroToOne}).has_value());
  const auto loc = map_flip_to_parameter(layout, m.params, page, {10, 7, FlipDirection::kZeroToOne});
  ASSERT_TRUE(loc.has_value());
  EXPECT_EQ(loc->param.element, 10u);
  EXPECT_EQ(loc->position, 1);
}

// ------------------------------------------------------------ surgical

TEST(Surgical, TemplatesFromVulnerableBitsOfAlignedTensors) {
  const Model m = layout_model();
  LayoutConfig cfg;
  cfg.min_aligned_bytes = 1024;
  const MemoryLayout layout = build_layout(m.params, cfg);
  const std::size_t f1 = m.params.index_of("f1.weight");
  const std::vector<BitLocation> vuln{
      {{f1, 1030}, 31, FlipDirection::kZeroToOne},                      // byte 4123 -> page offset 27
      {{m.params.index_of("c1.weight"), 0}, 31, FlipDirection::kZeroToOne},  // not aligned
      {{f1, 3}, 31, FlipDirection::kOneToZero}};                              // clearing flip
  const VulnerableTemplates t = vulnerable_templates(layout, m.params, vuln);
  EXPECT_EQ(t.size(), 1u);
  EXPECT_TRUE(t.contains({27, 6, FlipDirection::kZeroToOne}));
  EXPECT_FALSE(t.contains({27, 6, FlipDirection::kOneToZero}));
}

TEST(Surgical, DeterministicAndMonotoneInTemplates) {
  SyntheticDbConfig cfg;
  cfg.rows = 4000;
  cfg.zero_to_one = 8000;
  cfg.seed = 1;
  const FlipTemplateDb db = generate_synthetic_db(cfg);
  VulnerableTemplates small, big;
  for (int o = 0; o < 64; ++o) small.add(o, 6, FlipDirection::kZeroToOne);
  for (int o = 0; o < 256; ++o) big.add(o, 6, FlipDirection::kZeroToOne);
  for (std::uint64_t s = 0; s < 50; ++s) {
    const SurgicalResult a = surgical_search(db, small, s);
    EXPECT_EQ(a.attempts, surgical_search(db, small, s).attempts);
    const SurgicalResult b = surgical_search(db, big, s);
    ASSERT_TRUE(b.found);
    if (a.found) {
      EXPECT_LE(b.attempts, a.attempts);
      EXPECT_TRUE(small.contains(a.flip));
      EXPECT_DOUBLE_EQ(a.seconds(), 0.2 * a.attempts);
    }
  }
  const SurgicalResult none = surgical_search(db, VulnerableTemplates{}, 0);
  EXPECT_FALSE(none.found);
  EXPECT_EQ(none.attempts, db.rows.size());
}

// ------------------------------------------------------------ blind

TEST(Blind, InvariantsAndWorkerIndependence) {
  const Model m = layout_model();
  const Dataset d = self_labelled(m, random_dataset(m.spec.input_shape, 3, 100, 21));
  const Network net(m);
  const IncrementalEvaluator ev(net, d);
  LayoutConfig lc;
  const MemoryLayout layout = build_layout(m.params, lc);
  SyntheticDbConfig dc;
  dc.rows = 200;
  dc.zero_to_one = 600;
  dc.one_to_zero = 200;
  dc.seed = 2;
  const FlipTemplateDb db = generate_synthetic_db(dc);
  BlindConfig bc;
  bc.experiments = 12;
  bc.attempts = 100;
  bc.crash_probability = 0.02;
  bc.seed = 77;
  const CampaignResult one = blind_campaign(db, layout, m, ev, bc);
  bc.workers = 3;
  const CampaignResult three = blind_campaign(db, layout, m, ev, bc);
  EXPECT_EQ(one.corrupted + one.crashes + one.timeouts, 12u);
  ASSERT_EQ(one.experiments.size(), three.experiments.size());
  std::size_t applied = 0;
  for (std::size_t e = 0; e < one.experiments.size(); ++e) {
    const auto& x = one.experiments[e];
    EXPECT_TRUE(x.conservation_ok) << e;
    EXPECT_EQ(x.outcome, three.experiments[e].outcome);
    EXPECT_EQ(x.attempts, three.experiments[e].attempts);
    EXPECT_EQ(x.rad_top1, three.experiments[e].rad_top1);
    EXPECT_EQ(x.flips.size(), three.experiments[e].flips.size());
    EXPECT_LE(x.attempts, 100u);
    applied += x.applied_flips;
    if (x.outcome == Outcome::kModelCorrupted) EXPECT_GT(x.rad_top1, 0.1);
    if (x.outcome == Outcome::kTimeout) EXPECT_EQ(x.attempts, 100u);
    std::size_t crashed = 0;
    for (const auto& f : x.flips) {
      crashed += f.crashed;
      if (f.crashed) EXPECT_EQ(f.region, RegionKind::kOther);
      if (f.applied) EXPECT_EQ(f.region, RegionKind::kParameter);
    }
    EXPECT_EQ(crashed > 0, x.outcome == Outcome::kCrash);
  }
  EXPECT_GT(applied, 0u);
}

TEST(Blind, ZeroCrashProbabilityNeverCrashes) {
  const Model m = layout_model();
  const Dataset d = self_labelled(m, random_dataset(m.spec.input_shape, 3, 50, 22));
  const Network net(m);
  const IncrementalEvaluator ev(net, d);
  const MemoryLayout layout = build_layout(m.params);
  SyntheticDbConfig dc;
  dc.rows = 100;
  dc.zero_to_one = 400;
  const FlipTemplateDb db = generate_synthetic_db(dc);
  BlindConfig bc;
  bc.experiments = 5;
  bc.attempts = 50;
  bc.crash_probability = 0.0;
  EXPECT_EQ(blind_campaign(db, layout, m, ev, bc).crashes, 0u);
  bc.crash_probability = 1.5;
  EXPECT_THROW(blind_campaign(db, layout, m, ev, bc), ConfigError);
}

}  // namespace
}  // namespace gracile
