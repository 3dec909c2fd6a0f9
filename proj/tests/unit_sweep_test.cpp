// Copyright 2026 The Gracile Authors
// SPDX-License-Identifier: Apache-2.0
//
// Unit tests for the sweep engine, its reports and the command-line tool.

#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <set>
#include <string>
#include <vector>

#include "gracile/forward.hpp"
#include "gracile/model_format.hpp"
#include "gracile/report.hpp"
#include "gracile/sweep.hpp"
#include "test_support.hpp"

namespace gracile {
namespace {

namespace fs = std::filesystem;
using testing::random_dataset;
using testing::relu_model;
using testing::self_labelled;
using testing::small_model;
using testing::toy_linear_model;

Dataset labelled(const Model& m, std::size_t n, std::uint64_t seed) {
  return self_labelled(m, random_dataset(m.spec.input_shape, m.spec.num_classes, n, seed));
}

TEST(Rad, DefinitionAndThreshold) {
  EXPECT_DOUBLE_EQ(rad(0.9, 0.45), 0.5);
  EXPECT_DOUBLE_EQ(rad_counts(1000, 1000), 0.0);
  EXPECT_DOUBLE_EQ(rad_counts(1000, 0), 1.0);
  EXPECT_LT(rad_counts(1000, 1100), 0.0);
  // Exactly 0.1 is not above the threshold.
  SweepRecord r;
  r.applied = true;
  r.rad = rad_counts(1000, 900);
  ParameterStore store;
  store.add(Parameter::from_floats("w", {1}, {1.0f}));
  EXPECT_EQ(characterize({r}, store).vulnerable_parameters, 0u);
}

TEST(Sweep, EveryFlipOnceAndStoreRestored) {
  const Model m = small_model(4);
  const Dataset d = labelled(m, 40, 5);
  SweepConfig cfg;
  cfg.params.tensors = {"c1.slope", "bn.var", "f2.weight"};
  const SweepResult r = run_sweep(m, d, cfg);
  ASSERT_EQ(r.runs.size(), 1u);
  EXPECT_TRUE(r.store_restored);
  const std::size_t params = 3 + 3 + 28;
  EXPECT_EQ(r.runs[0].records.size(), params * 32 * 2);
  std::set<std::tuple<ParameterRef, int, int>> seen;
  std::size_t applied = 0;
  for (const auto& rec : r.runs[0].records) {
    EXPECT_TRUE(seen.insert({rec.location.param, rec.location.position, static_cast<int>(rec.location.direction)})
                    .second);
    applied += rec.applied;
  }
  // Each bit is either 0 or 1, so exactly one direction applies.
  EXPECT_EQ(applied, params * 32);
  EXPECT_EQ(r.pristine.top1, d.size());
}

TEST(Sweep, RecordsMatchFullForwardOracle) {
  const Model m = relu_model(8);
  const Dataset d = labelled(m, 30, 9);
  SweepConfig cfg;
  cfg.flips.positions = PositionSet::kExponent;
  cfg.params.tensors = {"f2.weight", "c1.bias"};
  const SweepResult r = run_sweep(m, d, cfg);
  for (const auto& rec : r.runs[0].records) {
    Model copy = m;
    const FlipRecord fr = apply_flip(copy.params, rec.location);
    ASSERT_EQ(fr.applied, rec.applied);
    const std::size_t correct = Network(copy).evaluate(d).top1;
    EXPECT_EQ(rec.top1, correct);
    EXPECT_EQ(rec.rad, rad_counts(d.size(), correct));
  }
}

TEST(Sweep, IndependentOfWorkerCount) {
  const Model m = small_model(6);
  const Dataset d = labelled(m, 25, 7);
  SweepConfig cfg;
  cfg.params.sample = 60;
  cfg.params.seed = 11;
  cfg.repeats = 2;
  cfg.val_fraction = 0.5;
  cfg.val_seed = 3;
  const SweepResult one = run_sweep(m, d, cfg);
  cfg.workers = 5;
  const SweepResult five = run_sweep(m, d, cfg);
  const auto a = sweep_report(one, m.params, cfg), b = sweep_report(five, m.params, cfg);
  EXPECT_EQ(a.json, b.json);
  EXPECT_EQ(a.csv, b.csv);
  EXPECT_EQ(a.json.find("workers"), std::string::npos);
  EXPECT_NE(one.runs[0].params, one.runs[1].params);
}

TEST(Sweep, SamplingPreconditions) {
  const Model m = relu_model(1);
  const Dataset d = labelled(m, 10, 2);
  SweepConfig cfg;
  cfg.repeats = 5;
  EXPECT_THROW(run_sweep(m, d, cfg), ConfigError);
  cfg.params.sample = m.params.total_elements() + 1;
  EXPECT_THROW(run_sweep(m, d, cfg), ConfigError);
  cfg.repeats = 0;
  cfg.params.sample = 3;
  EXPECT_THROW(run_sweep(m, d, cfg), ConfigError);
}

TEST(Sweep, PerClassSampleIsStratifiedAndSeeded) {
  Dataset d = random_dataset({2}, 3, 0, 1);
  for (int c = 0; c < 3; ++c) {
    for (int i = 0; i < 10 * (c + 1); ++i) {
      d.labels.push_back(static_cast<std::uint16_t>(c));
      d.data.insert(d.data.end(), {0.0f, 0.0f});
    }
  }
  const auto s = per_class_sample(d, 0.1, 4);
  std::vector<int> per(3, 0);
  for (auto i : s) per[d.labels[i]]++;
  EXPECT_EQ(per, (std::vector<int>{1, 2, 3}));
  EXPECT_TRUE(std::is_sorted(s.begin(), s.end()));
  EXPECT_EQ(s, per_class_sample(d, 0.1, 4));
  EXPECT_THROW(per_class_sample(d, 0.0, 4), ConfigError);
  EXPECT_THROW(per_class_sample(d, 1.5, 4), ConfigError);
}

TEST(Characterize, FacetsAndProfile) {
  ParameterStore store;
  store.add(Parameter::from_floats("a", {2}, {1.0f, -1.0f}));
  store.add(Parameter::from_floats("b", {1}, {2.0f}));
  auto rec = [](std::size_t t, std::size_t e, int pos, FlipDirection d, bool applied, double r, float orig) {
    SweepRecord x;
    x.location = {{t, e}, pos, d};
    x.applied = applied;
    x.rad = r;
    x.original = orig;
    return x;
  };
  const std::vector<SweepRecord> records{
      rec(0, 0, 31, FlipDirection::kZeroToOne, true, 0.9, 1.0f),
      rec(0, 0, 30, FlipDirection::kZeroToOne, true, 0.2, 1.0f),
      rec(0, 1, 31, FlipDirection::kZeroToOne, true, 0.05, -1.0f),
      rec(0, 1, 32, FlipDirection::kOneToZero, true, 0.5, -1.0f),
      rec(1, 0, 31, FlipDirection::kOneToZero, false, 0.0, 2.0f),
  };
  const VulnerabilityReport rep = characterize(records, store);
  EXPECT_EQ(rep.tested_parameters, 3u);
  EXPECT_EQ(rep.vulnerable_parameters, 2u);
  EXPECT_DOUBLE_EQ(rep.vulnerable_ratio, 2.0 / 3.0);
  EXPECT_EQ(rep.flips_vulnerable, 3u);
  EXPECT_EQ(rep.vulnerable_flips_by_position.at(31), 1u);
  EXPECT_EQ(rep.vulnerable_flips_by_position.at(32), 1u);
  EXPECT_EQ(rep.vulnerable_flips_by_direction.at("1to0"), 1u);
  EXPECT_EQ(rep.vulnerable_flips_by_sign.at("negative"), 1u);
  EXPECT_EQ(rep.vulnerable_params_by_tensor.at("a"), 2u);
  EXPECT_EQ(rep.tested_params_by_tensor.at("b"), 1u);
  const auto profile = vulnerability_profile(records, {0.0, 0.1, 0.6, 0.95});
  ASSERT_EQ(profile.size(), 4u);
  EXPECT_DOUBLE_EQ(profile[0].second, 2.0 / 3.0);
  EXPECT_DOUBLE_EQ(profile[2].second, 1.0 / 3.0);
  EXPECT_DOUBLE_EQ(profile[3].second, 0.0);
  EXPECT_THROW(vulnerability_profile(records, {0.5, 0.1}), ConfigError);
  const AttackerBounds b = attacker_bounds(rep);
  EXPECT_DOUBLE_EQ(b.whitebox_surgical, 1.0);
  EXPECT_DOUBLE_EQ(b.blackbox_surgical, 1.0 / 3.0);
  EXPECT_DOUBLE_EQ(b.blind_lower_bound, 1.0 / 96.0);
  EXPECT_DOUBLE_EQ(attacker_bounds(0.4024, true).blind_lower_bound, 0.4024 / 32);
}

TEST(Targeted, MatchesExhaustiveOracleOnToyModel) {
  const Model m = toy_linear_model();
  const Dataset val = labelled(m, 40, 17);
  const Network net(m);
  const std::vector<float> x = testing::toy_target_input();
  Network::Workspace ws = net.make_workspace();
  const auto& scores = net.forward_sample(x.data(), ws);
  const std::size_t pred = kernels::argmax(scores.data(), 3);
  for (std::size_t target = 0; target < 3; ++target) {
    if (target == pred) {
      EXPECT_THROW(targeted_search(m, val, x.data(), target, {}), ConfigError);
      continue;
    }
    TargetedConfig cfg;
    cfg.flips.positions = PositionSet::kAll;
    cfg.rad_budget = 0.05;
    cfg.workers = 3;
    const TargetedResult r = targeted_search(m, val, x.data(), target, cfg);
    const auto flips = plan_flips(m.params, enumerate_parameters(m.params, {}), cfg.flips);
    const auto oracle = testing::targeted_oracle(m, val, x.data(), target, flips, cfg.rad_budget);
    std::vector<BitLocation> got;
    for (const auto& h : r.hits) got.push_back(h.location);
    ASSERT_EQ(got.size(), oracle.size()) << "target " << target;
    for (std::size_t i = 0; i < got.size(); ++i) {
      EXPECT_EQ(got[i].param, oracle[i].param);
      EXPECT_EQ(got[i].position, oracle[i].position);
      EXPECT_EQ(got[i].direction, oracle[i].direction);
    }
    if (target == 1) EXPECT_FALSE(got.empty());
    EXPECT_EQ(r.flips_tried, flips.size());
  }
}

TEST(Transfer, OverlapAndUndefinedCase) {
  const Model teacher = relu_model(3);
  Model student = teacher;
  // Shrink the student's first layer so that its flips cannot do damage.
  for (auto& v : student.params.at("f1.bias").f32) v *= 0.5f;
  const Dataset td = labelled(teacher, 30, 4), sd = labelled(student, 30, 4);
  TransferConfig cfg;
  cfg.tensor_map = {{"f2.weight", "f2.weight"}, {"c1.bias", "c1.bias"}};
  cfg.flips.positions = PositionSet::kPos31;
  const TransferResult r = transfer_overlap(teacher, td, student, sd, cfg);
  ASSERT_EQ(r.tensors.size(), 2u);
  EXPECT_TRUE(r.stores_restored);
  for (const auto& t : r.tensors) {
    EXPECT_LE(t.both_vulnerable, std::min(t.teacher_vulnerable, t.student_vulnerable));
    EXPECT_EQ(t.overlap.has_value(), t.teacher_vulnerable > 0);
  }
  // Identical models overlap completely.
  const TransferResult same = transfer_overlap(teacher, td, teacher, td, cfg);
  ASSERT_TRUE(same.overall.has_value());
  EXPECT_DOUBLE_EQ(*same.overall, 1.0);
  cfg.tensor_map = {{"f2.weight", "f1.weight"}};
  EXPECT_THROW(transfer_overlap(teacher, td, student, sd, cfg), ConfigError);
}

TEST(Report, RecordsCsvRoundTripAndMerge) {
  const Model m = small_model(2);
  const Dataset d = labelled(m, 20, 3);
  SweepConfig cfg;
  cfg.params.tensors = {"f2.weight", "f2.bias"};
  cfg.flips.positions = PositionSet::kExponent;
  const SweepResult r = run_sweep(m, d, cfg);
  const std::string csv = records_csv(r, m.params);
  RecordTable table;
  parse_records_csv(csv, "mem", table);
  const auto records = all_records(r);
  ASSERT_EQ(table.records.size(), records.size());
  for (std::size_t i = 0; i < records.size(); ++i) {
    EXPECT_EQ(table.names[table.records[i].location.param.tensor].name,
              m.params[records[i].location.param.tensor].name);
    EXPECT_EQ(table.records[i].top1, records[i].top1);
    EXPECT_EQ(table.records[i].rad, records[i].rad);
    EXPECT_EQ(std::bit_cast<std::uint32_t>(table.records[i].flipped),
              std::bit_cast<std::uint32_t>(records[i].flipped));
  }
  const VulnerabilityReport direct = characterize(records, m.params);
  const VulnerabilityReport reread = characterize(table.records, table.names);
  EXPECT_EQ(report_json(direct), report_json(reread));

  const fs::path dir = fs::temp_directory_path() / "gracile_report_test";
  fs::create_directories(dir);
  write_text(dir / "a.csv", csv);
  write_text(dir / "b.csv", csv);
  const MergedReport merged = merge_records({(dir / "a.csv").string(), (dir / "b.csv").string()}, 0.1);
  EXPECT_EQ(merged.duplicates, records.size());
  EXPECT_EQ(merged.report.vulnerable_parameters, direct.vulnerable_parameters);
  EXPECT_THROW(merge_records({}, 0.1), ConfigError);
  RecordTable bad;
  EXPECT_THROW(parse_records_csv("nope\n", "x", bad), FormatError);
}

TEST(Report, ProfileIsMonotone) {
  const Model m = small_model(9);
  const Dataset d = labelled(m, 20, 1);
  SweepConfig cfg;
  cfg.params.tensors = {"f1.weight"};
  cfg.flips.positions = PositionSet::kExponent;
  const SweepResult r = run_sweep(m, d, cfg);
  const auto profile = vulnerability_profile(all_records(r), default_threshold_grid());
  for (std::size_t i = 1; i < profile.size(); ++i) EXPECT_LE(profile[i].second, profile[i - 1].second);
}

// ------------------------------------------------------------ CLI

int run_cli(const std::string& args) {
  const std::string cmd = std::string(GRACILE_CLI) + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

TEST(Cli, ExitCodesAndDeterministicReports) {
  const fs::path dir = fs::temp_directory_path() / "gracile_cli_test";
  fs::remove_all(dir);
  fs::create_directories(dir);
  const Model m = small_model(12);
  save_model(m, (dir / "m.nnxf").string());
  save_dataset(labelled(m, 20, 13), (dir / "d.nnxd").string());
  const std::string io = "--model " + (dir / "m.nnxf").string() + " --data " + (dir / "d.nnxd").string();
  const std::string out1 = (dir / "o1").string(), out8 = (dir / "o8").string();
  ASSERT_EQ(run_cli("sweep " + io + " --bits exp --dirs 0to1 --seed 5 --workers 1 --out " + out1), 0);
  ASSERT_EQ(run_cli("sweep " + io + " --bits exp --dirs 0to1 --seed 5 --workers 8 --out " + out8), 0);
  EXPECT_EQ(read_text(out1 + "/report.json"), read_text(out8 + "/report.json"));
  EXPECT_NE(read_text(out1 + "/report.json").find("\"vulnerable_ratio\""), std::string::npos);
  EXPECT_NE(read_text(out1 + "/manifest.json"), read_text(out8 + "/manifest.json"));
  EXPECT_NE(read_text(out8 + "/manifest.json").find("\"workers\": 8"), std::string::npos);

  EXPECT_EQ(run_cli("sweep " + io + " --sample-params 20000 --repeats 5 --out " + out1), 2);
  EXPECT_EQ(run_cli("sweep " + io + " --bits 17 --out " + out1), 2);
  EXPECT_EQ(run_cli("sweep " + io + " --workers 0 --out " + out1), 2);
  EXPECT_EQ(run_cli("sweep --model " + (dir / "missing.nnxf").string() + " --data x --out " + out1), 3);
  write_text(dir / "junk.nnxf", "NNXF garbage");
  EXPECT_EQ(run_cli("sweep --model " + (dir / "junk.nnxf").string() + " --data x --out " + out1), 3);
  EXPECT_EQ(run_cli("report --out " + (dir / "r").string()), 2);
  EXPECT_EQ(run_cli("report --records " + out1 + "/records.csv --records " + out8 + "/records.csv --out " +
                    (dir / "r").string()),
            0);
  EXPECT_EQ(run_cli("mitigate --model " + (dir / "m.nnxf").string() + " --transform clamp --out " +
                    (dir / "c.nnxf").string()),
            2);
  EXPECT_EQ(run_cli("mitigate --model " + (dir / "m.nnxf").string() + " --transform quantize8 --out " +
                    (dir / "q.nnxf").string()),
            0);
  EXPECT_EQ(load_model((dir / "q.nnxf").string()).params[0].dtype, DType::kQuant8);
  EXPECT_EQ(run_cli("rowhammer blind " + io + " --db " + (dir / "none.db").string() + " --out " +
                    (dir / "b").string()),
            3);
  EXPECT_EQ(run_cli("rowhammer blind " + io + " --setup C_1 --rows 500 --experiments 3 --max-attempts 20 --out " +
                    (dir / "b").string()),
            0);
  EXPECT_TRUE(fs::exists(dir / "b" / "blind.json"));
  EXPECT_EQ(run_cli("rowhammer surgical " + io + " --setup A_2 --rows 500 --trials 5 --out " + (dir / "s").string()),
            2);  // no tensor reaches the 1 MiB alignment threshold
  EXPECT_EQ(run_cli("rowhammer surgical " + io +
                    " --setup A_2 --rows 500 --trials 5 --min-aligned-bytes 64 --out " + (dir / "s").string()),
            0);
  EXPECT_EQ(run_cli("nonsense"), 2);
}

}  // namespace
}  // namespace gracile
