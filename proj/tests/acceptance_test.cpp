// Copyright 2026 The Gracile Authors
// SPDX-License-Identifier: Apache-2.0
//
// End-to-end acceptance checks on the committed MNIST fixtures. Several of
// them sweep every bit of a model and take minutes; expensive sweeps are
// computed once and shared between tests. Measured quantities are printed so
// that the test log doubles as a results table.

#include <gtest/gtest.h>

#include <algorithm>
#include <bit>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <map>
#include <memory>
#include <set>
#include <string>
#include <thread>
#include <tuple>
#include <vector>

#include "gracile/bitflip.hpp"
#include "gracile/digest.hpp"
#include "gracile/evaluator.hpp"
#include "gracile/forward.hpp"
#include "gracile/mitigation.hpp"
#include "gracile/model_format.hpp"
#include "gracile/report.hpp"
#include "gracile/rowhammer.hpp"
#include "gracile/sweep.hpp"
#include "test_support.hpp"

namespace gracile {
namespace {

using Clock = std::chrono::steady_clock;
using testing::fixture;

// Workers used by the heavy sweeps. The result does not depend on it.
constexpr std::size_t kWorkers = 8;

double seconds_since(Clock::time_point t) { return std::chrono::duration<double>(Clock::now() - t).count(); }

const Dataset& validation() {
  static const Dataset d = load_dataset(fixture("mnist_val1k.nnxd"));
  return d;
}

const Model& mnist_b() {
  static const Model m = load_model(fixture("mnist_b.nnxf"));
  return m;
}

std::set<ParameterRef> vulnerable_set(const std::vector<SweepRecord>& records, double threshold = 0.1) {
  std::set<ParameterRef> out;
  for (const auto& r : records) {
    if (r.applied && r.rad > threshold) out.insert(r.location.param);
  }
  return out;
}

struct TimedSweep {
  SweepResult result;
  VulnerabilityReport report;
  double seconds = 0.0;
};

TimedSweep timed_sweep(const Model& m, const SweepConfig& cfg) {
  const auto t0 = Clock::now();
  TimedSweep s;
  s.result = run_sweep(m, validation(), cfg);
  s.seconds = seconds_since(t0);
  s.report = characterize(all_records(s.result), m.params, cfg.threshold);
  std::printf("[sweep] %s: %zu flips in %.1f s, pristine %.4f, vulnerable %zu/%zu = %.4f%%\n",
              m.spec.name.c_str(), all_records(s.result).size(), s.seconds, s.result.pristine.accuracy(),
              s.report.vulnerable_parameters, s.report.tested_parameters, 100.0 * s.report.vulnerable_ratio);
  return s;
}

// Every bit of MNIST-B in both directions on the 1,000-sample validation set.
const TimedSweep& exhaustive_b() {
  static const TimedSweep s = [] {
    SweepConfig cfg;
    cfg.workers = kWorkers;
    return timed_sweep(mnist_b(), cfg);
  }();
  return s;
}

// ------------------------------------------------------------ bit flips

TEST(Acceptance, BitFlipExactnessAndXorOracle) {
  const auto r = flip_f32(0.15625f, 31, FlipDirection::kZeroToOne);
  ASSERT_TRUE(r.applied);
  EXPECT_EQ(r.value, std::ldexp(1.25f, 125));

  const auto t0 = Clock::now();
  Rng rng(2026);
  std::size_t mismatches = 0;
  for (std::size_t i = 0; i < 1'000'000; ++i) {
    const auto bits = static_cast<std::uint32_t>(rng());
    const int pos = 1 + static_cast<int>(uniform_below(rng, 32));
    const float v = std::bit_cast<float>(bits);
    const std::uint32_t expect = bits ^ (1u << (pos - 1));
    const auto f = flip_f32(v, pos, FlipDirection::kUnconditional);
    mismatches += !f.applied || std::bit_cast<std::uint32_t>(f.value) != expect;
    const bool set = (bits >> (pos - 1)) & 1u;
    const auto up = flip_f32(v, pos, FlipDirection::kZeroToOne);
    mismatches += up.applied == set || (up.applied && std::bit_cast<std::uint32_t>(up.value) != expect) ||
                  (!up.applied && std::bit_cast<std::uint32_t>(up.value) != bits);
  }
  const double secs = seconds_since(t0);
  std::printf("[bitflip] 1e6 pairs, %zu mismatches, %.3f s\n", mismatches, secs);
  EXPECT_EQ(mismatches, 0u);
  EXPECT_LT(secs, 5.0);
}

// ------------------------------------------------------------ exhaustive sweep

// Vulnerable parameter count of the first exhaustive MNIST-B run, pinned as
// a regression value.
constexpr std::size_t kPinnedMnistBVulnerable = 11192;

TEST(Acceptance, ExhaustiveMnistBSweep) {
  const TimedSweep& s = exhaustive_b();
  EXPECT_TRUE(s.result.store_restored);
  EXPECT_EQ(s.report.tested_parameters, 21840u);
  EXPECT_EQ(s.report.flips_total, 21840u * 32 * 2);
  EXPECT_EQ(s.result.pristine.total, 1000u);
  std::printf("[exhaustive] %.1f s on %zu worker threads (%u hardware threads)\n", s.seconds, kWorkers,
              std::thread::hardware_concurrency());
  EXPECT_LT(s.seconds, 2 * 3600.0);
  EXPECT_GE(s.report.vulnerable_ratio, 0.5024 - 0.05);
  EXPECT_LE(s.report.vulnerable_ratio, 0.5024 + 0.05);
  EXPECT_EQ(s.report.vulnerable_parameters, kPinnedMnistBVulnerable);
}

TEST(Acceptance, ClearingFlipsNeverVulnerable) {
  const TimedSweep& s = exhaustive_b();
  const auto it = s.report.vulnerable_flips_by_direction.find("1to0");
  const std::size_t n = it == s.report.vulnerable_flips_by_direction.end() ? 0 : it->second;
  std::printf("[direction] vulnerable 0to1 flips %zu, 1to0 flips %zu\n", s.report.flips_vulnerable - n, n);
  EXPECT_EQ(n, 0u);
}

TEST(Acceptance, VulnerableFlipsConcentrateInExponent) {
  const TimedSweep& s = exhaustive_b();
  std::size_t exponent = 0, largest_pos = 0, largest = 0;
  for (const auto& [pos, n] : s.report.vulnerable_flips_by_position) {
    if (pos >= 24 && pos <= 31) exponent += n;
    if (n > largest) {
      largest = n;
      largest_pos = static_cast<std::size_t>(pos);
    }
    std::printf("[position] %d: %zu\n", pos, n);
  }
  const double share = static_cast<double>(exponent) / static_cast<double>(s.report.flips_vulnerable);
  std::printf("[position] exponent share %.4f, largest bucket %zu\n", share, largest_pos);
  EXPECT_GE(share, 0.95);
  EXPECT_EQ(largest_pos, 31u);
}

TEST(Acceptance, SignFlipsInInnerLayersAreHarmless) {
  const TimedSweep& s = exhaustive_b();
  const std::size_t last = mnist_b().params.index_of("fc2.weight");
  double worst = 0.0;
  for (const auto& r : all_records(s.result)) {
    if (r.location.position != 32 || !r.applied || r.location.param.tensor >= last) continue;
    worst = std::max(worst, r.rad);
  }
  std::printf("[sign] worst RAD of a sign flip before the final layer: %.4f\n", worst);
  EXPECT_LE(worst, 0.1);
}

TEST(Acceptance, SpecificBitHeuristicRecoversVulnerableSet) {
  const TimedSweep& full = exhaustive_b();
  const std::set<ParameterRef> all = vulnerable_set(all_records(full.result));
  ASSERT_FALSE(all.empty());

  // Position 31 in a fresh sweep; its records must equal the matching
  // subset of the exhaustive sweep, which therefore also stands in for the
  // exponent-only sweep.
  SweepConfig cfg;
  cfg.flips.positions = PositionSet::kPos31;
  cfg.workers = kWorkers;
  const TimedSweep p31 = timed_sweep(mnist_b(), cfg);
  std::vector<SweepRecord> subset31, subset_exp;
  for (const auto& r : all_records(full.result)) {
    if (r.location.position == 31) subset31.push_back(r);
    if (r.location.position >= 24 && r.location.position <= 31) subset_exp.push_back(r);
  }
  const auto fresh = all_records(p31.result);
  ASSERT_EQ(fresh.size(), subset31.size());
  for (std::size_t i = 0; i < fresh.size(); ++i) {
    ASSERT_EQ(fresh[i].location.param, subset31[i].location.param);
    ASSERT_EQ(fresh[i].location.direction, subset31[i].location.direction);
    ASSERT_EQ(fresh[i].top1, subset31[i].top1);
  }
  auto recovered = [&](const std::set<ParameterRef>& found) {
    std::size_t n = 0;
    for (const auto& p : all) n += found.count(p);
    return static_cast<double>(n) / static_cast<double>(all.size());
  };
  const double exp_share = recovered(vulnerable_set(subset_exp));
  const double p31_share = recovered(vulnerable_set(fresh));
  std::printf("[heuristic] exponent-only recovers %.4f, position-31-only recovers %.4f\n", exp_share, p31_share);
  EXPECT_GE(exp_share, 0.95);
  EXPECT_GE(p31_share, 0.80);
}

// ------------------------------------------------------------ sampled sweeps

TEST(Acceptance, SampledParametersAreStable) {
  const Model l5 = load_model(fixture("mnist_l5.nnxf"));
  SweepConfig cfg;
  cfg.params.sample = 2000;
  cfg.params.seed = 0;
  cfg.repeats = 5;
  cfg.workers = kWorkers;
  const TimedSweep s = timed_sweep(l5, cfg);
  double lo = 1.0, hi = 0.0;
  for (const auto& run : s.result.runs) {
    const double r = characterize(run.records, l5.params).vulnerable_ratio;
    std::printf("[sampled] L5 run seed %llu: %.4f%%\n", static_cast<unsigned long long>(run.seed), 100 * r);
    lo = std::min(lo, r);
    hi = std::max(hi, r);
  }
  std::printf("[sampled] L5 spread %.2f points\n", 100 * (hi - lo));
  EXPECT_LE(hi - lo, 0.03);
}

// A 2,000-parameter sample of `m`, every bit in both directions.
TimedSweep sampled(const Model& m, std::size_t n = 2000) {
  SweepConfig cfg;
  cfg.params.sample = n;
  cfg.params.seed = 0;
  cfg.workers = kWorkers;
  return timed_sweep(m, cfg);
}

TEST(Acceptance, PReLUAmplifiesVulnerability) {
  const TimedSweep prelu = sampled(load_model(fixture("mnist_b_prelu.nnxf")));
  const double base = exhaustive_b().report.vulnerable_ratio;
  std::printf("[prelu] %.4f vs %.4f (factor %.3f)\n", prelu.report.vulnerable_ratio, base,
              prelu.report.vulnerable_ratio / base);
  EXPECT_GE(prelu.report.vulnerable_ratio, 1.7 * base);
}

TEST(Acceptance, BoundedActivationsMitigate) {
  const Model relu6 = substitute_activation(mnist_b(), ActivationKind::kReLU6);
  const TimedSweep s = sampled(relu6);
  std::printf("[relu6] accuracy %.4f -> %.4f, vulnerable %.4f%%\n", accuracy(mnist_b(), validation()),
              s.result.pristine.accuracy(), 100 * s.report.vulnerable_ratio);
  for (const auto& [t, n] : s.report.vulnerable_params_by_tensor) std::printf("[relu6]   %s: %zu\n", t.c_str(), n);
  EXPECT_LT(s.report.vulnerable_ratio, 0.05);

  const Model clamp = calibrate_clamp(mnist_b(), validation());
  const TimedSweep c = sampled(clamp);
  std::printf("[clamp] calibrated bounds, vulnerable %.4f%% (reported only)\n", 100 * c.report.vulnerable_ratio);
  const EvalResult before = Network(mnist_b()).evaluate(validation());
  const EvalResult after = Network(clamp).evaluate(validation());
  std::printf("[clamp] calibration accuracy %.4f -> %.4f\n", before.accuracy(), after.accuracy());
  EXPECT_EQ(before.top1, after.top1);
  EXPECT_EQ(before.top5, after.top5);
}

TEST(Acceptance, ReducedPrecisionMitigates) {
  const Model q8 = quantize8(load_model(fixture("mnist_l5.nnxf")));
  const TimedSweep q = sampled(q8, 5000);
  std::printf("[quantized] L5 8-bit vulnerable %.4f%%\n", 100 * q.report.vulnerable_ratio);
  EXPECT_LE(q.report.vulnerable_ratio, 0.01);

  const Model bin = binarize(load_model(fixture("mnist_l5_xnor.nnxf")));
  SweepConfig cfg;
  cfg.workers = kWorkers;
  const TimedSweep b = timed_sweep(bin, cfg);
  std::printf("[binarized] L5 XNOR vulnerable %.4f%%\n", 100 * b.report.vulnerable_ratio);
  for (const auto& [t, n] : b.report.vulnerable_params_by_tensor) std::printf("[binarized]   %s: %zu\n", t.c_str(), n);
  EXPECT_LE(b.report.vulnerable_ratio, 0.02);
  const std::set<std::string> allowed{"conv1.weight", "conv1.bias", "fc3.weight", "fc3.bias"};
  for (const auto& [t, n] : b.report.vulnerable_params_by_tensor) {
    EXPECT_TRUE(allowed.count(t)) << t << " has " << n << " vulnerable parameters";
  }
}

// ------------------------------------------------------------ rowhammer

// `rows` rows of which round(p * rows) flip offset 0 bit 6 from 0 to 1; the
// rest flip other cells.
FlipTemplateDb hit_probability_db(double p, std::size_t rows, std::uint64_t seed) {
  FlipTemplateDb db;
  db.rows.resize(rows);
  const auto hits = static_cast<std::size_t>(std::llround(p * static_cast<double>(rows)));
  Rng rng(seed);
  const auto chosen = sample_without_replacement(rows, hits, rng);
  std::vector<bool> hit(rows, false);
  for (auto i : chosen) hit[i] = true;
  for (std::size_t r = 0; r < rows; ++r) {
    db.rows[r].row = r;
    db.rows[r].flips.push_back({static_cast<std::uint16_t>(1 + uniform_below(rng, 4095)),
                                static_cast<std::uint8_t>(uniform_below(rng, 8)), FlipDirection::kZeroToOne});
    if (hit[r]) db.rows[r].flips.push_back({0, 6, FlipDirection::kZeroToOne});
  }
  return db;
}

TEST(Acceptance, SurgicalAttemptsFollowGeometricLaw) {
  VulnerableTemplates templates;
  templates.add(0, 6, FlipDirection::kZeroToOne);
  for (double p : {0.25, 0.015, 0.002}) {
    const FlipTemplateDb db = hit_probability_db(p, 100000, 7);
    double sum = 0.0;
    for (std::uint64_t seed = 0; seed < 1000; ++seed) {
      const SurgicalResult r = surgical_search(db, templates, seed);
      ASSERT_TRUE(r.found);
      ASSERT_EQ(r.attempts, surgical_search(db, templates, seed).attempts);
      sum += static_cast<double>(r.attempts);
    }
    const double mean = sum / 1000.0;
    std::printf("[surgical] p=%.3f mean attempts %.2f (1/p = %.1f)\n", p, mean, 1.0 / p);
    EXPECT_NEAR(mean, 1.0 / p, 0.1 / p);
  }
}

TEST(Acceptance, SurgicalOnFixtureAcrossSetups) {
  // MNIST-B has no tensor of 1 MiB; the alignment threshold is lowered to
  // let fc1.weight (64,000 bytes) be attacked. Reported, not asserted.
  const TimedSweep& full = exhaustive_b();
  std::vector<BitLocation> vulnerable;
  for (const auto& r : all_records(full.result)) {
    if (r.applied && r.rad > 0.1) vulnerable.push_back(r.location);
  }
  LayoutConfig lc;
  lc.min_aligned_bytes = 64000;
  const MemoryLayout layout = build_layout(mnist_b().params, lc);
  const VulnerableTemplates templates = vulnerable_templates(layout, mnist_b().params, vulnerable);
  std::printf("[surgical] MNIST-B fc1.weight vulnerable templates: %zu\n", templates.size());
  ASSERT_GT(templates.size(), 0u);
  for (const auto& setup : hammertime_setups()) {
    const FlipTemplateDb db = generate_setup_db(setup.name, setup_db_seed(0, setup.name));
    std::vector<SurgicalResult> trials;
    for (std::uint64_t t = 0; t < 100; ++t) trials.push_back(surgical_search(db, templates, derive_seed(0, 1000 + t)));
    const AttemptStats st = summarize_attempts(trials);
    std::printf("[surgical]   %s: found %zu/100, attempts min/median/max %zu/%.1f/%zu\n", setup.name, st.found,
                st.min, st.median, st.max);
  }
}

TEST(Acceptance, BlindCampaignOutcomes) {
  const Network net(mnist_b());
  const IncrementalEvaluator ev(net, validation());
  LayoutConfig lc;
  lc.seed = layout_seed(0);
  const MemoryLayout layout = build_layout(mnist_b().params, lc);
  BlindConfig bc;
  bc.workers = kWorkers;
  std::map<std::string, CampaignResult> results;
  std::size_t crashes = 0, experiments = 0;
  const auto t0 = Clock::now();
  for (const auto& setup : hammertime_setups()) {
    const FlipTemplateDb db = generate_setup_db(setup.name, setup_db_seed(0, setup.name));
    CampaignResult c = blind_campaign(db, layout, mnist_b(), ev, bc);
    std::printf("[blind] %s (%zu 0to1 flips): corrupted %zu, crash %zu, timeout %zu, median RAD %.4f\n", setup.name,
                setup.zero_to_one, c.corrupted, c.crashes, c.timeouts, c.median_rad());
    for (const auto& x : c.experiments) EXPECT_TRUE(x.conservation_ok);
    crashes += c.crashes;
    experiments += c.experiments.size();
    results.emplace(setup.name, std::move(c));
  }
  std::printf("[blind] %zu crashes over %zu experiments, %.1f s\n", crashes, experiments, seconds_since(t0));
  const CampaignResult& a2 = results.at("A_2");
  EXPECT_GE(a2.corrupted, 20u);
  EXPECT_GT(a2.median_rad(), 0.1);
  const CampaignResult& c1 = results.at("C_1");
  EXPECT_LE(c1.corrupted, 5u);
  EXPECT_GT(c1.timeouts, c1.corrupted + c1.crashes);
  EXPECT_EQ(experiments, 300u);
  EXPECT_LE(crashes, 15u);
}

// ------------------------------------------------------------ determinism

TEST(Acceptance, RestorationAndWorkerIndependentReports) {
  EXPECT_TRUE(exhaustive_b().result.store_restored);
  const Model pristine = load_model(fixture("mnist_b.nnxf"));
  EXPECT_EQ(serialize_model(mnist_b()), serialize_model(pristine));

  SweepConfig cfg;
  cfg.flips.positions = PositionSet::kPos31;
  cfg.workers = 1;
  const SweepResult one = run_sweep(mnist_b(), validation(), cfg);
  cfg.workers = 8;
  const SweepResult eight = run_sweep(mnist_b(), validation(), cfg);
  EXPECT_TRUE(one.store_restored);
  EXPECT_TRUE(eight.store_restored);
  const std::string h1 = sha256_hex(sweep_report(one, mnist_b().params, cfg).json);
  const std::string h8 = sha256_hex(sweep_report(eight, mnist_b().params, cfg).json);
  std::printf("[determinism] report sha256 1 worker %s\n[determinism] report sha256 8 workers %s\n", h1.c_str(),
              h8.c_str());
  EXPECT_EQ(h1, h8);
}

// ------------------------------------------------------------ targeted

TEST(Acceptance, TargetedSearchMatchesOracleAndFindsFixtureFlips) {
  {
    const Model toy = testing::toy_linear_model();
    const Dataset val =
        testing::self_labelled(toy, testing::random_dataset(toy.spec.input_shape, 3, 40, 17));
    const std::vector<float> x = testing::toy_target_input();
    TargetedConfig cfg;
    cfg.flips.positions = PositionSet::kAll;
    const TargetedResult r = targeted_search(toy, val, x.data(), 1, cfg);
    const auto flips = plan_flips(toy.params, enumerate_parameters(toy.params, {}), cfg.flips);
    const auto oracle = testing::targeted_oracle(toy, val, x.data(), 1, flips, cfg.rad_budget);
    std::set<std::tuple<ParameterRef, int, int>> got, want;
    for (const auto& h : r.hits) {
      got.insert({h.location.param, h.location.position, static_cast<int>(h.location.direction)});
    }
    for (const auto& l : oracle) want.insert({l.param, l.position, static_cast<int>(l.direction)});
    std::printf("[targeted] toy model: %zu hits, oracle %zu\n", got.size(), want.size());
    EXPECT_EQ(got, want);
    EXPECT_FALSE(got.empty());
  }
  const Dataset& val = validation();
  const Network net(mnist_b());
  Network::Workspace ws = net.make_workspace();
  std::size_t target = val.size();
  for (std::size_t i = 0; i < val.size() && target == val.size(); ++i) {
    if (val.labels[i] != 4) continue;
    const auto& s = net.forward_sample(val.sample(i), ws);
    if (kernels::argmax(s.data(), s.size()) == 4) target = i;
  }
  ASSERT_LT(target, val.size());
  TargetedConfig cfg;
  cfg.workers = kWorkers;
  const auto t0 = Clock::now();
  const TargetedResult r = targeted_search(mnist_b(), val, val.sample(target), 6, cfg);
  std::printf("[targeted] MNIST-B sample %zu 4->6: %zu flips tried, %zu move the target, %zu within RAD<0.05 "
              "(%zu parameters), %.1f s\n",
              target, r.flips_tried, r.flips_moving_target, r.hits.size(), r.distinct_parameters,
              seconds_since(t0));
  EXPECT_FALSE(r.hits.empty());
  for (const auto& h : r.hits) EXPECT_LT(h.rad, 0.05);

  // How the outcome varies with the choice of target sample; reported only.
  std::size_t candidates = 0, reachable = 0;
  for (std::size_t i = 0; i < val.size(); ++i) {
    if (val.labels[i] != 4) continue;
    const auto& s = net.forward_sample(val.sample(i), ws);
    if (kernels::argmax(s.data(), s.size()) != 4) continue;
    ++candidates;
    reachable += !targeted_search(mnist_b(), val, val.sample(i), 6, cfg).hits.empty();
  }
  std::printf("[targeted] MNIST-B 4->6 reachable for %zu of %zu correctly classified class-4 samples\n", reachable,
              candidates);
}

}  // namespace
}  // namespace gracile
