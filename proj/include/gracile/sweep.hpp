// Copyright 2026 The Gracile Authors
// SPDX-License-Identifier: Apache-2.0
//
// Bit-flip sweeps: flip one bit, measure the accuracy drop, restore, repeat.
// Relative accuracy drop (RAD) is (acc_pristine - acc_corrupted) / acc_pristine
// and a parameter is vulnerable when some flip in it drives RAD strictly above
// the threshold.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "gracile/bitflip.hpp"
#include "gracile/errors.hpp"
#include "gracile/evaluator.hpp"
#include "gracile/forward.hpp"
#include "gracile/model.hpp"
#include "gracile/model_format.hpp"
#include "gracile/parallel.hpp"
#include "gracile/rng.hpp"

namespace gracile {

inline constexpr double kDefaultRadThreshold = 0.1;

inline double rad(double acc_pristine, double acc_corrupted) {
  if (!(acc_pristine > 0.0)) throw ConfigError("RAD is undefined when the pristine accuracy is 0");
  return (acc_pristine - acc_corrupted) / acc_pristine;
}

// RAD from correct counts over the same sample set.
inline double rad_counts(std::size_t pristine_correct, std::size_t corrupted_correct) {
  if (pristine_correct == 0) throw ConfigError("RAD is undefined when the pristine accuracy is 0");
  return (static_cast<double>(pristine_correct) - static_cast<double>(corrupted_correct)) /
         static_cast<double>(pristine_correct);
}

// Which float32 bit positions a sweep visits. Quantized tensors always use
// their 8 bits and binarized tensors their single sign bit.
enum class PositionSet { kAll, kExponent, kPos31 };

inline const char* to_string(PositionSet s) {
  switch (s) {
    case PositionSet::kAll: return "all";
    case PositionSet::kExponent: return "exponent";
    case PositionSet::kPos31: return "pos31";
  }
  return "unknown";
}

inline PositionSet parse_position_set(const std::string& text) {
  if (text == "all") return PositionSet::kAll;
  if (text == "exponent" || text == "exp") return PositionSet::kExponent;
  if (text == "pos31" || text == "31") return PositionSet::kPos31;
  throw ConfigError("unknown bit set '" + text + "' (expected all, exp or 31)");
}

inline std::vector<int> positions_for(DType dtype, PositionSet set) {
  std::vector<int> out;
  switch (dtype) {
    case DType::kF32:
      if (set == PositionSet::kAll) {
        for (int p = 1; p <= 32; ++p) out.push_back(p);
      } else if (set == PositionSet::kExponent) {
        for (int p = 24; p <= 31; ++p) out.push_back(p);
      } else {
        out.push_back(31);
      }
      break;
    case DType::kQuant8:
      for (int p = 1; p <= 8; ++p) out.push_back(p);
      break;
    case DType::kBinary:
      out.push_back(1);
      break;
  }
  return out;
}

// Candidate flips for a set of parameter elements.
struct FlipPlan {
  PositionSet positions = PositionSet::kAll;
  std::vector<FlipDirection> directions{FlipDirection::kZeroToOne, FlipDirection::kOneToZero};
};

inline std::vector<BitLocation> plan_flips(const ParameterStore& store, const std::vector<ParameterRef>& refs,
                                           const FlipPlan& plan) {
  if (plan.directions.empty()) throw ConfigError("a sweep needs at least one flip direction");
  std::vector<BitLocation> out;
  for (const ParameterRef& ref : refs) {
    for (int pos : positions_for(store[ref.tensor].dtype, plan.positions)) {
      for (FlipDirection d : plan.directions) out.push_back({ref, pos, d});
    }
  }
  return out;
}

// Validation subset: a seeded per-class sample of `fraction` of each class
// (at least one sample per non-empty class), returned in dataset order.
inline std::vector<std::size_t> per_class_sample(const Dataset& data, double fraction, std::uint64_t seed) {
  if (!(fraction > 0.0 && fraction <= 1.0)) {
    throw ConfigError("validation fraction must be in (0, 1], got " + std::to_string(fraction));
  }
  std::vector<std::vector<std::size_t>> by_class(data.num_classes);
  for (std::size_t i = 0; i < data.size(); ++i) by_class[data.labels[i]].push_back(i);
  std::vector<std::size_t> out;
  for (std::size_t c = 0; c < by_class.size(); ++c) {
    const auto& members = by_class[c];
    if (members.empty()) continue;
    const auto k = std::max<std::size_t>(
        1, static_cast<std::size_t>(std::llround(fraction * static_cast<double>(members.size()))));
    Rng rng(derive_seed(seed, c));
    for (std::size_t j : sample_without_replacement(members.size(), k, rng)) out.push_back(members[j]);
  }
  std::sort(out.begin(), out.end());
  return out;
}

struct SweepConfig {
  FlipPlan flips;
  ParameterFilter params;              // params.sample enables parameter sampling
  std::size_t repeats = 1;             // independent parameter samples
  std::optional<double> val_fraction;  // per-class validation sampling
  std::uint64_t val_seed = 0;
  double threshold = kDefaultRadThreshold;
  std::size_t workers = 1;
};

struct SweepRecord {
  BitLocation location;
  bool applied = false;
  float original = 0.0f;
  float flipped = 0.0f;
  std::uint32_t top1 = 0;  // correct count after the flip (pristine when not applied)
  std::uint32_t top5 = 0;
  double rad = 0.0;        // top-1 RAD
  double rad_top5 = 0.0;
};

// One parameter sample and every flip tried in it.
struct SweepRun {
  std::uint64_t seed = 0;
  std::vector<ParameterRef> params;
  std::vector<SweepRecord> records;
  std::vector<std::uint32_t> per_class;  // records.size() x num_classes correct counts
};

struct SweepResult {
  std::string model_name;
  std::size_t num_classes = 0;
  std::vector<std::size_t> validation;  // dataset indices evaluated
  EvalResult pristine;
  std::vector<SweepRun> runs;
  bool store_restored = true;
  double threshold = kDefaultRadThreshold;
};

// Evaluates every flip in `flips` against `ev`, writing into pre-sized slots.
// Each worker mutates its own copy of the store and restores it after every
// flip; returns whether every copy ended bit-identical to `store`.
inline bool evaluate_flips(const ParameterStore& store, const IncrementalEvaluator& ev,
                           const std::vector<BitLocation>& flips, std::size_t workers, std::vector<SweepRecord>& out,
                           std::vector<std::uint32_t>* per_class) {
  const std::size_t classes = ev.network().num_classes();
  out.assign(flips.size(), {});
  if (per_class) per_class->assign(flips.size() * classes, 0);
  const std::size_t pristine1 = ev.pristine().top1, pristine5 = ev.pristine().top5;
  std::vector<ParameterStore> copies(workers, store);
  std::vector<IncrementalEvaluator::Scratch> scratch;
  for (std::size_t w = 0; w < workers; ++w) scratch.push_back(ev.make_scratch());
  parallel_for(
      flips.size(), workers,
      [&](std::size_t w, std::size_t i) {
        const BitLocation& loc = flips[i];
        SweepRecord& rec = out[i];
        rec.location = loc;
        const FlipRecord fr = apply_flip(copies[w], loc);
        rec.applied = fr.applied;
        rec.original = fr.old_value;
        rec.flipped = fr.new_value;
        EvalResult r;
        if (fr.applied) {
          const Override o{loc.param.tensor, loc.param.element, fr.new_value};
          r = ev.evaluate(std::span<const Override>(&o, 1), scratch[w]);
          revert(copies[w], fr);
        } else {
          r = ev.pristine();
        }
        rec.top1 = static_cast<std::uint32_t>(r.top1);
        rec.top5 = static_cast<std::uint32_t>(r.top5);
        rec.rad = pristine1 ? rad_counts(pristine1, r.top1) : 0.0;
        rec.rad_top5 = pristine5 ? rad_counts(pristine5, r.top5) : 0.0;
        if (per_class) std::copy(r.per_class_correct.begin(), r.per_class_correct.end(), per_class->begin() + i * classes);
      },
      16);
  bool restored = true;
  for (const auto& c : copies) restored = restored && (c == store);
  return restored;
}

inline SweepResult run_sweep(const Model& model, const Dataset& data, const SweepConfig& cfg) {
  if (cfg.repeats == 0) throw ConfigError("repeats must be at least 1");
  if (cfg.repeats > 1 && !cfg.params.sample) throw ConfigError("repeats need a parameter sample size");
  const Network net(model);
  net.check_dataset(data);
  SweepResult result;
  result.model_name = model.spec.name;
  result.num_classes = model.spec.num_classes;
  result.threshold = cfg.threshold;
  Dataset subset;
  const Dataset* val = &data;
  if (cfg.val_fraction) {
    result.validation = per_class_sample(data, *cfg.val_fraction, cfg.val_seed);
    subset = data.subset(result.validation);
    val = &subset;
  } else {
    result.validation.resize(data.size());
    for (std::size_t i = 0; i < data.size(); ++i) result.validation[i] = i;
  }
  const IncrementalEvaluator ev(net, *val);
  result.pristine = ev.pristine();
  if (result.pristine.top1 == 0) throw ConfigError("pristine accuracy is 0; RAD is undefined");
  for (std::size_t r = 0; r < cfg.repeats; ++r) {
    SweepRun run;
    ParameterFilter filter = cfg.params;
    run.seed = cfg.repeats > 1 ? derive_seed(cfg.params.seed, r) : cfg.params.seed;
    filter.seed = run.seed;
    run.params = enumerate_parameters(model.params, filter);
    const std::vector<BitLocation> flips = plan_flips(model.params, run.params, cfg.flips);
    result.store_restored =
        evaluate_flips(model.params, ev, flips, cfg.workers, run.records, &run.per_class) && result.store_restored;
    result.runs.push_back(std::move(run));
  }
  return result;
}

// Aggregate view of a set of sweep records at one threshold.
struct VulnerabilityReport {
  double threshold = kDefaultRadThreshold;
  std::size_t tested_parameters = 0;
  std::size_t vulnerable_parameters = 0;
  double vulnerable_ratio = 0.0;
  std::size_t flips_total = 0;
  std::size_t flips_applied = 0;
  std::size_t flips_vulnerable = 0;
  std::map<int, std::size_t> vulnerable_flips_by_position;
  std::map<std::string, std::size_t> vulnerable_flips_by_direction;
  std::map<std::string, std::size_t> vulnerable_flips_by_sign;  // sign of the original value
  std::map<std::string, std::size_t> vulnerable_params_by_tensor;
  std::map<std::string, std::size_t> tested_params_by_tensor;
  // Parameters made vulnerable by a flip at a given position.
  std::map<int, std::size_t> vulnerable_params_by_position;
};

inline VulnerabilityReport characterize(const std::vector<SweepRecord>& records, const ParameterStore& store,
                                        double threshold = kDefaultRadThreshold) {
  VulnerabilityReport rep;
  rep.threshold = threshold;
  std::set<ParameterRef> tested, vulnerable;
  std::set<std::pair<int, ParameterRef>> by_position;
  for (const SweepRecord& r : records) {
    tested.insert(r.location.param);
    rep.flips_total++;
    if (r.applied) rep.flips_applied++;
    if (!(r.applied && r.rad > threshold)) continue;
    rep.flips_vulnerable++;
    rep.vulnerable_flips_by_position[r.location.position]++;
    rep.vulnerable_flips_by_direction[to_string(r.location.direction)]++;
    rep.vulnerable_flips_by_sign[std::signbit(r.original) ? "negative" : "positive"]++;
    vulnerable.insert(r.location.param);
    by_position.insert({r.location.position, r.location.param});
  }
  for (const auto& ref : tested) rep.tested_params_by_tensor[store[ref.tensor].name]++;
  for (const auto& ref : vulnerable) rep.vulnerable_params_by_tensor[store[ref.tensor].name]++;
  for (const auto& [pos, ref] : by_position) rep.vulnerable_params_by_position[pos]++;
  rep.tested_parameters = tested.size();
  rep.vulnerable_parameters = vulnerable.size();
  rep.vulnerable_ratio =
      tested.empty() ? 0.0 : static_cast<double>(vulnerable.size()) / static_cast<double>(tested.size());
  return rep;
}

// Vulnerable ratio at each threshold of an ascending grid.
inline std::vector<std::pair<double, double>> vulnerability_profile(const std::vector<SweepRecord>& records,
                                                                    const std::vector<double>& thresholds) {
  if (!std::is_sorted(thresholds.begin(), thresholds.end())) {
    throw ConfigError("threshold grid must be sorted ascending");
  }
  std::map<ParameterRef, double> worst;
  for (const SweepRecord& r : records) {
    auto [it, inserted] = worst.emplace(r.location.param, r.applied ? r.rad : 0.0);
    if (!inserted && r.applied) it->second = std::max(it->second, r.rad);
  }
  std::vector<std::pair<double, double>> out;
  for (double t : thresholds) {
    std::size_t n = 0;
    for (const auto& [ref, v] : worst) n += v > t ? 1 : 0;
    out.emplace_back(t, worst.empty() ? 0.0 : static_cast<double>(n) / static_cast<double>(worst.size()));
  }
  return out;
}

// Success-rate bounds for three attacker models, derived from a sweep.
struct AttackerBounds {
  double whitebox_surgical = 0.0;  // 1 when any vulnerable bit exists
  double blackbox_surgical = 0.0;  // share of parameters vulnerable through position 31
  double blind_lower_bound = 0.0;  // blackbox rate divided by bits per parameter
};

inline AttackerBounds attacker_bounds(double pos31_ratio, bool any_vulnerable, int bits_per_param = 32) {
  if (bits_per_param < 1) throw ConfigError("bits per parameter must be positive");
  AttackerBounds b;
  b.whitebox_surgical = any_vulnerable ? 1.0 : 0.0;
  b.blackbox_surgical = pos31_ratio;
  b.blind_lower_bound = pos31_ratio / bits_per_param;
  return b;
}

inline AttackerBounds attacker_bounds(const VulnerabilityReport& rep, int bits_per_param = 32) {
  const auto it = rep.vulnerable_params_by_position.find(31);
  const double pos31 = (it == rep.vulnerable_params_by_position.end() || rep.tested_parameters == 0)
                           ? 0.0
                           : static_cast<double>(it->second) / static_cast<double>(rep.tested_parameters);
  return attacker_bounds(pos31, rep.vulnerable_parameters > 0, bits_per_param);
}

// Single flips that make one target input classify as `target_class` while
// keeping validation RAD strictly under a budget.
struct TargetedConfig {
  FlipPlan flips{PositionSet::kExponent, {FlipDirection::kZeroToOne, FlipDirection::kOneToZero}};
  ParameterFilter params;
  double rad_budget = 0.05;
  std::size_t workers = 1;
};

struct TargetedHit {
  BitLocation location;
  float original = 0.0f;
  float flipped = 0.0f;
  double rad = 0.0;
};

struct TargetedResult {
  std::vector<TargetedHit> hits;
  std::size_t flips_tried = 0;
  std::size_t flips_moving_target = 0;
  std::size_t distinct_parameters = 0;
};

inline TargetedResult targeted_search(const Model& model, const Dataset& validation, const float* target_input,
                                      std::size_t target_class, const TargetedConfig& cfg) {
  const Network net(model);
  if (target_class >= net.num_classes()) {
    throw ConfigError("target class " + std::to_string(target_class) + " outside the model's classes");
  }
  Dataset target;
  target.sample_shape = model.spec.input_shape;
  target.num_classes = model.spec.num_classes;
  target.data.assign(target_input, target_input + net.input_size());
  target.labels = {static_cast<std::uint16_t>(target_class)};
  const IncrementalEvaluator target_ev(net, target);
  if (target_ev.pristine().top1 != 0) {
    throw ConfigError("the target input is already classified as class " + std::to_string(target_class));
  }
  const IncrementalEvaluator val_ev(net, validation);
  if (val_ev.pristine().top1 == 0) throw ConfigError("pristine validation accuracy is 0; RAD is undefined");
  const std::vector<ParameterRef> refs = enumerate_parameters(model.params, cfg.params);
  const std::vector<BitLocation> flips = plan_flips(model.params, refs, cfg.flips);
  struct Slot {
    bool moved = false;
    bool hit = false;
    TargetedHit value;
  };
  std::vector<Slot> slots(flips.size());
  std::vector<IncrementalEvaluator::Scratch> ts, vs;
  for (std::size_t w = 0; w < cfg.workers; ++w) {
    ts.push_back(target_ev.make_scratch());
    vs.push_back(val_ev.make_scratch());
  }
  parallel_for(
      flips.size(), cfg.workers,
      [&](std::size_t w, std::size_t i) {
        const auto fv = flipped_value(model.params, flips[i]);
        if (!fv.applied) return;
        const Override o{flips[i].param.tensor, flips[i].param.element, fv.value};
        const std::span<const Override> ov(&o, 1);
        if (target_ev.evaluate(ov, ts[w]).top1 != 1) return;
        slots[i].moved = true;
        const double r = rad_counts(val_ev.pristine().top1, val_ev.evaluate(ov, vs[w]).top1);
        if (r < cfg.rad_budget) {
          slots[i].hit = true;
          slots[i].value = {flips[i], model.params[flips[i].param.tensor].value(flips[i].param.element), fv.value, r};
        }
      },
      64);
  TargetedResult out;
  out.flips_tried = flips.size();
  std::set<ParameterRef> params;
  for (const Slot& s : slots) {
    if (s.moved) out.flips_moving_target++;
    if (s.hit) {
      out.hits.push_back(s.value);
      params.insert(s.value.location.param);
    }
  }
  out.distinct_parameters = params.size();
  return out;
}

// Overlap of vulnerable parameters between a teacher model and a student that
// shares (or re-trains) some of its layers.
struct TransferConfig {
  std::vector<std::pair<std::string, std::string>> tensor_map;  // teacher name -> student name
  std::size_t samples_per_tensor = 0;                            // 0 tests every element
  std::uint64_t seed = 0;
  FlipPlan flips{PositionSet::kAll, {FlipDirection::kZeroToOne, FlipDirection::kOneToZero}};
  double threshold = kDefaultRadThreshold;
  std::size_t workers = 1;
};

struct TransferTensorResult {
  std::string teacher_tensor;
  std::string student_tensor;
  std::size_t tested = 0;
  std::size_t teacher_vulnerable = 0;
  std::size_t student_vulnerable = 0;
  std::size_t both_vulnerable = 0;
  std::optional<double> overlap;  // both / teacher; undefined without teacher-vulnerable parameters
};

struct TransferResult {
  std::vector<TransferTensorResult> tensors;
  std::optional<double> overall;
  bool stores_restored = true;
};

inline TransferResult transfer_overlap(const Model& teacher, const Dataset& teacher_data, const Model& student,
                                       const Dataset& student_data, const TransferConfig& cfg) {
  const Network tnet(teacher), snet(student);
  const IncrementalEvaluator tev(tnet, teacher_data), sev(snet, student_data);
  if (tev.pristine().top1 == 0 || sev.pristine().top1 == 0) {
    throw ConfigError("pristine accuracy is 0; RAD is undefined");
  }
  TransferResult out;
  std::size_t all_teacher = 0, all_both = 0;
  for (std::size_t m = 0; m < cfg.tensor_map.size(); ++m) {
    const auto& [tname, sname] = cfg.tensor_map[m];
    const std::size_t ti = teacher.params.index_of(tname), si = student.params.index_of(sname);
    const Parameter &tp = teacher.params[ti], &sp = student.params[si];
    if (tp.shape != sp.shape || tp.dtype != sp.dtype) {
      throw ConfigError("tensor '" + tname + "' and '" + sname + "' differ in shape or dtype");
    }
    ParameterFilter tf;
    tf.tensors = {tname};
    if (cfg.samples_per_tensor && cfg.samples_per_tensor < tp.size()) {
      tf.sample = cfg.samples_per_tensor;
      tf.seed = derive_seed(cfg.seed, m);
    }
    const std::vector<ParameterRef> trefs = enumerate_parameters(teacher.params, tf);
    std::vector<ParameterRef> srefs;
    for (const auto& r : trefs) srefs.push_back({si, r.element});
    const auto tflips = plan_flips(teacher.params, trefs, cfg.flips);
    const auto sflips = plan_flips(student.params, srefs, cfg.flips);
    std::vector<SweepRecord> trec, srec;
    out.stores_restored = evaluate_flips(teacher.params, tev, tflips, cfg.workers, trec, nullptr) && out.stores_restored;
    out.stores_restored = evaluate_flips(student.params, sev, sflips, cfg.workers, srec, nullptr) && out.stores_restored;
    TransferTensorResult tr;
    tr.teacher_tensor = tname;
    tr.student_tensor = sname;
    tr.tested = trefs.size();
    const std::size_t per = trefs.empty() ? 0 : tflips.size() / trefs.size();
    for (std::size_t k = 0; k < trefs.size(); ++k) {
      bool tv = false, sv = false;
      for (std::size_t j = k * per; j < (k + 1) * per; ++j) {
        tv = tv || (trec[j].applied && trec[j].rad > cfg.threshold);
        sv = sv || (srec[j].applied && srec[j].rad > cfg.threshold);
      }
      tr.teacher_vulnerable += tv;
      tr.student_vulnerable += sv;
      tr.both_vulnerable += tv && sv;
    }
    if (tr.teacher_vulnerable) {
      tr.overlap = static_cast<double>(tr.both_vulnerable) / static_cast<double>(tr.teacher_vulnerable);
    }
    all_teacher += tr.teacher_vulnerable;
    all_both += tr.both_vulnerable;
    out.tensors.push_back(tr);
  }
  if (all_teacher) out.overall = static_cast<double>(all_both) / static_cast<double>(all_teacher);
  return out;
}

}  // namespace gracile
