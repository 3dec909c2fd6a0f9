// Copyright 2026 The Gracile Authors
// SPDX-License-Identifier: Apache-2.0
//
// JSON and CSV serialization of sweep and campaign results, plus the run
// manifest written beside every set of outputs.
//
// Reports hold only quantities determined by the inputs and the seed. Worker
// counts and timings go to the manifest, so two runs that differ only in
// parallelism produce byte-identical reports.

#pragma once

#include <nlohmann/json.hpp>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "gracile/digest.hpp"
#include "gracile/errors.hpp"
#include "gracile/model.hpp"
#include "gracile/rowhammer.hpp"
#include "gracile/sweep.hpp"

namespace gracile {

inline constexpr const char* kToolVersion = "0.1.0";

using Json = nlohmann::json;

// Shortest decimal text that reads back to the same float.
inline std::string format_float(float v) {
  if (std::isnan(v)) return std::signbit(v) ? "-nan" : "nan";
  char buf[32];
  for (int prec = 6; prec <= 9; ++prec) {
    std::snprintf(buf, sizeof buf, "%.*g", prec, static_cast<double>(v));
    if (std::strtof(buf, nullptr) == v) break;
  }
  return buf;
}

inline std::string format_double(double v) {
  if (std::isnan(v)) return "nan";
  char buf[40];
  for (int prec = 15; prec <= 17; ++prec) {
    std::snprintf(buf, sizeof buf, "%.*g", prec, v);
    if (std::strtod(buf, nullptr) == v) break;
  }
  return buf;
}

inline std::string hex32(std::uint32_t v) {
  char buf[11];
  std::snprintf(buf, sizeof buf, "0x%08x", v);
  return buf;
}

inline std::uint32_t raw_bits(const Parameter& p, std::size_t i) {
  switch (p.dtype) {
    case DType::kF32: return std::bit_cast<std::uint32_t>(p.f32[i]);
    case DType::kQuant8: return p.q8[i];
    case DType::kBinary: return p.bin[i] < 0 ? 1u : 0u;
  }
  return 0;
}

// JSON cannot hold NaN or infinities; they are written as strings.
inline Json json_number(double v) {
  if (std::isfinite(v)) return v;
  return format_double(v);
}

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError(FormatErrorKind::kIo, "cannot write '" + path.string() + "'");
  out << text;
  if (!out) throw FormatError(FormatErrorKind::kIo, "write to '" + path.string() + "' failed");
}

inline std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError(FormatErrorKind::kIo, "cannot open '" + path.string() + "'");
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

// ------------------------------------------------------------ records

inline constexpr const char* kRecordsHeader =
    "run,tensor,element,position,direction,applied,original,flipped,original_bits,top1,top5,rad,rad_top5";

// One line per evaluated flip, in run order then plan order.
inline std::string records_csv(const SweepResult& result, const ParameterStore& store) {
  std::string out = std::string(kRecordsHeader) + "\n";
  for (std::size_t r = 0; r < result.runs.size(); ++r) {
    for (const SweepRecord& rec : result.runs[r].records) {
      const Parameter& p = store[rec.location.param.tensor];
      out += std::to_string(r) + ',' + p.name + ',' + std::to_string(rec.location.param.element) + ',' +
             std::to_string(rec.location.position) + ',' + to_string(rec.location.direction) + ',' +
             (rec.applied ? "1" : "0") + ',' + format_float(rec.original) + ',' + format_float(rec.flipped) + ',' +
             hex32(raw_bits(p, rec.location.param.element)) + ',' + std::to_string(rec.top1) + ',' +
             std::to_string(rec.top5) + ',' + format_double(rec.rad) + ',' + format_double(rec.rad_top5) + '\n';
    }
  }
  return out;
}

// Records read back from one or more records CSV files. Tensor names are
// interned in order of first appearance and stand in for a parameter store.
struct RecordTable {
  ParameterStore names;
  std::vector<std::size_t> run;
  std::vector<SweepRecord> records;
};

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> cells;
  std::string cell;
  std::istringstream s(line);
  while (std::getline(s, cell, ',')) cells.push_back(cell);
  if (!line.empty() && line.back() == ',') cells.emplace_back();
  return cells;
}

inline void parse_records_csv(const std::string& text, const std::string& what, RecordTable& table) {
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  auto fail = [&](const std::string& why) {
    throw FormatError(FormatErrorKind::kMalformedText, what + ":" + std::to_string(line_no) + ": " + why);
  };
  auto to_u64 = [&](const std::string& s) -> std::uint64_t {
    try {
      std::size_t used = 0;
      const auto v = std::stoull(s, &used);
      if (used != s.size()) fail("bad integer '" + s + "'");
      return v;
    } catch (const std::logic_error&) {
      fail("bad integer '" + s + "'");
    }
    return 0;
  };
  auto to_double = [&](const std::string& s) -> double {
    try {
      std::size_t used = 0;
      const double v = std::stod(s, &used);
      if (used != s.size()) fail("bad number '" + s + "'");
      return v;
    } catch (const std::out_of_range&) {
      return std::strtod(s.c_str(), nullptr);
    } catch (const std::invalid_argument&) {
      fail("bad number '" + s + "'");
    }
    return 0;
  };
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line_no == 1) {
      if (line != kRecordsHeader) fail("not a sweep records file");
      continue;
    }
    if (line.empty()) continue;
    const auto c = split_csv_line(line);
    if (c.size() != 13) fail("expected 13 columns, got " + std::to_string(c.size()));
    if (!table.names.find(c[1])) {
      Parameter p;
      p.name = c[1];
      table.names.add(std::move(p));
    }
    SweepRecord r;
    r.location.param = {table.names.index_of(c[1]), static_cast<std::size_t>(to_u64(c[2]))};
    r.location.position = static_cast<int>(to_u64(c[3]));
    try {
      r.location.direction = parse_direction(c[4]);
    } catch (const ConfigError&) {
      fail("bad direction '" + c[4] + "'");
    }
    if (c[5] != "0" && c[5] != "1") fail("applied must be 0 or 1");
    r.applied = c[5] == "1";
    r.original = static_cast<float>(to_double(c[6]));
    r.flipped = static_cast<float>(to_double(c[7]));
    r.top1 = static_cast<std::uint32_t>(to_u64(c[9]));
    r.top5 = static_cast<std::uint32_t>(to_u64(c[10]));
    r.rad = to_double(c[11]);
    r.rad_top5 = to_double(c[12]);
    table.run.push_back(static_cast<std::size_t>(to_u64(c[0])));
    table.records.push_back(r);
  }
  if (line_no == 0) fail("empty file");
}

// ------------------------------------------------------------ facets

inline Json report_json(const VulnerabilityReport& rep) {
  Json j;
  j["threshold"] = rep.threshold;
  j["tested_parameters"] = rep.tested_parameters;
  j["vulnerable_parameters"] = rep.vulnerable_parameters;
  j["vulnerable_ratio"] = rep.vulnerable_ratio;
  j["flips_total"] = rep.flips_total;
  j["flips_applied"] = rep.flips_applied;
  j["flips_vulnerable"] = rep.flips_vulnerable;
  Json pos = Json::object(), ppos = Json::object();
  for (const auto& [k, v] : rep.vulnerable_flips_by_position) pos[std::to_string(k)] = v;
  for (const auto& [k, v] : rep.vulnerable_params_by_position) ppos[std::to_string(k)] = v;
  j["vulnerable_flips_by_position"] = pos;
  j["vulnerable_params_by_position"] = ppos;
  j["vulnerable_flips_by_direction"] = rep.vulnerable_flips_by_direction;
  j["vulnerable_flips_by_sign"] = rep.vulnerable_flips_by_sign;
  Json tensors = Json::object();
  for (const auto& [name, tested] : rep.tested_params_by_tensor) {
    const auto it = rep.vulnerable_params_by_tensor.find(name);
    const std::size_t v = it == rep.vulnerable_params_by_tensor.end() ? 0 : it->second;
    tensors[name] = {{"tested", tested}, {"vulnerable", v}};
  }
  j["tensors"] = tensors;
  return j;
}

inline std::vector<double> default_threshold_grid() {
  std::vector<double> g;
  for (int i = 1; i <= 19; ++i) g.push_back(i * 0.05);
  return g;
}

inline std::string position_csv(const VulnerabilityReport& rep) {
  std::string out = "position,vulnerable_flips,vulnerable_params\n";
  for (int p = 32; p >= 1; --p) {
    const auto f = rep.vulnerable_flips_by_position.find(p);
    const auto q = rep.vulnerable_params_by_position.find(p);
    out += std::to_string(p) + ',' +
           std::to_string(f == rep.vulnerable_flips_by_position.end() ? 0 : f->second) + ',' +
           std::to_string(q == rep.vulnerable_params_by_position.end() ? 0 : q->second) + '\n';
  }
  return out;
}

inline std::string direction_csv(const VulnerabilityReport& rep) {
  std::string out = "direction,vulnerable_flips\n";
  for (const char* d : {"0to1", "1to0", "any"}) {
    const auto it = rep.vulnerable_flips_by_direction.find(d);
    if (std::string(d) == "any" && it == rep.vulnerable_flips_by_direction.end()) continue;
    out += std::string(d) + ',' + std::to_string(it == rep.vulnerable_flips_by_direction.end() ? 0 : it->second) +
           '\n';
  }
  return out;
}

inline std::string sign_csv(const VulnerabilityReport& rep) {
  std::string out = "sign,vulnerable_flips\n";
  for (const char* s : {"positive", "negative"}) {
    const auto it = rep.vulnerable_flips_by_sign.find(s);
    out += std::string(s) + ',' + std::to_string(it == rep.vulnerable_flips_by_sign.end() ? 0 : it->second) + '\n';
  }
  return out;
}

inline std::string tensor_csv(const VulnerabilityReport& rep, const ParameterStore& order) {
  std::string out = "tensor,tested_params,vulnerable_params,vulnerable_ratio\n";
  for (const Parameter& p : order) {
    const auto t = rep.tested_params_by_tensor.find(p.name);
    if (t == rep.tested_params_by_tensor.end()) continue;
    const auto v = rep.vulnerable_params_by_tensor.find(p.name);
    const std::size_t nv = v == rep.vulnerable_params_by_tensor.end() ? 0 : v->second;
    out += p.name + ',' + std::to_string(t->second) + ',' + std::to_string(nv) + ',' +
           format_double(static_cast<double>(nv) / static_cast<double>(t->second)) + '\n';
  }
  return out;
}

inline std::string profile_csv(const std::vector<std::pair<double, double>>& profile) {
  std::string out = "threshold,vulnerable_ratio\n";
  for (const auto& [t, r] : profile) out += format_double(t) + ',' + format_double(r) + '\n';
  return out;
}

// Mean per-class accuracy over applied flips, split by whether the flip was
// vulnerable. Shows which classes absorb the damage.
inline std::string per_class_csv(const SweepResult& result) {
  const std::size_t k = result.num_classes;
  std::vector<double> all(k, 0.0), vuln(k, 0.0);
  std::size_t n_all = 0, n_vuln = 0;
  for (const SweepRun& run : result.runs) {
    for (std::size_t i = 0; i < run.records.size(); ++i) {
      const SweepRecord& r = run.records[i];
      if (!r.applied) continue;
      const bool v = r.rad > result.threshold;
      ++n_all;
      n_vuln += v;
      for (std::size_t c = 0; c < k; ++c) {
        const double total = result.pristine.per_class_total[c];
        const double acc = total ? run.per_class[i * k + c] / total : 0.0;
        all[c] += acc;
        if (v) vuln[c] += acc;
      }
    }
  }
  std::string out = "class,samples,pristine_accuracy,mean_accuracy_applied,mean_accuracy_vulnerable\n";
  for (std::size_t c = 0; c < k; ++c) {
    const double total = result.pristine.per_class_total[c];
    out += std::to_string(c) + ',' + std::to_string(result.pristine.per_class_total[c]) + ',' +
           format_double(total ? result.pristine.per_class_correct[c] / total : 0.0) + ',' +
           (n_all ? format_double(all[c] / n_all) : std::string("")) + ',' +
           (n_vuln ? format_double(vuln[c] / n_vuln) : std::string("")) + '\n';
  }
  return out;
}

// ------------------------------------------------------------ sweep report

struct SweepReportFiles {
  std::string json;
  std::map<std::string, std::string> csv;  // file name -> contents
};

inline Json sweep_config_json(const SweepConfig& cfg) {
  Json j;
  j["positions"] = to_string(cfg.flips.positions);
  std::vector<std::string> dirs;
  for (auto d : cfg.flips.directions) dirs.push_back(to_string(d));
  j["directions"] = dirs;
  j["tensors"] = cfg.params.tensors;
  j["min_tensor_bytes"] = cfg.params.min_tensor_bytes;
  j["sample_params"] = cfg.params.sample ? Json(*cfg.params.sample) : Json(nullptr);
  j["param_seed"] = cfg.params.seed;
  j["repeats"] = cfg.repeats;
  j["val_fraction"] = cfg.val_fraction ? Json(*cfg.val_fraction) : Json(nullptr);
  j["val_seed"] = cfg.val_seed;
  j["threshold"] = cfg.threshold;
  return j;
}

inline std::vector<SweepRecord> all_records(const SweepResult& result) {
  std::vector<SweepRecord> out;
  for (const auto& run : result.runs) out.insert(out.end(), run.records.begin(), run.records.end());
  return out;
}

inline SweepReportFiles sweep_report(const SweepResult& result, const ParameterStore& store,
                                     const SweepConfig& cfg) {
  SweepReportFiles files;
  const std::vector<SweepRecord> records = all_records(result);
  const VulnerabilityReport overall = characterize(records, store, result.threshold);
  const auto profile = vulnerability_profile(records, default_threshold_grid());
  files.csv["records.csv"] = records_csv(result, store);
  files.csv["by_position.csv"] = position_csv(overall);
  files.csv["by_direction.csv"] = direction_csv(overall);
  files.csv["by_sign.csv"] = sign_csv(overall);
  files.csv["by_tensor.csv"] = tensor_csv(overall, store);
  files.csv["profile.csv"] = profile_csv(profile);
  files.csv["per_class.csv"] = per_class_csv(result);

  Json j;
  j["kind"] = "sweep";
  j["tool_version"] = kToolVersion;
  j["model"] = result.model_name;
  j["num_classes"] = result.num_classes;
  j["metric"] = "top1";
  j["config"] = sweep_config_json(cfg);
  j["validation_samples"] = result.validation.size();
  j["pristine"] = {{"total", result.pristine.total},
                   {"top1", result.pristine.top1},
                   {"top5", result.pristine.top5},
                   {"accuracy", result.pristine.accuracy()},
                   {"top5_accuracy", result.pristine.top5_accuracy()}};
  Json runs = Json::array();
  double lo = 1.0, hi = 0.0, sum = 0.0;
  for (const SweepRun& run : result.runs) {
    const VulnerabilityReport rep = characterize(run.records, store, result.threshold);
    runs.push_back({{"seed", run.seed},
                    {"tested_parameters", rep.tested_parameters},
                    {"vulnerable_parameters", rep.vulnerable_parameters},
                    {"vulnerable_ratio", rep.vulnerable_ratio}});
    lo = std::min(lo, rep.vulnerable_ratio);
    hi = std::max(hi, rep.vulnerable_ratio);
    sum += rep.vulnerable_ratio;
  }
  j["runs"] = runs;
  j["vulnerable_ratio_mean"] = result.runs.empty() ? 0.0 : sum / static_cast<double>(result.runs.size());
  j["vulnerable_ratio_spread"] = result.runs.empty() ? 0.0 : hi - lo;
  j["summary"] = report_json(overall);
  j["vulnerable_ratio"] = overall.vulnerable_ratio;
  const AttackerBounds b = attacker_bounds(overall);
  j["attacker_bounds"] = {{"whitebox_surgical", b.whitebox_surgical},
                          {"blackbox_surgical", b.blackbox_surgical},
                          {"blind_lower_bound", b.blind_lower_bound}};
  Json prof = Json::array();
  for (const auto& [t, r] : profile) prof.push_back({t, r});
  j["profile"] = prof;
  j["store_restored"] = result.store_restored;
  Json hashes = Json::object();
  for (const auto& [name, text] : files.csv) hashes[name] = sha256_hex(text);
  j["csv_sha256"] = hashes;
  files.json = j.dump(2) + "\n";
  return files;
}

// Aggregate of one or more records files: the vulnerable set is the union
// of parameters with any tested flip above the threshold. A flip listed in
// more than one file must agree everywhere it appears.
struct MergedReport {
  RecordTable table;
  std::size_t duplicates = 0;
  VulnerabilityReport report;
};

inline MergedReport merge_records(const std::vector<std::string>& paths, double threshold) {
  if (paths.empty()) throw ConfigError("no records files given");
  MergedReport out;
  RecordTable raw;
  for (const auto& p : paths) parse_records_csv(read_text(p), p, raw);
  out.table.names = raw.names;
  std::map<std::pair<ParameterRef, std::pair<int, int>>, std::size_t> seen;
  for (std::size_t i = 0; i < raw.records.size(); ++i) {
    const SweepRecord& r = raw.records[i];
    const auto key = std::make_pair(r.location.param,
                                    std::make_pair(r.location.position, static_cast<int>(r.location.direction)));
    const auto it = seen.find(key);
    if (it != seen.end()) {
      const SweepRecord& prev = out.table.records[it->second];
      if (prev.applied != r.applied || prev.top1 != r.top1 || prev.top5 != r.top5) {
        throw ConfigError("records disagree for " + raw.names[r.location.param.tensor].name + "[" +
                          std::to_string(r.location.param.element) + "] position " +
                          std::to_string(r.location.position));
      }
      ++out.duplicates;
      continue;
    }
    seen.emplace(key, out.table.records.size());
    out.table.records.push_back(r);
    out.table.run.push_back(raw.run[i]);
  }
  out.report = characterize(out.table.records, out.table.names, threshold);
  return out;
}

// ------------------------------------------------------------ campaigns

struct SurgicalSetupResult {
  std::string setup;
  std::vector<SurgicalResult> trials;
};

inline Json surgical_json(const std::vector<SurgicalSetupResult>& setups, std::size_t templates) {
  Json j;
  j["kind"] = "surgical";
  j["tool_version"] = kToolVersion;
  j["seconds_per_row"] = kSecondsPerRow;
  j["vulnerable_templates"] = templates;
  Json arr = Json::array();
  std::vector<double> medians;
  for (const auto& s : setups) {
    const AttemptStats st = summarize_attempts(s.trials);
    Json e = {{"setup", s.setup}, {"trials", s.trials.size()}, {"found", st.found}};
    if (st.found) {
      e["attempts"] = {{"min", st.min}, {"median", st.median}, {"max", st.max}, {"mean", st.mean}};
      e["seconds"] = {{"min", st.min * kSecondsPerRow},
                      {"median", st.median * kSecondsPerRow},
                      {"max", st.max * kSecondsPerRow}};
      medians.push_back(st.median);
    }
    arr.push_back(e);
  }
  j["setups"] = arr;
  if (!medians.empty()) {
    std::sort(medians.begin(), medians.end());
    const std::size_t n = medians.size();
    j["median_attempts_across_setups"] = {
        {"min", medians.front()},
        {"median", n % 2 ? medians[n / 2] : 0.5 * (medians[n / 2 - 1] + medians[n / 2])},
        {"max", medians.back()}};
  }
  return j;
}

inline std::string surgical_csv(const std::vector<SurgicalSetupResult>& setups) {
  std::string out = "setup,trial,found,attempts,seconds,row,offset,bit,direction\n";
  for (const auto& s : setups) {
    for (std::size_t t = 0; t < s.trials.size(); ++t) {
      const SurgicalResult& r = s.trials[t];
      out += s.setup + ',' + std::to_string(t) + ',' + (r.found ? "1" : "0") + ',' + std::to_string(r.attempts) +
             ',' + format_double(r.seconds()) + ',';
      out += r.found ? std::to_string(r.row) + ',' + std::to_string(r.flip.offset) + ',' +
                           std::to_string(r.flip.bit) + ',' + to_string(r.flip.direction)
                     : std::string(",,,");
      out += '\n';
    }
  }
  return out;
}

inline const char* to_string(RegionKind r) {
  switch (r) {
    case RegionKind::kParameter: return "parameter";
    case RegionKind::kSlack: return "slack";
    case RegionKind::kOther: return "other";
  }
  return "unknown";
}

inline Json blind_json(const std::vector<CampaignResult>& campaigns, const MemoryLayout& layout,
                       const BlindConfig& cfg) {
  Json j;
  j["kind"] = "blind";
  j["tool_version"] = kToolVersion;
  j["experiments_per_setup"] = cfg.experiments;
  j["max_attempts"] = cfg.attempts;
  j["threshold"] = cfg.threshold;
  j["crash_probability"] = cfg.crash_probability;
  j["seed"] = cfg.seed;
  j["seconds_per_row"] = kSecondsPerRow;
  j["layout"] = {{"parameter_pages", layout.param_pages},
                 {"other_pages", layout.other_pages},
                 {"parameter_bytes", layout.parameter_bytes()}};
  Json arr = Json::array();
  std::size_t corrupted = 0, crashes = 0, timeouts = 0;
  for (const auto& c : campaigns) {
    Json e = {{"setup", c.setup},
              {"model_corrupted", c.corrupted},
              {"crash", c.crashes},
              {"timeout", c.timeouts},
              {"median_rad", c.median_rad()}};
    Json xs = Json::array();
    for (const auto& x : c.experiments) {
      xs.push_back({{"index", x.index},
                    {"seed", x.seed},
                    {"outcome", to_string(x.outcome)},
                    {"attempts", x.attempts},
                    {"landed_flips", x.flips.size()},
                    {"applied_flips", x.applied_flips},
                    {"rad_top1", x.rad_top1},
                    {"rad_top5", x.rad_top5},
                    {"conservation_ok", x.conservation_ok}});
    }
    e["experiments"] = xs;
    arr.push_back(e);
    corrupted += c.corrupted;
    crashes += c.crashes;
    timeouts += c.timeouts;
  }
  j["setups"] = arr;
  j["totals"] = {{"model_corrupted", corrupted}, {"crash", crashes}, {"timeout", timeouts}};
  return j;
}

inline std::string blind_experiments_csv(const std::vector<CampaignResult>& campaigns) {
  std::string out = "setup,experiment,outcome,attempts,landed_flips,applied_flips,rad_top1,rad_top5\n";
  for (const auto& c : campaigns) {
    for (const auto& x : c.experiments) {
      out += c.setup + ',' + std::to_string(x.index) + ',' + to_string(x.outcome) + ',' +
             std::to_string(x.attempts) + ',' + std::to_string(x.flips.size()) + ',' +
             std::to_string(x.applied_flips) + ',' + format_double(x.rad_top1) + ',' + format_double(x.rad_top5) +
             '\n';
    }
  }
  return out;
}

inline std::string blind_flips_csv(const std::vector<CampaignResult>& campaigns, const ParameterStore& store) {
  std::string out =
      "setup,experiment,attempt,page,offset,bit,direction,region,tensor,element,position,applied,crashed\n";
  for (const auto& c : campaigns) {
    for (const auto& x : c.experiments) {
      for (const auto& f : x.flips) {
        out += c.setup + ',' + std::to_string(x.index) + ',' + std::to_string(f.attempt) + ',' +
               std::to_string(f.page) + ',' + std::to_string(f.flip.offset) + ',' + std::to_string(f.flip.bit) +
               ',' + to_string(f.flip.direction) + ',' + to_string(f.region) + ',';
        if (f.location) {
          out += store[f.location->param.tensor].name + ',' + std::to_string(f.location->param.element) + ',' +
                 std::to_string(f.location->position);
        } else {
          out += ",,";
        }
        out += std::string(",") + (f.applied ? "1" : "0") + ',' + (f.crashed ? "1" : "0") + '\n';
      }
    }
  }
  return out;
}

// ------------------------------------------------------------ manifest

struct RunManifest {
  std::vector<std::string> command;
  Json config = Json::object();
  Json seeds = Json::object();
  std::map<std::string, std::string> inputs;   // path -> sha256
  std::map<std::string, std::string> outputs;  // file name -> sha256
  std::size_t workers = 1;
  double wall_seconds = 0.0;

  Json to_json() const {
    return {{"command", command},          {"config", config},        {"seeds", seeds},
            {"input_sha256", inputs},      {"output_sha256", outputs}, {"tool_version", kToolVersion},
            {"workers", workers},          {"wall_seconds", wall_seconds}};
  }
};

}  // namespace gracile
