// Copyright 2026 The Gracile Authors
// SPDX-License-Identifier: Apache-2.0
//
// Command-line front end.
//
//   gracile sweep      single-bit flip sweeps and vulnerability reports
//   gracile rowhammer  surgical and blind attack simulation, template DBs
//   gracile mitigate   activation substitution, quantization, binarization
//   gracile report     merges sweep records into aggregate tables
//
// Exit codes: 0 success, 2 configuration error, 3 malformed or unreadable
// input file, 1 anything else.

#include <CLI11.hpp>

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "gracile/errors.hpp"
#include "gracile/mitigation.hpp"
#include "gracile/model_format.hpp"
#include "gracile/parallel.hpp"
#include "gracile/report.hpp"
#include "gracile/rng.hpp"
#include "gracile/rowhammer.hpp"
#include "gracile/sweep.hpp"

namespace fs = std::filesystem;
using namespace gracile;

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitFormat = 3;

using Clock = std::chrono::steady_clock;

struct Common {
  std::optional<long long> workers;
  std::uint64_t seed = 0;
  std::vector<std::string> argv;
  Clock::time_point start = Clock::now();
};

std::vector<FlipDirection> parse_directions(const std::string& text) {
  std::vector<FlipDirection> out;
  std::string item;
  std::istringstream s(text);
  while (std::getline(s, item, ',')) out.push_back(parse_direction(item));
  if (out.empty()) throw ConfigError("no flip directions given");
  return out;
}

std::vector<std::string> split_list(const std::string& text) {
  std::vector<std::string> out;
  std::string item;
  std::istringstream s(text);
  while (std::getline(s, item, ',')) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

// Writes every output, then the manifest listing their digests.
void write_outputs(const fs::path& dir, const std::map<std::string, std::string>& files, RunManifest manifest,
                   const Common& common) {
  for (const auto& [name, text] : files) {
    write_text(dir / name, text);
    manifest.outputs[name] = sha256_hex(text);
  }
  manifest.command = common.argv;
  manifest.wall_seconds = std::chrono::duration<double>(Clock::now() - common.start).count();
  write_text(dir / "manifest.json", manifest.to_json().dump(2) + "\n");
}

// ------------------------------------------------------------ sweep

struct SweepArgs {
  std::string model, data, out;
  std::string bits = "all";
  std::string dirs = "0to1,1to0";
  std::string tensors;
  std::size_t min_tensor_bytes = 0;
  std::optional<std::size_t> sample_params;
  std::size_t repeats = 1;
  std::optional<double> val_fraction;
  double threshold = kDefaultRadThreshold;
};

int run_sweep_command(const SweepArgs& a, const Common& common) {
  const Model model = load_model(a.model);
  const Dataset data = load_dataset(a.data);
  SweepConfig cfg;
  cfg.flips.positions = parse_position_set(a.bits);
  cfg.flips.directions = parse_directions(a.dirs);
  cfg.params.tensors = split_list(a.tensors);
  cfg.params.min_tensor_bytes = a.min_tensor_bytes;
  cfg.params.sample = a.sample_params;
  cfg.params.seed = common.seed;
  cfg.repeats = a.repeats;
  cfg.val_fraction = a.val_fraction;
  cfg.val_seed = derive_seed(common.seed, 1);
  cfg.threshold = a.threshold;
  cfg.workers = resolve_workers(common.workers);
  if (a.sample_params && *a.sample_params > model.params.total_elements()) {
    throw ConfigError("--sample-params " + std::to_string(*a.sample_params) + " exceeds the model's " +
                      std::to_string(model.params.total_elements()) + " parameters");
  }
  const SweepResult result = run_sweep(model, data, cfg);
  if (!result.store_restored) throw Error("parameter store was not restored after the sweep");
  const SweepReportFiles rep = sweep_report(result, model.params, cfg);
  std::map<std::string, std::string> files = rep.csv;
  files["report.json"] = rep.json;
  RunManifest m;
  m.config = sweep_config_json(cfg);
  m.seeds = {{"seed", common.seed}, {"param_seed", cfg.params.seed}, {"val_seed", cfg.val_seed}};
  m.inputs = {{a.model, sha256_file(a.model)}, {a.data, sha256_file(a.data)}};
  m.workers = cfg.workers;
  write_outputs(a.out, files, m, common);
  const VulnerabilityReport overall = characterize(all_records(result), model.params, cfg.threshold);
  std::cout << "model " << result.model_name << ": pristine accuracy " << result.pristine.accuracy() << ", "
            << overall.vulnerable_parameters << "/" << overall.tested_parameters << " parameters vulnerable ("
            << 100.0 * overall.vulnerable_ratio << "%)\n";
  return 0;
}

// ------------------------------------------------------------ rowhammer

struct RowhammerArgs {
  std::string mode;
  std::string model, data, out;
  std::vector<std::string> setups;
  std::vector<std::string> dbs;
  std::size_t rows = kDefaultSyntheticRows;
  std::string records;
  std::size_t trials = 1000;
  std::size_t experiments = 25;
  std::size_t attempts = 300;
  double crash_probability = kDefaultCrashProbability;
  double other_fraction = 0.25;
  std::size_t min_aligned_bytes = std::size_t{1} << 20;
  double threshold = kDefaultRadThreshold;
  std::optional<double> val_fraction;
};

std::vector<FlipTemplateDb> collect_dbs(const RowhammerArgs& a, const Common& common,
                                        std::map<std::string, std::string>& inputs) {
  std::vector<FlipTemplateDb> dbs;
  for (const auto& path : a.dbs) {
    dbs.push_back(load_template_db(path));
    if (dbs.back().setup.empty()) dbs.back().setup = fs::path(path).stem().string();
    inputs[path] = sha256_file(path);
  }
  std::vector<std::string> names;
  for (const auto& s : a.setups) {
    if (s == "all") {
      for (const auto& h : hammertime_setups()) names.push_back(h.name);
    } else {
      names.push_back(s);
    }
  }
  for (const auto& n : names) dbs.push_back(generate_setup_db(n, setup_db_seed(common.seed, n), a.rows));
  if (dbs.empty()) throw ConfigError("give at least one --db file or --setup name");
  return dbs;
}

int run_rowhammer_command(const RowhammerArgs& a, const Common& common) {
  RunManifest m;
  std::map<std::string, std::string> files;
  m.seeds = {{"seed", common.seed}};
  if (a.mode == "gen-db") {
    const auto dbs = collect_dbs(a, common, m.inputs);
    for (const auto& db : dbs) {
      std::ostringstream s;
      write_template_db(db, s);
      files[db.setup + ".db"] = s.str();
    }
    m.config = {{"rows", a.rows}, {"setups", a.setups}};
    write_outputs(a.out, files, m, common);
    return 0;
  }
  if (a.model.empty()) throw ConfigError("--model is required for " + a.mode);
  const Model model = load_model(a.model);
  m.inputs[a.model] = sha256_file(a.model);
  LayoutConfig lc;
  lc.min_aligned_bytes = a.min_aligned_bytes;
  lc.other_fraction = a.other_fraction;
  lc.seed = layout_seed(common.seed);
  const MemoryLayout layout = build_layout(model.params, lc);
  const auto dbs = collect_dbs(a, common, m.inputs);
  const std::size_t workers = resolve_workers(common.workers);
  m.workers = workers;
  m.seeds["layout_seed"] = lc.seed;
  m.config = {{"mode", a.mode},
              {"rows", a.rows},
              {"setups", a.setups},
              {"min_aligned_bytes", a.min_aligned_bytes},
              {"other_fraction", a.other_fraction},
              {"threshold", a.threshold}};

  if (a.mode == "surgical") {
    std::vector<BitLocation> vulnerable;
    if (!a.records.empty()) {
      RecordTable table;
      parse_records_csv(read_text(a.records), a.records, table);
      m.inputs[a.records] = sha256_file(a.records);
      for (const SweepRecord& r : table.records) {
        if (!r.applied || !(r.rad > a.threshold)) continue;
        BitLocation loc = r.location;
        loc.param.tensor = model.params.index_of(table.names[r.location.param.tensor].name);
        vulnerable.push_back(loc);
      }
    } else {
      if (a.data.empty()) throw ConfigError("surgical mode needs --records or --data");
      const Dataset data = load_dataset(a.data);
      m.inputs[a.data] = sha256_file(a.data);
      SweepConfig cfg;
      cfg.flips.positions = PositionSet::kPos31;
      cfg.flips.directions = {FlipDirection::kZeroToOne};
      cfg.params.min_tensor_bytes = a.min_aligned_bytes;
      cfg.val_fraction = a.val_fraction;
      cfg.val_seed = derive_seed(common.seed, 1);
      cfg.threshold = a.threshold;
      cfg.workers = workers;
      const SweepResult sr = run_sweep(model, data, cfg);
      for (const SweepRecord& r : all_records(sr)) {
        if (r.applied && r.rad > a.threshold) vulnerable.push_back(r.location);
      }
    }
    const VulnerableTemplates templates = vulnerable_templates(layout, model.params, vulnerable);
    if (templates.size() == 0) {
      throw ConfigError("no vulnerable 0to1 bit lies in a tensor of at least " + std::to_string(a.min_aligned_bytes) +
                        " bytes; lower --min-aligned-bytes to attack smaller tensors");
    }
    std::vector<SurgicalSetupResult> results;
    for (const auto& db : dbs) {
      SurgicalSetupResult r;
      r.setup = db.setup;
      r.trials.resize(a.trials);
      parallel_for(a.trials, workers, [&](std::size_t, std::size_t t) {
        r.trials[t] = surgical_search(db, templates, derive_seed(common.seed, 1000 + t));
      });
      results.push_back(std::move(r));
    }
    m.config["trials"] = a.trials;
    files["surgical.json"] = surgical_json(results, templates.size()).dump(2) + "\n";
    files["surgical.csv"] = surgical_csv(results);
    write_outputs(a.out, files, m, common);
    for (const auto& r : results) {
      const AttemptStats s = summarize_attempts(r.trials);
      std::cout << r.setup << ": found " << s.found << "/" << r.trials.size();
      if (s.found) {
        std::cout << ", attempts min/median/max " << s.min << "/" << s.median << "/" << s.max << " (median "
                  << s.median * kSecondsPerRow << " s)";
      }
      std::cout << '\n';
    }
    return 0;
  }

  if (a.mode == "blind") {
    if (a.data.empty()) throw ConfigError("blind mode needs --data");
    const Dataset data = load_dataset(a.data);
    m.inputs[a.data] = sha256_file(a.data);
    Dataset val = data;
    if (a.val_fraction) val = data.subset(per_class_sample(data, *a.val_fraction, derive_seed(common.seed, 1)));
    const Network net(model);
    const IncrementalEvaluator ev(net, val);
    BlindConfig bc;
    bc.experiments = a.experiments;
    bc.attempts = a.attempts;
    bc.threshold = a.threshold;
    bc.crash_probability = a.crash_probability;
    bc.seed = common.seed;
    bc.workers = workers;
    std::vector<CampaignResult> campaigns;
    for (const auto& db : dbs) campaigns.push_back(blind_campaign(db, layout, model, ev, bc));
    m.config["experiments"] = a.experiments;
    m.config["max_attempts"] = a.attempts;
    m.config["crash_probability"] = a.crash_probability;
    files["blind.json"] = blind_json(campaigns, layout, bc).dump(2) + "\n";
    files["blind_experiments.csv"] = blind_experiments_csv(campaigns);
    files["blind_flips.csv"] = blind_flips_csv(campaigns, model.params);
    write_outputs(a.out, files, m, common);
    for (const auto& c : campaigns) {
      std::cout << c.setup << ": corrupted " << c.corrupted << ", crash " << c.crashes << ", timeout " << c.timeouts
                << ", median RAD " << c.median_rad() << '\n';
    }
    return 0;
  }
  throw ConfigError("unknown rowhammer mode '" + a.mode + "'");
}

// ------------------------------------------------------------ mitigate

struct MitigateArgs {
  std::string model, out, transform, calibration;
};

int run_mitigate_command(const MitigateArgs& a, const Common& common) {
  const Model model = load_model(a.model);
  RunManifest m;
  m.inputs[a.model] = sha256_file(a.model);
  Model result;
  if (a.transform == "relu6") {
    result = substitute_activation(model, ActivationKind::kReLU6);
  } else if (a.transform == "relu") {
    result = substitute_activation(model, ActivationKind::kReLU);
  } else if (a.transform == "clamp") {
    if (a.calibration.empty()) throw ConfigError("the clamp transform needs --calibration data");
    const Dataset calib = load_dataset(a.calibration);
    m.inputs[a.calibration] = sha256_file(a.calibration);
    result = calibrate_clamp(model, calib);
  } else if (a.transform == "quantize8") {
    result = quantize8(model);
  } else if (a.transform == "binarize") {
    result = binarize(model);
  } else {
    throw ConfigError("unknown transform '" + a.transform + "'");
  }
  if (fs::exists(a.out) && fs::equivalent(a.out, a.model)) throw ConfigError("refusing to overwrite the input model");
  const std::vector<std::uint8_t> bytes = serialize_model(result);
  const std::string text(bytes.begin(), bytes.end());
  const fs::path out(a.out);
  write_text(out, text);
  m.outputs[out.filename().string()] = sha256_hex(text);
  m.command = common.argv;
  m.config = {{"transform", a.transform}};
  m.wall_seconds = std::chrono::duration<double>(Clock::now() - common.start).count();
  write_text(out.string() + ".manifest.json", m.to_json().dump(2) + "\n");
  std::cout << "wrote " << a.out << '\n';
  return 0;
}

// ------------------------------------------------------------ report

struct ReportArgs {
  std::vector<std::string> records;
  std::string out;
  double threshold = kDefaultRadThreshold;
};

int run_report_command(const ReportArgs& a, const Common& common) {
  if (a.records.empty()) throw ConfigError("no records files given");
  const MergedReport merged = merge_records(a.records, a.threshold);
  if (merged.table.records.empty()) throw ConfigError("the records files hold no flips");
  RunManifest m;
  for (const auto& p : a.records) m.inputs[p] = sha256_file(p);
  m.config = {{"threshold", a.threshold}};
  std::map<std::string, std::string> files;
  files["by_position.csv"] = position_csv(merged.report);
  files["by_direction.csv"] = direction_csv(merged.report);
  files["by_sign.csv"] = sign_csv(merged.report);
  files["by_tensor.csv"] = tensor_csv(merged.report, merged.table.names);
  files["profile.csv"] = profile_csv(vulnerability_profile(merged.table.records, default_threshold_grid()));
  Json j;
  j["kind"] = "merged";
  j["tool_version"] = kToolVersion;
  j["sources"] = a.records.size();
  j["records"] = merged.table.records.size();
  j["duplicates"] = merged.duplicates;
  j["summary"] = report_json(merged.report);
  j["vulnerable_ratio"] = merged.report.vulnerable_ratio;
  const AttackerBounds b = attacker_bounds(merged.report);
  j["attacker_bounds"] = {{"whitebox_surgical", b.whitebox_surgical},
                          {"blackbox_surgical", b.blackbox_surgical},
                          {"blind_lower_bound", b.blind_lower_bound}};
  files["report.json"] = j.dump(2) + "\n";
  write_outputs(a.out, files, m, common);
  std::cout << merged.report.vulnerable_parameters << "/" << merged.report.tested_parameters
            << " parameters vulnerable\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  Common common;
  common.argv.assign(argv, argv + argc);
  CLI::App app{"Single-bit fault injection and Rowhammer simulation for neural networks"};
  app.require_subcommand(1);
  app.set_version_flag("--version", kToolVersion);
  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--workers", common.workers, "Worker threads (default: GRACILE_WORKERS or all cores)");
    sub->add_option("--seed", common.seed, "Seed for every random choice");
  };

  SweepArgs sweep;
  auto* s = app.add_subcommand("sweep", "Flip single bits and measure the accuracy drop");
  s->add_option("--model", sweep.model, "Model file (.nnxf)")->required();
  s->add_option("--data", sweep.data, "Dataset file (.nnxd)")->required();
  s->add_option("--out", sweep.out, "Output directory")->required();
  s->add_option("--bits", sweep.bits, "Bit positions: all, exp (31..24) or 31");
  s->add_option("--dirs", sweep.dirs, "Flip directions, comma separated: 0to1, 1to0, any");
  s->add_option("--tensors", sweep.tensors, "Comma separated tensor names (default: all)");
  s->add_option("--min-tensor-bytes", sweep.min_tensor_bytes, "Skip tensors smaller than this");
  s->add_option("--sample-params", sweep.sample_params, "Sample this many parameters per repeat");
  s->add_option("--repeats", sweep.repeats, "Independent parameter samples");
  s->add_option("--val-fraction", sweep.val_fraction, "Per-class validation fraction");
  s->add_option("--threshold", sweep.threshold, "RAD threshold for vulnerability");
  add_common(s);

  RowhammerArgs rh;
  auto* r = app.add_subcommand("rowhammer", "Simulate Rowhammer attacks or generate template databases");
  r->add_option("mode", rh.mode, "surgical, blind or gen-db")
      ->required()
      ->check(CLI::IsMember({"surgical", "blind", "gen-db"}));
  r->add_option("--model", rh.model, "Model file (.nnxf)");
  r->add_option("--data", rh.data, "Dataset file (.nnxd)");
  r->add_option("--out", rh.out, "Output directory")->required();
  r->add_option("--db", rh.dbs, "Template database file (repeatable)");
  r->add_option("--setup", rh.setups, "Synthetic database with a named setup's density, or 'all' (repeatable)");
  r->add_option("--rows", rh.rows, "Rows per synthetic database");
  r->add_option("--records", rh.records, "Sweep records.csv naming the vulnerable bits (surgical)");
  r->add_option("--trials", rh.trials, "Seeded searches per database (surgical)");
  r->add_option("--experiments", rh.experiments, "Experiments per database (blind)");
  r->add_option("--max-attempts", rh.attempts, "Hammer attempts per experiment (blind)");
  r->add_option("--crash-probability", rh.crash_probability, "Crash chance per flip outside parameters (blind)");
  r->add_option("--other-fraction", rh.other_fraction, "Size of the code/other region relative to parameters");
  r->add_option("--min-aligned-bytes", rh.min_aligned_bytes, "Tensors this large are page-aligned");
  r->add_option("--threshold", rh.threshold, "RAD threshold for corruption");
  r->add_option("--val-fraction", rh.val_fraction, "Per-class validation fraction");
  add_common(r);

  MitigateArgs mit;
  auto* g = app.add_subcommand("mitigate", "Write a hardened copy of a model");
  g->add_option("--model", mit.model, "Model file (.nnxf)")->required();
  g->add_option("--transform", mit.transform, "relu, relu6, clamp, quantize8 or binarize")->required();
  g->add_option("--calibration", mit.calibration, "Calibration dataset for clamp");
  g->add_option("--out", mit.out, "Output model file")->required();
  add_common(g);

  ReportArgs rep;
  auto* p = app.add_subcommand("report", "Merge sweep records into aggregate tables");
  p->add_option("--records", rep.records, "records.csv from a sweep (repeatable)");
  p->add_option("--out", rep.out, "Output directory")->required();
  p->add_option("--threshold", rep.threshold, "RAD threshold for vulnerability");
  add_common(p);

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitConfig;
  }

  try {
    if (*s) return run_sweep_command(sweep, common);
    if (*r) return run_rowhammer_command(rh, common);
    if (*g) return run_mitigate_command(mit, common);
    if (*p) return run_report_command(rep, common);
  } catch (const FormatError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitFormat;
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const ShapeError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 1;
}
