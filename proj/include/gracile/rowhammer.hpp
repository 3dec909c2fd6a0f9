// Copyright 2026 The Gracile Authors
// SPDX-License-Identifier: Apache-2.0
//
// Rowhammer attack simulation on top of flip-template databases.
//
// A template database lists, for each hammerable DRAM row, the bits (page
// offset, bit index, direction) that flip when that row is hammered. The
// simulator maps those flips onto a victim model laid out in 4 KiB pages and
// plays two attackers:
//   surgical: knows which bits are vulnerable and scans rows until one of
//             them flips a vulnerable bit at a page-aligned parameter.
//   blind:    hammers rows in random order, each landing on a random victim
//             page, until the model is corrupted, the process crashes, or the
//             attempt budget runs out.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <fstream>
#include <istream>
#include <map>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "gracile/bitflip.hpp"
#include "gracile/errors.hpp"
#include "gracile/evaluator.hpp"
#include "gracile/model.hpp"
#include "gracile/parallel.hpp"
#include "gracile/rng.hpp"
#include "gracile/sweep.hpp"

namespace gracile {

inline constexpr std::size_t kPageSize = 4096;
// Time to hammer one row.
inline constexpr double kSecondsPerRow = 0.2;

struct DramFlip {
  std::uint16_t offset = 0;  // byte offset within the 4 KiB page
  std::uint8_t bit = 0;      // 0 = least significant bit of the byte
  FlipDirection direction = FlipDirection::kZeroToOne;

  bool operator==(const DramFlip&) const = default;
};

struct RowTemplate {
  std::uint64_t row = 0;
  std::vector<DramFlip> flips;

  bool operator==(const RowTemplate&) const = default;
};

struct FlipTemplateDb {
  std::string setup;
  std::vector<RowTemplate> rows;

  std::size_t count(FlipDirection d) const {
    std::size_t n = 0;
    for (const auto& r : rows) {
      for (const auto& f : r.flips) n += f.direction == d ? 1 : 0;
    }
    return n;
  }

  bool operator==(const FlipTemplateDb&) const = default;
};

// Text format, one record per line:
//   # comment
//   setup=<name>
//   row=<id> flips=<offset>:<bit>:<0to1|1to0>,...
inline FlipTemplateDb parse_template_db(std::istream& in, const std::string& what = "template db") {
  FlipTemplateDb db;
  std::string line;
  std::size_t line_no = 0;
  auto fail = [&](const std::string& why) {
    throw FormatError(FormatErrorKind::kMalformedText, what + ":" + std::to_string(line_no) + ": " + why);
  };
  auto parse_uint = [&](const std::string& s, std::uint64_t max, const char* field) {
    if (s.empty() || s.find_first_not_of("0123456789") != std::string::npos) {
      fail(std::string("bad ") + field + " '" + s + "'");
    }
    std::uint64_t v = 0;
    for (char c : s) {
      v = v * 10 + static_cast<std::uint64_t>(c - '0');
      if (v > max) fail(std::string(field) + " '" + s + "' out of range");
    }
    return v;
  };
  std::map<std::uint64_t, bool> seen;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    const auto first = line.find_first_not_of(" \t");
    if (first == std::string::npos || line[first] == '#') continue;
    line = line.substr(first);
    if (line.rfind("setup=", 0) == 0) {
      db.setup = line.substr(6);
      continue;
    }
    if (line.rfind("row=", 0) != 0) fail("expected 'row=' or 'setup='");
    std::istringstream fields(line);
    std::string row_field, flips_field, extra;
    fields >> row_field >> flips_field >> extra;
    if (!extra.empty()) fail("unexpected text '" + extra + "'");
    RowTemplate row;
    row.row = parse_uint(row_field.substr(4), UINT64_MAX / 10, "row");
    if (seen.count(row.row)) fail("row " + std::to_string(row.row) + " listed twice");
    seen[row.row] = true;
    if (!flips_field.empty()) {
      if (flips_field.rfind("flips=", 0) != 0) fail("expected 'flips='");
      std::string list = flips_field.substr(6);
      std::istringstream items(list);
      std::string item;
      while (std::getline(items, item, ',')) {
        const auto a = item.find(':'), b = item.find(':', a == std::string::npos ? a : a + 1);
        if (a == std::string::npos || b == std::string::npos) fail("flip '" + item + "' is not offset:bit:dir");
        DramFlip f;
        f.offset = static_cast<std::uint16_t>(parse_uint(item.substr(0, a), kPageSize - 1, "offset"));
        f.bit = static_cast<std::uint8_t>(parse_uint(item.substr(a + 1, b - a - 1), 7, "bit"));
        const std::string dir = item.substr(b + 1);
        if (dir == "0to1") {
          f.direction = FlipDirection::kZeroToOne;
        } else if (dir == "1to0") {
          f.direction = FlipDirection::kOneToZero;
        } else {
          fail("direction '" + dir + "' is not 0to1 or 1to0");
        }
        row.flips.push_back(f);
      }
    }
    db.rows.push_back(std::move(row));
  }
  return db;
}

inline FlipTemplateDb load_template_db(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw FormatError(FormatErrorKind::kIo, "cannot open '" + path + "'");
  return parse_template_db(in, path);
}

inline void write_template_db(const FlipTemplateDb& db, std::ostream& out) {
  if (!db.setup.empty()) out << "setup=" << db.setup << '\n';
  for (const auto& r : db.rows) {
    out << "row=" << r.row;
    if (!r.flips.empty()) {
      out << " flips=";
      for (std::size_t i = 0; i < r.flips.size(); ++i) {
        const auto& f = r.flips[i];
        out << (i ? "," : "") << f.offset << ':' << static_cast<int>(f.bit) << ':' << to_string(f.direction);
      }
    }
    out << '\n';
  }
}

inline void save_template_db(const FlipTemplateDb& db, const std::string& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw FormatError(FormatErrorKind::kIo, "cannot write '" + path + "'");
  write_template_db(db, out);
}

// 0->1 flip counts of the twelve measured DRAM setups used as density presets.
struct SetupDensity {
  const char* name;
  std::size_t zero_to_one;
};

inline const std::vector<SetupDensity>& hammertime_setups() {
  static const std::vector<SetupDensity> setups{
      {"A_2", 21538}, {"E_2", 16320}, {"H_1", 10608}, {"G_1", 7851}, {"A_1", 4367}, {"F_1", 5927},
      {"A_4", 5577},  {"I_1", 4781},  {"J_1", 4725},  {"E_1", 4175}, {"A_3", 1541}, {"C_1", 1365},
  };
  return setups;
}

inline const SetupDensity& hammertime_setup(const std::string& name) {
  for (const auto& s : hammertime_setups()) {
    if (name == s.name) return s;
  }
  throw ConfigError("unknown DRAM setup '" + name + "'");
}

// Rows per synthetic database. With this size the densest preset lands an
// expected 2.25 position-31 flips on vulnerable parameters per 300-attempt
// blind experiment against a MNIST-B sized layout in which half of the
// parameters are vulnerable, which separates dense from sparse setups best
// under a linear success model.
inline constexpr std::size_t kDefaultSyntheticRows = 27344;
inline constexpr double kDefaultFlipsPerRow = 4.0;

struct SyntheticDbConfig {
  std::string setup;
  std::size_t rows = kDefaultSyntheticRows;
  std::size_t zero_to_one = 0;
  std::size_t one_to_zero = 0;
  double flips_per_row = kDefaultFlipsPerRow;  // mean flips in a row that flips at all
  std::uint64_t seed = 0;
};

// Database with the requested flip counts spread over about
// flips / flips_per_row uniformly chosen rows at uniform offsets and bits.
inline FlipTemplateDb generate_synthetic_db(const SyntheticDbConfig& cfg) {
  if (cfg.rows == 0) throw ConfigError("a template database needs at least one row");
  if (!(cfg.flips_per_row >= 1.0)) throw ConfigError("flips per row must be at least 1");
  const std::size_t total = cfg.zero_to_one + cfg.one_to_zero;
  if (total > cfg.rows * kPageSize * 8) throw ConfigError("more flips than bits in the database");
  Rng rng(cfg.seed);
  FlipTemplateDb db;
  db.setup = cfg.setup;
  db.rows.resize(cfg.rows);
  for (std::size_t r = 0; r < cfg.rows; ++r) db.rows[r].row = r;
  if (total == 0) return db;
  std::size_t flippy = static_cast<std::size_t>(std::llround(static_cast<double>(total) / cfg.flips_per_row));
  flippy = std::clamp<std::size_t>(flippy, (total + kPageSize * 8 - 1) / (kPageSize * 8), cfg.rows);
  flippy = std::max<std::size_t>(flippy, 1);
  const std::vector<std::size_t> chosen = sample_without_replacement(cfg.rows, flippy, rng);
  std::vector<FlipDirection> dirs(cfg.zero_to_one, FlipDirection::kZeroToOne);
  dirs.insert(dirs.end(), cfg.one_to_zero, FlipDirection::kOneToZero);
  shuffle(dirs, rng);
  std::vector<std::vector<std::uint32_t>> used(flippy);
  for (std::size_t k = 0; k < total; ++k) {
    const std::size_t slot = k % flippy;
    auto& row = db.rows[chosen[slot]];
    std::uint32_t key;
    do {
      key = static_cast<std::uint32_t>(uniform_below(rng, kPageSize * 8));
    } while (std::find(used[slot].begin(), used[slot].end(), key) != used[slot].end());
    used[slot].push_back(key);
    row.flips.push_back({static_cast<std::uint16_t>(key / 8), static_cast<std::uint8_t>(key % 8), dirs[k]});
  }
  return db;
}

// Seed of the synthetic database for a named setup within a campaign seeded
// with `seed`: each setup gets its own stream.
inline std::uint64_t setup_db_seed(std::uint64_t seed, const std::string& setup) {
  const auto& all = hammertime_setups();
  for (std::size_t i = 0; i < all.size(); ++i) {
    if (setup == all[i].name) return derive_seed(seed, i);
  }
  throw ConfigError("unknown DRAM setup '" + setup + "'");
}

// Seed of the small-tensor offsets in the victim layout for a campaign seed.
inline std::uint64_t layout_seed(std::uint64_t seed) { return derive_seed(seed, 2); }

inline FlipTemplateDb generate_setup_db(const std::string& setup, std::uint64_t seed,
                                        std::size_t rows = kDefaultSyntheticRows) {
  SyntheticDbConfig cfg;
  cfg.setup = setup;
  cfg.rows = rows;
  cfg.zero_to_one = hammertime_setup(setup).zero_to_one;
  cfg.seed = seed;
  return generate_synthetic_db(cfg);
}

// ------------------------------------------------------------ memory layout

struct TensorPlacement {
  std::size_t tensor = 0;
  std::size_t first_page = 0;
  std::size_t pages = 0;
  std::size_t offset = 0;  // byte offset of element 0 within the first page
  std::size_t bytes = 0;
  std::size_t element_bytes = 4;
  bool aligned = false;    // page-aligned large object
};

struct LayoutConfig {
  std::size_t min_aligned_bytes = std::size_t{1} << 20;  // tensors this large are page-aligned
  double other_fraction = 0.25;                          // other/code region relative to parameter bytes
  std::uint64_t seed = 0;                                // offsets of small tensors
};

enum class RegionKind { kParameter, kSlack, kOther };

struct MemoryLayout {
  std::size_t page_size = kPageSize;
  std::vector<TensorPlacement> tensors;
  std::vector<int> page_owner;  // placement index for parameter pages
  std::size_t param_pages = 0;
  std::size_t other_pages = 0;

  std::size_t total_pages() const { return param_pages + other_pages; }
  std::size_t parameter_bytes() const {
    std::size_t n = 0;
    for (const auto& t : tensors) n += t.bytes;
    return n;
  }
};

// Lays tensors out in store order, each starting on a fresh page. Tensors of
// at least min_aligned_bytes start at offset 0; smaller ones start at a seeded
// element-aligned offset, the way a heap allocator places small objects. A
// region for code and other data follows the parameters.
inline MemoryLayout build_layout(const ParameterStore& store, const LayoutConfig& cfg = {}) {
  if (!(cfg.other_fraction >= 0.0)) throw ConfigError("other-region fraction must be non-negative");
  MemoryLayout layout;
  Rng rng(cfg.seed);
  std::size_t page = 0;
  for (std::size_t t = 0; t < store.size(); ++t) {
    const Parameter& p = store[t];
    TensorPlacement pl;
    pl.tensor = t;
    pl.bytes = p.byte_size();
    pl.element_bytes = element_bytes(p.dtype);
    pl.aligned = pl.bytes >= cfg.min_aligned_bytes;
    if (pl.bytes == 0) continue;
    if (!pl.aligned) {
      const std::size_t slots = kPageSize / pl.element_bytes;
      pl.offset = uniform_below(rng, slots) * pl.element_bytes;
    }
    pl.first_page = page;
    pl.pages = (pl.offset + pl.bytes + kPageSize - 1) / kPageSize;
    page += pl.pages;
    for (std::size_t k = 0; k < pl.pages; ++k) layout.page_owner.push_back(static_cast<int>(layout.tensors.size()));
    layout.tensors.push_back(pl);
  }
  layout.param_pages = page;
  const double other = cfg.other_fraction * static_cast<double>(store.total_bytes());
  layout.other_pages = static_cast<std::size_t>(std::ceil(other / static_cast<double>(kPageSize)));
  return layout;
}

struct FlipTarget {
  RegionKind region = RegionKind::kSlack;
  std::optional<BitLocation> location;
  const TensorPlacement* placement = nullptr;
};

// Where a DRAM flip at (page, offset, bit) lands in the victim. Little-endian
// storage puts byte b of a float32 at bit positions 8b+1 .. 8b+8. A binarized
// element keeps its state in the sign bit of its byte.
inline FlipTarget locate_flip(const MemoryLayout& layout, const ParameterStore& store, std::size_t page,
                              const DramFlip& flip) {
  FlipTarget out;
  if (page >= layout.total_pages()) throw ConfigError("page " + std::to_string(page) + " outside the layout");
  if (page >= layout.param_pages) {
    out.region = RegionKind::kOther;
    return out;
  }
  const TensorPlacement& pl = layout.tensors[static_cast<std::size_t>(layout.page_owner[page])];
  out.placement = &pl;
  const std::size_t addr = (page - pl.first_page) * kPageSize + flip.offset;
  if (addr < pl.offset || addr >= pl.offset + pl.bytes) return out;
  const std::size_t local = addr - pl.offset;
  const std::size_t byte = local % pl.element_bytes;
  BitLocation loc;
  loc.param = {pl.tensor, local / pl.element_bytes};
  loc.direction = flip.direction;
  if (store[pl.tensor].dtype == DType::kBinary) {
    if (flip.bit != 7) return out;
    loc.position = 1;
  } else {
    loc.position = static_cast<int>(byte * 8 + flip.bit + 1);
  }
  out.region = RegionKind::kParameter;
  out.location = loc;
  return out;
}

// Parameter bit reached by a flip template in a page-aligned tensor, or
// nothing for small tensors, slack and the other region.
inline std::optional<BitLocation> map_flip_to_parameter(const MemoryLayout& layout, const ParameterStore& store,
                                                        std::size_t page, const DramFlip& flip) {
  const FlipTarget t = locate_flip(layout, store, page, flip);
  if (t.region != RegionKind::kParameter || !t.placement->aligned) return std::nullopt;
  return t.location;
}

// (page offset, bit, direction) triples through which a surgical attacker
// can reach a vulnerable bit. Only page-aligned tensors qualify because the
// attacker controls page placement but not offsets inside a page.
class VulnerableTemplates {
 public:
  VulnerableTemplates() : set_(2 * kPageSize * 8, 0) {}

  void add(std::size_t offset, int bit, FlipDirection d) {
    auto& slot = set_[index(offset, bit, d)];
    if (!slot) ++size_;
    slot = 1;
  }

  bool contains(const DramFlip& f) const { return set_[index(f.offset, f.bit, f.direction)] != 0; }
  std::size_t size() const noexcept { return size_; }

 private:
  static std::size_t index(std::size_t offset, int bit, FlipDirection d) {
    return (d == FlipDirection::kOneToZero ? kPageSize * 8 : 0) + offset * 8 + static_cast<std::size_t>(bit);
  }
  std::vector<std::uint8_t> set_;
  std::size_t size_ = 0;
};

inline VulnerableTemplates vulnerable_templates(const MemoryLayout& layout, const ParameterStore& store,
                                                const std::vector<BitLocation>& vulnerable) {
  std::unordered_map<std::size_t, const TensorPlacement*> by_tensor;
  for (const auto& pl : layout.tensors) by_tensor[pl.tensor] = &pl;
  VulnerableTemplates out;
  for (const BitLocation& loc : vulnerable) {
    if (loc.direction == FlipDirection::kUnconditional) {
      throw ConfigError("vulnerable bits must carry a 0to1 or 1to0 direction");
    }
    // A template only counts when it sets a bit: clearing flips do not cause
    // severe damage, so they are never worth placing a victim page for.
    if (loc.direction != FlipDirection::kZeroToOne) continue;
    auto it = by_tensor.find(loc.param.tensor);
    if (it == by_tensor.end() || !it->second->aligned) continue;
    const TensorPlacement& pl = *it->second;
    std::size_t byte, bit;
    if (store[loc.param.tensor].dtype == DType::kBinary) {
      byte = 0;
      bit = 7;
    } else {
      byte = static_cast<std::size_t>(loc.position - 1) / 8;
      bit = static_cast<std::size_t>(loc.position - 1) % 8;
    }
    const std::size_t addr = pl.offset + loc.param.element * pl.element_bytes + byte;
    out.add(addr % kPageSize, static_cast<int>(bit), loc.direction);
  }
  return out;
}

struct SurgicalResult {
  bool found = false;
  std::size_t attempts = 0;  // rows hammered, including the successful one
  std::uint64_t row = 0;
  DramFlip flip;
  double seconds() const { return static_cast<double>(attempts) * kSecondsPerRow; }
};

// Hammers rows in a seeded random order until one flips a template in
// `templates`. Adding templates never increases the attempt count for a
// given seed.
inline SurgicalResult surgical_search(const FlipTemplateDb& db, const VulnerableTemplates& templates,
                                      std::uint64_t seed) {
  std::vector<std::size_t> order(db.rows.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  Rng rng(seed);
  shuffle(order, rng);
  SurgicalResult r;
  for (std::size_t k = 0; k < order.size(); ++k) {
    const RowTemplate& row = db.rows[order[k]];
    for (const DramFlip& f : row.flips) {
      if (templates.contains(f)) {
        r.found = true;
        r.attempts = k + 1;
        r.row = row.row;
        r.flip = f;
        return r;
      }
    }
  }
  r.attempts = order.size();
  return r;
}

struct AttemptStats {
  std::size_t found = 0;
  std::size_t min = 0, max = 0;
  double median = 0.0, mean = 0.0;
};

inline AttemptStats summarize_attempts(const std::vector<SurgicalResult>& results) {
  std::vector<std::size_t> a;
  for (const auto& r : results) {
    if (r.found) a.push_back(r.attempts);
  }
  AttemptStats s;
  s.found = a.size();
  if (a.empty()) return s;
  std::sort(a.begin(), a.end());
  s.min = a.front();
  s.max = a.back();
  s.median = a.size() % 2 ? static_cast<double>(a[a.size() / 2])
                          : 0.5 * static_cast<double>(a[a.size() / 2 - 1] + a[a.size() / 2]);
  double sum = 0;
  for (auto v : a) sum += static_cast<double>(v);
  s.mean = sum / static_cast<double>(a.size());
  return s;
}

// ------------------------------------------------------------ blind attack

// Chance that a flip landing in the code/other region crashes the victim.
// Calibrated so that the twelve density presets, 25 experiments each, 300
// attempts and the default layout of a MNIST-B sized model produce about six
// crashes in total if every experiment ran to its full budget.
inline constexpr double kDefaultCrashProbability = 0.0014;

enum class Outcome { kModelCorrupted, kCrash, kTimeout };

inline const char* to_string(Outcome o) {
  switch (o) {
    case Outcome::kModelCorrupted: return "model_corrupted";
    case Outcome::kCrash: return "crash";
    case Outcome::kTimeout: return "timeout";
  }
  return "unknown";
}

struct BlindConfig {
  std::size_t experiments = 25;
  std::size_t attempts = 300;
  double threshold = kDefaultRadThreshold;
  double crash_probability = kDefaultCrashProbability;
  std::uint64_t seed = 0;
  std::size_t workers = 1;
};

struct LandedFlip {
  std::size_t attempt = 0;
  std::size_t page = 0;
  DramFlip flip;
  RegionKind region = RegionKind::kSlack;
  std::optional<BitLocation> location;
  bool applied = false;
  bool crashed = false;
};

struct ExperimentResult {
  std::size_t index = 0;
  std::uint64_t seed = 0;
  Outcome outcome = Outcome::kTimeout;
  std::size_t attempts = 0;
  std::vector<LandedFlip> flips;
  std::size_t applied_flips = 0;
  double rad_top1 = 0.0;  // of the accumulated flips at the end of the experiment
  double rad_top5 = 0.0;
  bool conservation_ok = true;  // working copy differed from pristine exactly at applied flips
};

struct CampaignResult {
  std::string setup;
  std::vector<ExperimentResult> experiments;
  std::size_t corrupted = 0;
  std::size_t crashes = 0;
  std::size_t timeouts = 0;

  double median_rad() const {
    std::vector<double> v;
    for (const auto& e : experiments) v.push_back(e.rad_top1);
    if (v.empty()) return 0.0;
    std::sort(v.begin(), v.end());
    return v.size() % 2 ? v[v.size() / 2] : 0.5 * (v[v.size() / 2 - 1] + v[v.size() / 2]);
  }
};

inline CampaignResult blind_campaign(const FlipTemplateDb& db, const MemoryLayout& layout, const Model& model,
                                     const IncrementalEvaluator& ev, const BlindConfig& cfg) {
  if (cfg.experiments == 0 || cfg.attempts == 0) throw ConfigError("experiments and attempts must be positive");
  if (!(cfg.crash_probability >= 0.0 && cfg.crash_probability <= 1.0)) {
    throw ConfigError("crash probability must be in [0, 1]");
  }
  if (layout.total_pages() == 0) throw ConfigError("memory layout has no pages");
  if (db.rows.empty()) throw ConfigError("template database has no rows");
  if (ev.pristine().top1 == 0) throw ConfigError("pristine accuracy is 0; RAD is undefined");
  CampaignResult out;
  out.setup = db.setup;
  out.experiments.resize(cfg.experiments);
  std::vector<IncrementalEvaluator::Scratch> scratch;
  for (std::size_t w = 0; w < cfg.workers; ++w) scratch.push_back(ev.make_scratch());
  const std::size_t p1 = ev.pristine().top1, p5 = ev.pristine().top5;
  parallel_for(cfg.experiments, cfg.workers, [&](std::size_t w, std::size_t e) {
    ExperimentResult& x = out.experiments[e];
    x.index = e;
    x.seed = cfg.seed + e;
    Rng rng(x.seed);
    std::vector<std::size_t> order(db.rows.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    shuffle(order, rng);
    ParameterStore work = model.params;
    std::vector<Override> overrides;
    std::map<ParameterRef, std::size_t> override_index;
    std::size_t attempt = 0;
    bool done = false;
    for (; attempt < cfg.attempts && !done; ++attempt) {
      const std::size_t page = uniform_below(rng, layout.total_pages());
      bool crashed = false, touched = false;
      {
        for (const DramFlip& f : db.rows[order[attempt % order.size()]].flips) {
          LandedFlip lf;
          lf.attempt = attempt;
          lf.page = page;
          lf.flip = f;
          const FlipTarget t = locate_flip(layout, model.params, page, f);
          lf.region = t.region;
          lf.location = t.location;
          if (t.region == RegionKind::kParameter) {
            const FlipRecord rec = apply_flip(work, *t.location);
            lf.applied = rec.applied;
            if (rec.applied) {
              touched = true;
              x.applied_flips++;
              auto [it, inserted] = override_index.emplace(t.location->param, overrides.size());
              if (inserted) {
                overrides.push_back({t.location->param.tensor, t.location->param.element, rec.new_value});
              } else {
                overrides[it->second].value = rec.new_value;
              }
            }
          } else if (t.region == RegionKind::kOther) {
            lf.crashed = bernoulli(rng, cfg.crash_probability);
            crashed = crashed || lf.crashed;
          }
          x.flips.push_back(lf);
        }
      }
      if (touched) {
        const EvalResult r = ev.evaluate(overrides, scratch[w]);
        x.rad_top1 = rad_counts(p1, r.top1);
        x.rad_top5 = p5 ? rad_counts(p5, r.top5) : 0.0;
      }
      if (crashed) {
        x.outcome = Outcome::kCrash;
        done = true;
      } else if (touched && x.rad_top1 > cfg.threshold) {
        x.outcome = Outcome::kModelCorrupted;
        done = true;
      }
    }
    x.attempts = attempt;
    // Conservation: the working copy differs from pristine exactly where
    // recorded flips were applied (a bit flipped twice cancels out).
    ParameterStore replay = model.params;
    for (const auto& lf : x.flips) {
      if (lf.applied) apply_flip(replay, {lf.location->param, lf.location->position, FlipDirection::kUnconditional});
    }
    x.conservation_ok = replay == work;
    for (const Override& o : overrides) {
      const float v = work[o.tensor].value(o.element);
      x.conservation_ok = x.conservation_ok && (v == o.value || (std::isnan(v) && std::isnan(o.value)));
    }
  });
  for (const auto& x : out.experiments) {
    out.corrupted += x.outcome == Outcome::kModelCorrupted;
    out.crashes += x.outcome == Outcome::kCrash;
    out.timeouts += x.outcome == Outcome::kTimeout;
  }
  return out;
}

}  // namespace gracile
