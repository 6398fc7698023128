#pragma once

// Trace-driven two-level data cache and cycle model.

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <ostream>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "vlaconv/error.hpp"
#include "vlaconv/vvm.hpp"

namespace vlaconv {

inline constexpr std::size_t kMiB = std::size_t{1} << 20;

struct CacheConfig {
  std::size_t l1_bytes = 64 * 1024;
  std::size_t l2_bytes = kMiB;
  std::size_t line_bytes = 64;
  std::size_t l1_ways = 8;
  std::size_t l2_ways = 16;

  void validate() const {
    auto pow2 = [](std::size_t v) { return std::has_single_bit(v); };
    if (!pow2(l1_bytes) || !pow2(l2_bytes) || !pow2(line_bytes))
      throw ConfigError("cache and line sizes must be powers of two");
    if (line_bytes < kElementBytes) throw ConfigError("line smaller than an element");
    if (l1_ways == 0 || l2_ways == 0) throw ConfigError("associativity must be positive");
    if ((l1_bytes / line_bytes) % l1_ways != 0 || l1_bytes < line_bytes * l1_ways)
      throw ConfigError("l1_ways must divide the L1 line count");
    if ((l2_bytes / line_bytes) % l2_ways != 0 || l2_bytes < line_bytes * l2_ways)
      throw ConfigError("l2_ways must divide the L2 line count");
  }
};

/// Cycle costs per instruction class plus memory-level latencies and the
/// roofline machine. Every value is a calibration knob.
struct CostModel {
  std::uint64_t scalar_cycles = 1;
  std::uint64_t setvl_cycles = 1;
  std::uint64_t vector_cycles = 4;  // arith, fma, slide, permute, reduce
  std::uint64_t mem_unit_cycles = 4;
  std::uint64_t mem_strided_base = 4;
  std::uint64_t mem_strided_lanes_per_cycle = 4;
  std::uint64_t mem_indexed_base = 4;
  std::uint64_t mem_indexed_cycles_per_lane = 1;
  std::uint64_t l1_hit_cycles = 4;
  std::uint64_t l2_hit_cycles = 20;
  std::uint64_t dram_cycles = 100;
  double core_ghz = 2.0;
  double peak_gflops = 64.0;
  double dram_gbps = 13.0;

  std::uint64_t strided_cost(std::uint64_t gvl) const noexcept {
    return mem_strided_base + (gvl + mem_strided_lanes_per_cycle - 1) / mem_strided_lanes_per_cycle;
  }
  std::uint64_t indexed_cost(std::uint64_t gvl) const noexcept {
    return mem_indexed_base + mem_indexed_cycles_per_lane * gvl;
  }

  std::uint64_t base_cost(const InstructionRecord& rec) const noexcept {
    switch (rec.op) {
      case OpClass::scalar: return scalar_cycles;
      case OpClass::setvl: return setvl_cycles;
      case OpClass::arith:
      case OpClass::fma:
      case OpClass::slide:
      case OpClass::permute:
      case OpClass::reduce: return vector_cycles;
      case OpClass::mem_unit: return mem_unit_cycles;
      case OpClass::mem_strided: return strided_cost(rec.gvl);
      case OpClass::mem_indexed: return indexed_cost(rec.gvl);
    }
    return 0;
  }

  double ridge_point() const noexcept { return peak_gflops / dram_gbps; }

  /// Checks positivity and indexed >= strided >= unit for every gvl up to `max_gvl`.
  void validate(std::uint64_t max_gvl = 512) const {
    if (mem_strided_lanes_per_cycle == 0) throw ConfigError("mem_strided_lanes_per_cycle must be > 0");
    if (!(core_ghz > 0) || !(peak_gflops > 0) || !(dram_gbps > 0))
      throw ConfigError("core_ghz, peak_gflops and dram_gbps must be positive");
    for (std::uint64_t g = 0; g <= max_gvl; ++g) {
      if (strided_cost(g) < mem_unit_cycles || indexed_cost(g) < strided_cost(g))
        throw ConfigError("memory costs must satisfy indexed >= strided >= unit at gvl " +
                          std::to_string(g));
    }
  }
};

/// Set-associative, LRU, write-back cache of line tags.
class SetAssocCache {
 public:
  struct Outcome {
    bool hit = false;
    bool evicted_dirty = false;
    std::uint64_t evicted_line = 0;
  };

  SetAssocCache(std::size_t bytes, std::size_t ways, std::size_t line_bytes)
      : ways_(ways), sets_(bytes / line_bytes / ways), entries_(sets_ * ways) {
    set_mask_ = sets_ - 1;
  }

  std::size_t sets() const noexcept { return sets_; }
  std::size_t ways() const noexcept { return ways_; }

  /// Looks up `line`, allocating it on a miss. `write` marks it dirty.
  Outcome access(std::uint64_t line, bool write) {
    Entry* set = &entries_[(line & set_mask_) * ways_];
    const std::uint64_t key = line + 1;
    ++clock_;
    for (std::size_t w = 0; w < ways_; ++w) {
      if (set[w].key == key) {
        set[w].stamp = clock_;
        set[w].dirty |= write;
        return {true, false, 0};
      }
    }
    Entry* victim = set;
    for (std::size_t w = 0; w < ways_; ++w) {
      if (set[w].key == 0) {
        victim = &set[w];
        break;
      }
      if (set[w].stamp < victim->stamp) victim = &set[w];
    }
    Outcome out;
    if (victim->key != 0 && victim->dirty) {
      out.evicted_dirty = true;
      out.evicted_line = victim->key - 1;
    }
    victim->key = key;
    victim->stamp = clock_;
    victim->dirty = write;
    return out;
  }

  bool contains(std::uint64_t line) const {
    const Entry* set = &entries_[(line & set_mask_) * ways_];
    for (std::size_t w = 0; w < ways_; ++w)
      if (set[w].key == line + 1) return true;
    return false;
  }

 private:
  struct Entry {
    std::uint64_t key = 0;  // line + 1; zero marks an invalid way
    std::uint64_t stamp = 0;
    bool dirty = false;
  };

  std::size_t ways_;
  std::size_t sets_;
  std::uint64_t set_mask_ = 0;
  std::uint64_t clock_ = 0;
  std::vector<Entry> entries_;
};

/// Per-event tally returned by CacheHierarchy::access.
struct AccessTally {
  std::uint64_t lines = 0;
  std::uint64_t l1_hits = 0;
  std::uint64_t l2_hits = 0;
  std::uint64_t l2_misses = 0;
  std::uint64_t l2_writebacks = 0;
};

/// L1 and L2 data caches, non-inclusive, write-back and write-allocate.
/// Dirty L1 victims are written into L2 without a DRAM read; dirty L2
/// victims become DRAM write traffic.
class CacheHierarchy {
 public:
  explicit CacheHierarchy(const CacheConfig& cfg)
      : cfg_(cfg),
        l1_((cfg.validate(), cfg.l1_bytes), cfg.l1_ways, cfg.line_bytes),
        l2_(cfg.l2_bytes, cfg.l2_ways, cfg.line_bytes),
        line_shift_(static_cast<unsigned>(std::countr_zero(cfg.line_bytes))) {}

  const CacheConfig& config() const noexcept { return cfg_; }

  /// Probes each distinct line of the event once, in address order of
  /// first touch.
  AccessTally cache_access(const MemoryEvent& ev) {
    AccessTally t;
    const bool write = ev.is_store();
    if (ev.element_count == 0) return t;
    if (ev.is_indexed()) {
      lines_.clear();
      for (std::size_t i = 0; i < ev.element_count; ++i)
        lines_.push_back(ev.indexed_addresses[i] >> line_shift_);
      std::sort(lines_.begin(), lines_.end());
      lines_.erase(std::unique(lines_.begin(), lines_.end()), lines_.end());
      for (auto line : lines_) probe(line, write, t);
    } else if (ev.stride_bytes == static_cast<std::int64_t>(kElementBytes)) {
      const std::uint64_t first = ev.base >> line_shift_;
      const std::uint64_t last = (ev.base + std::uint64_t{ev.element_count} * kElementBytes - 1) >> line_shift_;
      for (std::uint64_t line = first; line <= last; ++line) probe(line, write, t);
    } else {
      std::uint64_t prev = std::numeric_limits<std::uint64_t>::max();
      for (std::size_t i = 0; i < ev.element_count; ++i) {
        const std::uint64_t line = ev.address(i) >> line_shift_;
        if (line == prev) continue;  // strided lines are monotone
        prev = line;
        probe(line, write, t);
      }
    }
    return t;
  }

 private:
  void probe(std::uint64_t line, bool write, AccessTally& t) {
    ++t.lines;
    const auto r1 = l1_.access(line, write);
    if (r1.hit) {
      ++t.l1_hits;
    } else {
      const auto r2 = l2_.access(line, false);
      if (r2.hit) {
        ++t.l2_hits;
      } else {
        ++t.l2_misses;
      }
      if (r2.evicted_dirty) ++t.l2_writebacks;
    }
    if (r1.evicted_dirty) {
      const auto wb = l2_.access(r1.evicted_line, true);
      if (wb.evicted_dirty) ++t.l2_writebacks;
    }
  }

  CacheConfig cfg_;
  SetAssocCache l1_;
  SetAssocCache l2_;
  unsigned line_shift_;
  std::vector<std::uint64_t> lines_;
};

/// Counters gathered while replaying a trace. All integer fields are
/// additive across program sections.
struct ExecStats {
  std::array<std::uint64_t, kOpClassCount> instructions{};
  std::uint64_t flops = 0;
  std::uint64_t l1_accesses = 0;
  std::uint64_t l1_misses = 0;
  std::uint64_t l2_accesses = 0;
  std::uint64_t l2_misses = 0;
  std::uint64_t l2_writebacks = 0;
  std::uint64_t cycles = 0;
  std::uint64_t line_bytes = 64;
  double core_ghz = 2.0;

  std::uint64_t count(OpClass c) const noexcept {
    return instructions[static_cast<std::size_t>(c)];
  }
  std::uint64_t total_instructions() const noexcept {
    std::uint64_t s = 0;
    for (auto v : instructions) s += v;
    return s;
  }
  std::uint64_t vector_instructions() const noexcept {
    return total_instructions() - count(OpClass::scalar) - count(OpClass::setvl);
  }
  std::uint64_t dram_bytes() const noexcept { return (l2_misses + l2_writebacks) * line_bytes; }
  double modeled_seconds() const noexcept {
    return static_cast<double>(cycles) / (core_ghz * 1e9);
  }
  double l1_miss_rate() const noexcept {
    return l1_accesses ? static_cast<double>(l1_misses) / static_cast<double>(l1_accesses) : 0.0;
  }
  double l2_miss_rate() const noexcept {
    return l2_accesses ? static_cast<double>(l2_misses) / static_cast<double>(l2_accesses) : 0.0;
  }

  ExecStats& operator+=(const ExecStats& o) noexcept {
    for (std::size_t i = 0; i < kOpClassCount; ++i) instructions[i] += o.instructions[i];
    flops += o.flops;
    l1_accesses += o.l1_accesses;
    l1_misses += o.l1_misses;
    l2_accesses += o.l2_accesses;
    l2_misses += o.l2_misses;
    l2_writebacks += o.l2_writebacks;
    cycles += o.cycles;
    return *this;
  }

  /// Section delta: this minus an earlier snapshot of the same counters.
  ExecStats since(const ExecStats& before) const noexcept {
    ExecStats d = *this;
    for (std::size_t i = 0; i < kOpClassCount; ++i) d.instructions[i] -= before.instructions[i];
    d.flops -= before.flops;
    d.l1_accesses -= before.l1_accesses;
    d.l1_misses -= before.l1_misses;
    d.l2_accesses -= before.l2_accesses;
    d.l2_misses -= before.l2_misses;
    d.l2_writebacks -= before.l2_writebacks;
    d.cycles -= before.cycles;
    return d;
  }

  bool operator==(const ExecStats&) const = default;
};

/// TraceSink that folds records through a CostModel and a CacheHierarchy.
class StatsCollector final : public TraceSink {
 public:
  StatsCollector(const CacheConfig& cache, const CostModel& cost) : hierarchy_(cache), cost_(cost) {
    stats_.line_bytes = cache.line_bytes;
    stats_.core_ghz = cost.core_ghz;
  }

  void record(const InstructionRecord& rec) override {
    ++stats_.instructions[static_cast<std::size_t>(rec.op)];
    stats_.flops += rec.flops;
    stats_.cycles += cost_.base_cost(rec);
    if (rec.memory) {
      const AccessTally t = hierarchy_.cache_access(*rec.memory);
      const std::uint64_t l1_misses = t.lines - t.l1_hits;
      stats_.l1_accesses += t.lines;
      stats_.l1_misses += l1_misses;
      stats_.l2_accesses += l1_misses;
      stats_.l2_misses += t.l2_misses;
      stats_.l2_writebacks += t.l2_writebacks;
      stats_.cycles += t.l1_hits * cost_.l1_hit_cycles + t.l2_hits * cost_.l2_hit_cycles +
                       t.l2_misses * cost_.dram_cycles;
    }
  }

  const ExecStats& stats() const noexcept { return stats_; }
  const CostModel& cost_model() const noexcept { return cost_; }
  const CacheConfig& cache_config() const noexcept { return hierarchy_.config(); }

 private:
  CacheHierarchy hierarchy_;
  CostModel cost_;
  ExecStats stats_;
};

/// Replays a recorded trace against a cold hierarchy.
inline ExecStats replay(const std::vector<InstructionRecord>& trace, const CacheConfig& cache,
                        const CostModel& cost) {
  StatsCollector c(cache, cost);
  for (const auto& r : trace) c.record(r);
  return c.stats();
}

struct RooflineEval {
  double ai = 0.0;  // FLOPs per DRAM byte; +inf when no DRAM traffic
  double attainable_gflops = 0.0;
  bool memory_bound = false;
};

inline RooflineEval arithmetic_intensity(const ExecStats& s, const CostModel& cost) {
  RooflineEval r;
  const std::uint64_t bytes = s.dram_bytes();
  if (bytes == 0) {
    r.ai = std::numeric_limits<double>::infinity();
    r.attainable_gflops = cost.peak_gflops;
    r.memory_bound = false;
    return r;
  }
  r.ai = static_cast<double>(s.flops) / static_cast<double>(bytes);
  r.attainable_gflops = std::min(cost.peak_gflops, r.ai * cost.dram_gbps);
  r.memory_bound = r.ai < cost.ridge_point();
  return r;
}

/// Achieved GFLOPS from modeled time.
inline double achieved_gflops(const ExecStats& s) {
  const double secs = s.modeled_seconds();
  return secs > 0 ? static_cast<double>(s.flops) / secs / 1e9 : 0.0;
}

// ---- configuration files ----

/// Parses `key = value` lines; '#' starts a comment.
inline std::map<std::string, std::string> parse_key_values(std::string_view text) {
  std::map<std::string, std::string> out;
  std::istringstream in{std::string(text)};
  std::string line;
  int lineno = 0;
  auto trim = [](std::string s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return std::string{};
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
  };
  while (std::getline(in, line)) {
    ++lineno;
    if (auto h = line.find('#'); h != std::string::npos) line.resize(h);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("config line " + std::to_string(lineno) + ": expected key=value");
    out[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
  }
  return out;
}

/// Applies recognised keys to the cache and cost configurations. Unknown
/// keys are rejected so that typos in calibration files do not go unseen.
inline void apply_machine_config(const std::map<std::string, std::string>& kv, CacheConfig& cache,
                                 CostModel& cost) {
  auto as_u64 = [](const std::string& k, const std::string& v) {
    std::size_t pos = 0;
    unsigned long long x = 0;
    try {
      x = std::stoull(v, &pos);
    } catch (const std::exception&) {
      pos = 0;
    }
    if (pos != v.size() || v.empty() || v[0] == '-')
      throw ConfigError("key '" + k + "' needs a non-negative integer, got '" + v + "'");
    return static_cast<std::uint64_t>(x);
  };
  auto as_f64 = [](const std::string& k, const std::string& v) {
    std::size_t pos = 0;
    double x = 0;
    try {
      x = std::stod(v, &pos);
    } catch (const std::exception&) {
      pos = 0;
    }
    if (pos != v.size() || v.empty()) throw ConfigError("key '" + k + "' needs a number, got '" + v + "'");
    return x;
  };
  const std::map<std::string, std::uint64_t*> ints = {
      {"scalar_cycles", &cost.scalar_cycles},
      {"setvl_cycles", &cost.setvl_cycles},
      {"vector_cycles", &cost.vector_cycles},
      {"mem_unit_cycles", &cost.mem_unit_cycles},
      {"mem_strided_base", &cost.mem_strided_base},
      {"mem_strided_lanes_per_cycle", &cost.mem_strided_lanes_per_cycle},
      {"mem_indexed_base", &cost.mem_indexed_base},
      {"mem_indexed_cycles_per_lane", &cost.mem_indexed_cycles_per_lane},
      {"l1_hit_cycles", &cost.l1_hit_cycles},
      {"l2_hit_cycles", &cost.l2_hit_cycles},
      {"dram_cycles", &cost.dram_cycles},
  };
  const std::map<std::string, double*> reals = {
      {"core_ghz", &cost.core_ghz},
      {"peak_gflops", &cost.peak_gflops},
      {"dram_gbps", &cost.dram_gbps},
  };
  const std::map<std::string, std::size_t*> sizes = {
      {"l1_bytes", &cache.l1_bytes}, {"l2_bytes", &cache.l2_bytes},
      {"line_bytes", &cache.line_bytes}, {"l1_ways", &cache.l1_ways},
      {"l2_ways", &cache.l2_ways},
  };
  for (const auto& [k, v] : kv) {
    if (auto it = ints.find(k); it != ints.end()) {
      *it->second = as_u64(k, v);
    } else if (auto r = reals.find(k); r != reals.end()) {
      *r->second = as_f64(k, v);
    } else if (auto s = sizes.find(k); s != sizes.end()) {
      *s->second = static_cast<std::size_t>(as_u64(k, v));
    } else {
      throw ConfigError("unknown configuration key '" + k + "'");
    }
  }
  cache.validate();
  cost.validate();
}

/// Flat key=value report of a stats block.
inline void write_stats_report(std::ostream& os, const ExecStats& s, std::string_view prefix = {}) {
  auto key = [&](std::string_view k) -> std::ostream& { return os << prefix << k << '='; };
  for (std::size_t i = 0; i < kOpClassCount; ++i)
    key(std::string("inst_") + to_string(static_cast<OpClass>(i))) << s.instructions[i] << '\n';
  key("flops") << s.flops << '\n';
  key("l1_accesses") << s.l1_accesses << '\n';
  key("l1_misses") << s.l1_misses << '\n';
  key("l2_accesses") << s.l2_accesses << '\n';
  key("l2_misses") << s.l2_misses << '\n';
  key("l2_writebacks") << s.l2_writebacks << '\n';
  key("dram_bytes") << s.dram_bytes() << '\n';
  key("cycles") << s.cycles << '\n';
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.9f", s.modeled_seconds());
  key("seconds") << buf << '\n';
  std::snprintf(buf, sizeof buf, "%.6f", s.l2_miss_rate());
  key("l2_miss_rate") << buf << '\n';
}

}  // namespace vlaconv
