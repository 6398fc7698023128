#pragma once

// Experiment drivers behind the command-line tool: vector-length x L2
// sweeps, roofline reports, the tuple-multiplication microbenchmark and the
// self-validation suite. Everything here is deterministic for a fixed seed
// and writes plain CSV / key=value text.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <optional>
#include <ostream>
#include <random>
#include <string>
#include <vector>

#include "vlaconv/conv_shape.hpp"
#include "vlaconv/error.hpp"
#include "vlaconv/lowering.hpp"
#include "vlaconv/memsim.hpp"
#include "vlaconv/network.hpp"
#include "vlaconv/vvm.hpp"
#include "vlaconv/winograd.hpp"

namespace vlaconv {

// ---- sweep grid ----

struct SweepSpec {
  std::vector<std::size_t> vlens = {512, 1024, 2048, 4096};
  std::vector<std::size_t> l2_mib = {1, 4, 16, 64, 256};
  RunMode mode = RunMode::hybrid;
  StrategyConfig strategy;
  DispatchPolicy policy;
  std::uint64_t seed = 1;
  std::size_t max_rows = 20000;
  bool force = false;

  void validate() const {
    if (vlens.empty() || l2_mib.empty()) throw ArgumentError("sweep grid is empty");
    for (std::size_t v : vlens) VectorMachineConfig{v}.validate();
    for (std::size_t m : l2_mib)
      if (m == 0 || (m & (m - 1)) != 0)
        throw ArgumentError("L2 size " + std::to_string(m) + " MiB is not a power of two");
  }
};

/// Run configuration for one vector length of a sweep; every L2 size of
/// the grid is simulated from the same trace.
inline RunConfig sweep_point_config(const SweepSpec& spec, std::size_t vlen, const CacheConfig& cache,
                                    const CostModel& cost) {
  RunConfig rc;
  rc.machine.vlen_bits = vlen;
  rc.cache = cache;
  for (std::size_t m : spec.l2_mib) {
    CacheConfig cc = cache;
    cc.l2_bytes = m * kMiB;
    cc.validate();
    rc.l2_bytes.push_back(cc.l2_bytes);
  }
  rc.cost = cost;
  rc.mode = spec.mode;
  rc.strategy = spec.strategy;
  rc.policy = spec.policy;
  rc.seed = spec.seed;
  return rc;
}

// ---- CSV ----

/// Column order of every sweep / run CSV. Stable; append only.
inline std::vector<std::string> sweep_columns() {
  std::vector<std::string> cols = {"network", "mode", "replicate", "transpose", "vlen", "l2_mib",
                                   "layer", "type", "algorithm"};
  for (std::size_t i = 0; i < kOpClassCount; ++i)
    cols.push_back(std::string("inst_") + to_string(static_cast<OpClass>(i)));
  for (const char* c : {"inst_total", "flops", "l1_accesses", "l1_misses", "l2_accesses", "l2_misses",
                        "l2_writebacks", "l1_miss_rate", "l2_miss_rate", "dram_bytes", "cycles", "seconds"})
    cols.emplace_back(c);
  return cols;
}

inline std::string format_fixed(double v, int digits) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

inline void write_csv_header(std::ostream& os) {
  const auto cols = sweep_columns();
  for (std::size_t i = 0; i < cols.size(); ++i) os << (i ? "," : "") << cols[i];
  os << '\n';
}

struct RowKey {
  std::string network;
  RunMode mode = RunMode::hybrid;
  StrategyConfig strategy;
  std::size_t vlen = 0;
  std::size_t l2_mib = 0;
  std::string layer;  // index or "total"
  std::string type;
  std::string algorithm;
};

inline void write_csv_row(std::ostream& os, const RowKey& k, const ExecStats& s) {
  os << k.network << ',' << to_string(k.mode) << ',' << to_string(k.strategy.replicate) << ','
     << to_string(k.strategy.transpose) << ',' << k.vlen << ',' << k.l2_mib << ',' << k.layer << ','
     << k.type << ',' << k.algorithm;
  for (auto v : s.instructions) os << ',' << v;
  os << ',' << s.total_instructions() << ',' << s.flops << ',' << s.l1_accesses << ',' << s.l1_misses << ','
     << s.l2_accesses << ',' << s.l2_misses << ',' << s.l2_writebacks << ','
     << format_fixed(s.l1_miss_rate(), 6) << ',' << format_fixed(s.l2_miss_rate(), 6) << ','
     << s.dram_bytes() << ',' << s.cycles << ',' << format_fixed(s.modeled_seconds(), 9) << '\n';
}

/// Rows a sweep of `model` over `spec` would emit (layers plus one total
/// row per grid point).
inline std::size_t sweep_row_count(const NetworkModel& model, const SweepSpec& spec) {
  return spec.vlens.size() * spec.l2_mib.size() * (model.layers.size() + 1);
}

/// Per-network totals of one grid point.
struct SweepTotal {
  std::size_t vlen = 0;
  std::size_t l2_mib = 0;
  ExecStats stats;
};

/// Runs the grid, streaming CSV rows (header included) in the order
/// vlen, L2, layer. Returns the per-point totals.
inline std::vector<SweepTotal> run_sweep(std::ostream& os, const NetworkModel& model, const SweepSpec& spec,
                                         const CacheConfig& cache = {}, const CostModel& cost = {}) {
  spec.validate();
  const std::size_t rows = sweep_row_count(model, spec);
  if (rows > spec.max_rows && !spec.force)
    throw ArgumentError("sweep would emit " + std::to_string(rows) + " rows (cap " +
                        std::to_string(spec.max_rows) + "); pass --force to run it anyway");
  write_csv_header(os);
  std::vector<SweepTotal> totals;
  for (std::size_t vlen : spec.vlens) {
    const RunConfig rc = sweep_point_config(spec, vlen, cache, cost);
    const InferenceResult res = run_network_inference(model, rc);
    for (std::size_t i = 0; i < spec.l2_mib.size(); ++i) {
      RowKey key{model.name, spec.mode, spec.strategy, vlen, spec.l2_mib[i], {}, {}, {}};
      for (std::size_t li = 0; li < res.layers.size(); ++li) {
        const LayerRun& lr = res.layers[li];
        key.layer = std::to_string(lr.index);
        key.type = model.layers[li].type;
        key.algorithm = to_string(lr.algorithm);
        write_csv_row(os, key, lr.stats[i]);
      }
      key.layer = "total";
      key.type = "network";
      key.algorithm = "-";
      write_csv_row(os, key, res.totals[i]);
      totals.push_back({vlen, spec.l2_mib[i], res.totals[i]});
    }
  }
  return totals;
}

// ---- roofline ----

struct RooflinePoint {
  std::size_t layer = 0;
  Algorithm algorithm = Algorithm::none;
  std::uint64_t flops = 0;
  std::uint64_t dram_bytes = 0;
  double ai = 0.0;
  double achieved_gflops = 0.0;
  double ceiling_gflops = 0.0;
  bool memory_bound = false;
};

struct RooflineReport {
  std::string network;
  RunMode mode = RunMode::winograd_all;
  std::size_t vlen = 0;
  std::size_t l2_mib = 0;
  double peak_gflops = 0.0;
  double dram_gbps = 0.0;
  double ridge = 0.0;
  std::vector<RooflinePoint> points;

  std::size_t memory_bound_count() const {
    return static_cast<std::size_t>(
        std::count_if(points.begin(), points.end(), [](const auto& p) { return p.memory_bound; }));
  }
};

/// The prefix of `model` that ends with its `n`-th convolutional layer.
inline NetworkModel first_conv_layers(const NetworkModel& model, std::size_t n) {
  std::size_t seen = 0;
  for (const auto& l : model.layers) {
    if (l.kind == LayerKind::convolutional && ++seen == n) return model.truncated(l.index + 1);
  }
  return model;
}

/// Runs the first `conv_layers` convolutional layers and places each on
/// the roofline of the cost model's machine.
inline RooflineReport roofline_report(const NetworkModel& model, RunMode mode, std::size_t vlen,
                                      std::size_t l2_mib, const StrategyConfig& strategy = {},
                                      std::uint64_t seed = 1, std::size_t conv_layers = 10,
                                      const CacheConfig& cache = {}, const CostModel& cost = {}) {
  SweepSpec spec;
  spec.vlens = {vlen};
  spec.l2_mib = {l2_mib};
  spec.mode = mode;
  spec.strategy = strategy;
  spec.seed = seed;
  spec.validate();
  const NetworkModel sub = first_conv_layers(model, conv_layers);
  const InferenceResult res = run_network_inference(sub, sweep_point_config(spec, vlen, cache, cost));
  RooflineReport rep;
  rep.network = model.name;
  rep.mode = mode;
  rep.vlen = vlen;
  rep.l2_mib = l2_mib;
  rep.peak_gflops = cost.peak_gflops;
  rep.dram_gbps = cost.dram_gbps;
  rep.ridge = cost.ridge_point();
  for (const LayerRun& lr : res.layers) {
    if (lr.kind != LayerKind::convolutional) continue;
    const ExecStats& s = lr.stats[0];
    const RooflineEval ev = arithmetic_intensity(s, cost);
    rep.points.push_back({lr.index, lr.algorithm, s.flops, s.dram_bytes(), ev.ai, achieved_gflops(s),
                          ev.attainable_gflops, ev.memory_bound});
  }
  return rep;
}

inline void write_roofline_csv(std::ostream& os, const RooflineReport& r) {
  os << "network,mode,vlen,l2_mib,layer,algorithm,flops,dram_bytes,ai,achieved_gflops,ceiling_gflops,bound\n";
  for (const auto& p : r.points) {
    os << r.network << ',' << to_string(r.mode) << ',' << r.vlen << ',' << r.l2_mib << ',' << p.layer << ','
       << to_string(p.algorithm) << ',' << p.flops << ',' << p.dram_bytes << ','
       << (std::isinf(p.ai) ? std::string("inf") : format_fixed(p.ai, 6)) << ','
       << format_fixed(p.achieved_gflops, 6) << ',' << format_fixed(p.ceiling_gflops, 6) << ','
       << (p.memory_bound ? "memory" : "compute") << '\n';
  }
}

/// gnuplot data: index 0 is the roofline (AI, ceiling), index 1 the layer
/// points (AI, achieved GFLOPS, layer).
inline void write_roofline_plot_data(std::ostream& os, const RooflineReport& r) {
  os << "# roofline: peak " << format_fixed(r.peak_gflops, 3) << " GFLOPS, bandwidth "
     << format_fixed(r.dram_gbps, 3) << " GB/s, ridge " << format_fixed(r.ridge, 6) << " FLOP/byte\n";
  os << "# ai ceiling_gflops\n";
  for (int e = -20; e <= 30; ++e) {
    const double ai = std::pow(10.0, e / 10.0);
    os << format_fixed(ai, 6) << ' ' << format_fixed(std::min(r.peak_gflops, ai * r.dram_gbps), 6) << '\n';
  }
  os << "\n\n# ai achieved_gflops layer\n";
  for (const auto& p : r.points)
    os << (std::isinf(p.ai) ? std::string("inf") : format_fixed(p.ai, 6)) << ' '
       << format_fixed(p.achieved_gflops, 6) << ' ' << p.layer << '\n';
}

// ---- tuple-multiplication microbenchmark ----

/// FNV-1a over the bytes of a float buffer.
inline std::uint64_t checksum(const std::vector<float>& v) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (float f : v) {
    std::uint32_t bits = 0;
    std::memcpy(&bits, &f, sizeof bits);
    for (int i = 0; i < 4; ++i) {
      h ^= (bits >> (8 * i)) & 0xffu;
      h *= 0x100000001b3ull;
    }
  }
  return h;
}

struct MicrobenchSide {
  ReplicateStrategy strategy = ReplicateStrategy::slide;
  ExecStats stats;  // kernel only, all iterations
  std::uint64_t m_checksum = 0;
};

struct MicrobenchResult {
  ConvShape shape;
  std::size_t vlen = 0;
  std::size_t iterations = 0;
  MicrobenchSide indexed;
  MicrobenchSide slide;
  double ratio() const {  // indexed cycles / slide cycles
    return slide.stats.cycles ? static_cast<double>(indexed.stats.cycles) / static_cast<double>(slide.stats.cycles)
                              : 0.0;
  }
};

/// Layer used by the microbenchmark: 32 -> 32 channels on a 16 x 16 image
/// (9 tiles), small enough that 100 iterations stay quick.
inline ConvShape microbench_shape() { return ConvShape{32, 16, 16, 32, 3, 1, 1}; }

/// Repeats tuple_multiply `iterations` times under each replication
/// strategy on identical seeded V and U packs.
inline MicrobenchResult microbench_tuple(std::size_t vlen, std::size_t iterations = 100, std::uint64_t seed = 1,
                                         const ConvShape& shape = microbench_shape(),
                                         const CacheConfig& cache = {}, const CostModel& cost = {}) {
  if (iterations == 0) throw ArgumentError("microbench: iterations must be positive");
  MicrobenchResult r;
  r.shape = shape;
  r.vlen = vlen;
  r.iterations = iterations;
  const TileGrid grid = TileGrid::from(shape);
  for (ReplicateStrategy st : {ReplicateStrategy::indexed, ReplicateStrategy::slide}) {
    StatsCollector col(cache, cost);
    Machine m(VectorMachineConfig{vlen}, &col);
    const PackedDomain pd = PackedDomain::allocate(m, grid, false);
    pack_v(m, pd, uniform_values(pd.v_elements(), seed));
    pack_u(m, pd, uniform_values(64 * shape.channels * shape.filters, seed + 1));
    const ExecStats before = col.stats();
    for (std::size_t i = 0; i < iterations; ++i) tuple_multiply(m, pd, st);
    MicrobenchSide& side = st == ReplicateStrategy::indexed ? r.indexed : r.slide;
    side.strategy = st;
    side.stats = col.stats().since(before);
    side.m_checksum = checksum(unpack_m(m, pd));
  }
  return r;
}

inline void write_microbench_report(std::ostream& os, const MicrobenchResult& r) {
  os << "shape=C" << r.shape.channels << "xF" << r.shape.filters << "x" << r.shape.height << "x"
     << r.shape.width << "\n";
  os << "vlen=" << r.vlen << "\niterations=" << r.iterations << '\n';
  for (const MicrobenchSide* s : {&r.indexed, &r.slide}) {
    const std::string p = std::string(to_string(s->strategy)) + ".";
    os << p << "cycles=" << s->stats.cycles << '\n';
    os << p << "instructions=" << s->stats.total_instructions() << '\n';
    for (std::size_t i = 0; i < kOpClassCount; ++i)
      if (s->stats.instructions[i])
        os << p << "inst_" << to_string(static_cast<OpClass>(i)) << '=' << s->stats.instructions[i] << '\n';
    char buf[32];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(s->m_checksum));
    os << p << "m_checksum=" << buf << '\n';
  }
  os << "ratio_indexed_over_slide=" << format_fixed(r.ratio(), 4) << '\n';
  os << "checksums_match=" << (r.indexed.m_checksum == r.slide.m_checksum ? "yes" : "no") << '\n';
}

// ---- self validation ----

struct CheckResult {
  std::string name;
  double max_error = 0.0;
  double tolerance = 0.0;
  std::size_t cases = 0;
  bool passed = false;
};

struct ValidateOptions {
  std::uint64_t seed = 1;
  bool quick = false;
  /// When set, kernels and the identity check use these matrices instead
  /// of the built ones (fault injection).
  const WinogradMatrices* matrices = nullptr;
};

/// A copy of the transform matrices with one entry of B perturbed.
inline WinogradMatrices corrupted_matrices() {
  WinogradMatrices w = build_winograd_matrices();
  w.B[3][4] += 0.25;
  return w;
}

/// Max |a - b| over max |b| (normwise relative error); 0 for an all-zero reference.
inline double normwise_error(const std::vector<float>& got, const std::vector<double>& ref) {
  double diff = 0.0, scale = 0.0;
  for (std::size_t i = 0; i < ref.size(); ++i) {
    diff = std::max(diff, std::abs(static_cast<double>(got[i]) - ref[i]));
    scale = std::max(scale, std::abs(ref[i]));
  }
  return scale > 0 ? diff / scale : diff;
}

/// Runs one convolution on an untraced machine.
inline std::vector<float> run_conv(Algorithm alg, const ConvShape& s, const std::vector<float>& input,
                                   const std::vector<float>& filters, std::size_t vlen,
                                   const StrategyConfig& strategy = {}) {
  Machine m(VectorMachineConfig{vlen});
  const Address in = m.allocate(input.size());
  const Address w = m.allocate(filters.size());
  const Address out = m.allocate(s.output_elements());
  m.write_host(in, input);
  m.write_host(w, filters);
  if (alg == Algorithm::winograd) {
    conv_winograd(m, in, w, out, s, strategy);
  } else {
    conv_im2col_gemm(m, in, w, out, s);
  }
  return m.read_host(out, s.output_elements());
}

/// Seeded random layer with C, F in [4, 64], H, W in [8, 34], pad in {0, 1}.
inline ConvShape random_layer(std::mt19937_64& rng, std::size_t max_ch = 64, std::size_t max_hw = 34) {
  auto pick = [&](std::size_t lo, std::size_t hi) {
    return lo + static_cast<std::size_t>(rng() % (hi - lo + 1));
  };
  ConvShape s;
  s.channels = pick(4, max_ch);
  s.filters = pick(4, max_ch);
  s.height = pick(8, max_hw);
  s.width = pick(8, max_hw);
  s.pad = pick(0, 1);
  return s;
}

inline std::vector<CheckResult> run_validation(const ValidateOptions& opt = {}) {
  std::optional<ScopedMatrixOverride> guard;
  if (opt.matrices) guard.emplace(*opt.matrices);
  std::vector<CheckResult> out;
  std::mt19937_64 rng(opt.seed);
  std::uniform_real_distribution<double> uni(-1.0, 1.0);

  {  // fp64 tile identity
    CheckResult c{"transform_identity", 0.0, 1e-10, opt.quick ? 100u : 1000u, false};
    const WinogradMatrices& w = winograd_matrices();
    for (std::size_t n = 0; n < c.cases; ++n) {
      std::array<double, 64> d{};
      std::array<double, 9> g{};
      for (auto& v : d) v = uni(rng);
      for (auto& v : g) v = uni(rng);
      const auto y = winograd_tile_fp64(w, d, g);
      for (std::size_t i = 0; i < 6; ++i)
        for (std::size_t j = 0; j < 6; ++j) {
          double ref = 0.0;
          for (std::size_t a = 0; a < 3; ++a)
            for (std::size_t b = 0; b < 3; ++b) ref += d[(i + a) * 8 + j + b] * g[a * 3 + b];
          c.max_error = std::max(c.max_error, std::abs(y[i * 6 + j] - ref));
        }
    }
    c.passed = c.max_error <= c.tolerance;
    out.push_back(c);
  }

  {  // kernels against the direct oracle
    CheckResult wino{"winograd_vs_direct", 0.0, 5e-3, opt.quick ? 6u : 50u, false};
    CheckResult gemm{"im2col_gemm_vs_direct", 0.0, 1e-4, wino.cases, false};
    constexpr std::array<std::size_t, 4> vlens = {128, 512, 2048, 8192};
    for (std::size_t n = 0; n < wino.cases; ++n) {
      const ConvShape s = opt.quick ? random_layer(rng, 16, 16) : random_layer(rng);
      const auto input = uniform_values(s.input_elements(), rng());
      const auto filters = uniform_values(s.filter_elements(), rng());
      const auto ref = direct_conv_oracle(input, filters, s);
      const std::size_t vlen = vlens[n % vlens.size()];
      wino.max_error = std::max(wino.max_error, normwise_error(run_conv(Algorithm::winograd, s, input, filters, vlen), ref));
      gemm.max_error = std::max(gemm.max_error, normwise_error(run_conv(Algorithm::im2col_gemm, s, input, filters, vlen), ref));
    }
    wino.passed = wino.max_error <= wino.tolerance;
    gemm.passed = gemm.max_error <= gemm.tolerance;
    out.push_back(wino);
    out.push_back(gemm);
  }

  {  // replication strategies must agree bit for bit
    CheckResult c{"replicate_equivalence", 0.0, 0.0, opt.quick ? 8u : 100u, true};
    constexpr std::array<std::size_t, 4> vlens = {128, 512, 2048, 8192};
    for (std::size_t n = 0; n < c.cases; ++n) {
      ConvShape s = random_layer(rng, opt.quick ? 12 : 24, 20);
      const TileGrid grid = TileGrid::from(s);
      const std::size_t vlen = vlens[n % vlens.size()];
      const std::uint64_t seed = rng();
      std::vector<float> ms[2];
      for (int k = 0; k < 2; ++k) {
        Machine m(VectorMachineConfig{vlen});
        const PackedDomain pd = PackedDomain::allocate(m, grid, false);
        pack_v(m, pd, uniform_values(pd.v_elements(), seed));
        pack_u(m, pd, uniform_values(64 * s.channels * s.filters, seed + 1));
        tuple_multiply(m, pd, k ? ReplicateStrategy::slide : ReplicateStrategy::indexed);
        ms[k] = unpack_m(m, pd);
      }
      if (checksum(ms[0]) != checksum(ms[1]) || ms[0].size() != ms[1].size()) c.passed = false;
      for (std::size_t i = 0; i < ms[0].size(); ++i)
        c.max_error = std::max(c.max_error, std::abs(static_cast<double>(ms[0][i]) - ms[1][i]));
    }
    c.passed = c.passed && c.max_error == 0.0;
    out.push_back(c);
  }

  {  // transpose strategies: interleave4 and the whole input transform
    CheckResult c{"transpose_equivalence", 0.0, 0.0, opt.quick ? 8u : 100u, true};
    constexpr std::array<std::size_t, 4> vlens = {128, 512, 2048, 8192};
    for (std::size_t n = 0; n < c.cases; ++n) {
      const std::size_t vlen = vlens[n % vlens.size()];
      const std::uint64_t seed = rng();
      std::vector<float> res[2];
      for (int k = 0; k < 2; ++k) {
        const auto st = k ? TransposeStrategy::strided : TransposeStrategy::indexed;
        Machine m(VectorMachineConfig{vlen});
        const std::size_t gvl = 1 + static_cast<std::size_t>(seed % m.vlmax());
        std::array<VectorValue, 4> v;
        std::array<const VectorValue*, 4> ptrs{};
        for (std::size_t j = 0; j < 4; ++j) {
          const auto lanes = uniform_values(gvl, seed + j);
          v[j] = VectorValue::from_lanes(m.vlmax(), lanes);
          ptrs[j] = &v[j];
        }
        const Address scratch = m.allocate(4 * m.vlmax());
        const Address dst = m.allocate(4 * gvl);
        interleave4(m, ptrs.data(), gvl, st, scratch, dst);
        res[k] = m.read_host(dst, 4 * gvl);
        // Input transform of a small layer under the same strategy.
        const ConvShape s{1 + seed % 9, 8 + seed % 11, 8 + seed % 13, 4, 3, 1, seed % 2};
        const TileGrid grid = TileGrid::from(s);
        const Address in = m.allocate(s.input_elements());
        m.write_host(in, uniform_values(s.input_elements(), seed + 7));
        const PackedDomain pd = PackedDomain::allocate(m, grid, false);
        input_transform(m, in, grid, pd, st);
        const auto vv = unpack_v(m, pd);
        res[k].insert(res[k].end(), vv.begin(), vv.end());
      }
      if (res[0] != res[1]) {
        c.passed = false;
        for (std::size_t i = 0; i < res[0].size(); ++i)
          c.max_error = std::max(c.max_error, std::abs(static_cast<double>(res[0][i]) - res[1][i]));
      }
    }
    out.push_back(c);
  }

  {  // results do not depend on the vector length
    CheckResult c{"vla_portability", 0.0, 0.0, opt.quick ? 2u : 6u, true};
    for (std::size_t n = 0; n < c.cases; ++n) {
      const ConvShape s = random_layer(rng, opt.quick ? 12 : 32, 24);
      const auto input = uniform_values(s.input_elements(), rng());
      const auto filters = uniform_values(s.filter_elements(), rng());
      const auto base = run_conv(Algorithm::winograd, s, input, filters, 128);
      for (std::size_t vlen : {512u, 2048u, 16384u}) {
        const auto y = run_conv(Algorithm::winograd, s, input, filters, vlen);
        if (y != base) {
          c.passed = false;
          for (std::size_t i = 0; i < y.size(); ++i)
            c.max_error = std::max(c.max_error, std::abs(static_cast<double>(y[i]) - base[i]));
        }
      }
    }
    out.push_back(c);
  }
  return out;
}

inline bool all_passed(const std::vector<CheckResult>& checks) {
  return std::all_of(checks.begin(), checks.end(), [](const auto& c) { return c.passed; });
}

inline void write_validation_report(std::ostream& os, const std::vector<CheckResult>& checks) {
  for (const auto& c : checks) {
    char buf[160];
    std::snprintf(buf, sizeof buf, "%-24s %s  cases=%zu max_error=%.3e tolerance=%.1e\n", c.name.c_str(),
                  c.passed ? "PASS" : "FAIL", c.cases, c.max_error, c.tolerance);
    os << buf;
  }
  os << "result=" << (all_passed(checks) ? "pass" : "fail") << '\n';
}

}  // namespace vlaconv
