#pragma once

// Darknet-style network descriptions, per-layer algorithm dispatch and
// traced whole-network inference.

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <fstream>
#include <limits>
#include <memory>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "vlaconv/conv_shape.hpp"
#include "vlaconv/error.hpp"
#include "vlaconv/lowering.hpp"
#include "vlaconv/memsim.hpp"
#include "vlaconv/vvm.hpp"
#include "vlaconv/winograd.hpp"

namespace vlaconv {

enum class LayerKind { convolutional, shortcut, other };
enum class Algorithm { winograd, im2col_gemm, none };
enum class RunMode { pure, hybrid, winograd_all };

inline const char* to_string(LayerKind k) noexcept {
  switch (k) {
    case LayerKind::convolutional: return "convolutional";
    case LayerKind::shortcut: return "shortcut";
    case LayerKind::other: return "other";
  }
  return "?";
}

inline const char* to_string(Algorithm a) noexcept {
  switch (a) {
    case Algorithm::winograd: return "winograd";
    case Algorithm::im2col_gemm: return "im2col_gemm";
    case Algorithm::none: return "none";
  }
  return "?";
}

inline const char* to_string(RunMode m) noexcept {
  switch (m) {
    case RunMode::pure: return "pure";
    case RunMode::hybrid: return "hybrid";
    case RunMode::winograd_all: return "winograd-all";
  }
  return "?";
}

struct LayerDescriptor {
  std::size_t index = 0;
  LayerKind kind = LayerKind::other;
  std::string type;  // section name, e.g. "maxpool"
  int line = 0;      // line of the section header

  std::size_t filters = 0;
  std::size_t size = 0;
  std::size_t stride = 1;
  std::size_t pad = 0;  // resolved padding in pixels
  std::vector<std::size_t> sources;  // shortcut / route inputs (absolute)

  std::size_t in_c = 0, in_h = 0, in_w = 0;
  std::size_t out_c = 0, out_h = 0, out_w = 0;

  ConvShape conv_shape() const {
    return ConvShape{in_c, in_h, in_w, filters, size, stride, pad};
  }
};

struct NetworkModel {
  std::string name;
  std::size_t width = 0, height = 0, channels = 0;
  std::vector<LayerDescriptor> layers;
  std::vector<std::string> warnings;

  std::size_t conv_count() const {
    return static_cast<std::size_t>(std::count_if(layers.begin(), layers.end(), [](const auto& l) {
      return l.kind == LayerKind::convolutional;
    }));
  }

  /// The first `n` layers. Shortcut and route sources must stay inside.
  NetworkModel truncated(std::size_t n) const {
    NetworkModel out = *this;
    if (n < out.layers.size()) out.layers.resize(n);
    return out;
  }
};

/// Dispatcher knobs; Winograd needs at least `min_channels` input channels.
struct DispatchPolicy {
  std::size_t min_channels = 4;
};

/// The hybrid rule: Winograd for 3x3 stride-1 convolutions with enough
/// input channels, im2col+GEMM for every other convolution.
inline Algorithm dispatch_layer(const LayerDescriptor& l, const DispatchPolicy& policy = {}) {
  if (l.kind != LayerKind::convolutional) return Algorithm::none;
  if (l.size == 3 && l.stride == 1 && l.in_c >= policy.min_channels) return Algorithm::winograd;
  return Algorithm::im2col_gemm;
}

/// Algorithm used for a layer under a run mode. `winograd_all` sends every
/// 3x3 stride-1 convolution to Winograd regardless of channel count.
inline Algorithm select_algorithm(const LayerDescriptor& l, RunMode mode, const DispatchPolicy& policy = {}) {
  if (l.kind != LayerKind::convolutional) return Algorithm::none;
  switch (mode) {
    case RunMode::pure: return Algorithm::im2col_gemm;
    case RunMode::hybrid: return dispatch_layer(l, policy);
    case RunMode::winograd_all:
      return (l.size == 3 && l.stride == 1) ? Algorithm::winograd : Algorithm::im2col_gemm;
  }
  return Algorithm::none;
}

// ---- cfg parsing ----

namespace detail {

struct Section {
  std::string type;
  int line = 0;
  std::vector<std::pair<std::string, std::string>> entries;
  std::vector<int> entry_lines;
};

inline std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

inline long long parse_int(const std::string& v, int line, const std::string& key) {
  std::size_t pos = 0;
  long long x = 0;
  try {
    x = std::stoll(v, &pos);
  } catch (const std::exception&) {
    pos = 0;
  }
  if (v.empty() || pos != v.size()) throw ParseError(line, "key '" + key + "' needs an integer, got '" + v + "'");
  return x;
}

class SectionReader {
 public:
  SectionReader(const Section& s, std::vector<std::string>& warnings) : s_(s), warnings_(warnings) {
    used_.assign(s.entries.size(), false);
  }

  bool has(std::string_view key) const {
    return std::any_of(s_.entries.begin(), s_.entries.end(), [&](const auto& e) { return e.first == key; });
  }

  long long integer(std::string_view key, long long fallback) {
    for (std::size_t i = 0; i < s_.entries.size(); ++i) {
      if (s_.entries[i].first == key) {
        used_[i] = true;
        return parse_int(s_.entries[i].second, s_.entry_lines[i], std::string(key));
      }
    }
    return fallback;
  }

  std::vector<long long> integer_list(std::string_view key) {
    for (std::size_t i = 0; i < s_.entries.size(); ++i) {
      if (s_.entries[i].first != key) continue;
      used_[i] = true;
      std::vector<long long> out;
      std::stringstream ss(s_.entries[i].second);
      std::string item;
      while (std::getline(ss, item, ',')) out.push_back(parse_int(trim(item), s_.entry_lines[i], std::string(key)));
      return out;
    }
    throw ParseError(s_.line, "[" + s_.type + "] needs '" + std::string(key) + "'");
  }

  /// Keys that do not affect compute or shape.
  void ignore(std::initializer_list<std::string_view> keys) {
    for (std::size_t i = 0; i < s_.entries.size(); ++i)
      for (auto k : keys)
        if (s_.entries[i].first == k) used_[i] = true;
  }

  void warn_unused() {
    for (std::size_t i = 0; i < s_.entries.size(); ++i)
      if (!used_[i])
        warnings_.push_back("line " + std::to_string(s_.entry_lines[i]) + ": ignored key '" +
                            s_.entries[i].first + "' in [" + s_.type + "]");
  }

 private:
  const Section& s_;
  std::vector<std::string>& warnings_;
  std::vector<bool> used_;
};

inline std::size_t positive(long long v, int line, const char* what) {
  if (v <= 0) throw ParseError(line, std::string(what) + " must be positive");
  return static_cast<std::size_t>(v);
}

}  // namespace detail

/// Parses a Darknet-style description: `[section]` headers followed by
/// `key=value` lines, `#` or `;` comments.
inline NetworkModel parse_cfg(std::string_view text, std::string name = {}) {
  using detail::Section;
  std::vector<Section> sections;
  std::istringstream in{std::string(text)};
  std::string raw;
  int lineno = 0;
  while (std::getline(in, raw)) {
    ++lineno;
    if (auto h = raw.find_first_of("#;"); h != std::string::npos) raw.resize(h);
    const std::string line = detail::trim(raw);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']' || line.size() < 3) throw ParseError(lineno, "malformed section header '" + line + "'");
      sections.push_back({detail::trim(std::string_view(line).substr(1, line.size() - 2)), lineno, {}, {}});
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ParseError(lineno, "expected key=value, got '" + line + "'");
    if (sections.empty()) throw ParseError(lineno, "key=value before any section");
    const std::string key = detail::trim(std::string_view(line).substr(0, eq));
    if (key.empty()) throw ParseError(lineno, "empty key");
    sections.back().entries.emplace_back(key, detail::trim(std::string_view(line).substr(eq + 1)));
    sections.back().entry_lines.push_back(lineno);
  }
  if (sections.empty() || (sections[0].type != "net" && sections[0].type != "network"))
    throw ParseError(sections.empty() ? 1 : sections[0].line, "description must start with [net]");

  NetworkModel model;
  model.name = std::move(name);
  {
    detail::SectionReader r(sections[0], model.warnings);
    model.width = detail::positive(r.integer("width", 0), sections[0].line, "[net] width");
    model.height = detail::positive(r.integer("height", 0), sections[0].line, "[net] height");
    model.channels = detail::positive(r.integer("channels", 3), sections[0].line, "[net] channels");
    r.warn_unused();
  }

  std::size_t c = model.channels, h = model.height, w = model.width;
  for (std::size_t si = 1; si < sections.size(); ++si) {
    const Section& s = sections[si];
    detail::SectionReader r(s, model.warnings);
    LayerDescriptor l;
    l.index = model.layers.size();
    l.type = s.type;
    l.line = s.line;
    l.in_c = c;
    l.in_h = h;
    l.in_w = w;
    auto resolve = [&](long long ref) -> std::size_t {
      const long long abs = ref < 0 ? static_cast<long long>(l.index) + ref : ref;
      if (abs < 0 || abs >= static_cast<long long>(l.index))
        throw ParseError(s.line, "layer reference " + std::to_string(ref) + " out of range");
      return static_cast<std::size_t>(abs);
    };

    if (s.type == "convolutional") {
      l.kind = LayerKind::convolutional;
      l.filters = detail::positive(r.integer("filters", 1), s.line, "filters");
      l.size = detail::positive(r.integer("size", 1), s.line, "size");
      l.stride = detail::positive(r.integer("stride", 1), s.line, "stride");
      const long long pad_flag = r.integer("pad", 0);
      long long padding = pad_flag ? static_cast<long long>(l.size / 2) : 0;
      padding = r.integer("padding", padding);
      if (padding < 0) throw ParseError(s.line, "padding must be non-negative");
      l.pad = static_cast<std::size_t>(padding);
      r.ignore({"activation", "batch_normalize", "groups"});
      if (h + 2 * l.pad < l.size || w + 2 * l.pad < l.size)
        throw ParseError(s.line, "kernel larger than padded input");
      l.out_c = l.filters;
      l.out_h = (h + 2 * l.pad - l.size) / l.stride + 1;
      l.out_w = (w + 2 * l.pad - l.size) / l.stride + 1;
    } else if (s.type == "shortcut") {
      l.kind = LayerKind::shortcut;
      const std::size_t src = resolve(r.integer("from", 0));
      const auto& from = model.layers[src];
      if (from.out_c != c || from.out_h != h || from.out_w != w)
        throw ParseError(s.line, "shortcut source layer " + std::to_string(src) + " shape differs from input");
      l.sources = {l.index - 1, src};
      r.ignore({"activation"});
      l.out_c = c;
      l.out_h = h;
      l.out_w = w;
    } else if (s.type == "maxpool") {
      l.kind = LayerKind::other;
      l.stride = detail::positive(r.integer("stride", 1), s.line, "stride");
      l.size = detail::positive(r.integer("size", static_cast<long long>(l.stride)), s.line, "size");
      const long long padding = r.integer("padding", static_cast<long long>(l.size) - 1);
      if (padding < 0) throw ParseError(s.line, "padding must be non-negative");
      l.pad = static_cast<std::size_t>(padding);
      if (h + l.pad < l.size || w + l.pad < l.size) throw ParseError(s.line, "pool window larger than input");
      l.out_c = c;
      l.out_h = (h + l.pad - l.size) / l.stride + 1;
      l.out_w = (w + l.pad - l.size) / l.stride + 1;
    } else if (s.type == "upsample") {
      l.kind = LayerKind::other;
      l.stride = detail::positive(r.integer("stride", 2), s.line, "stride");
      l.out_c = c;
      l.out_h = h * l.stride;
      l.out_w = w * l.stride;
    } else if (s.type == "route") {
      l.kind = LayerKind::other;
      std::size_t total_c = 0;
      for (long long ref : r.integer_list("layers")) {
        const std::size_t src = resolve(ref);
        const auto& from = model.layers[src];
        if (!l.sources.empty() && (from.out_h != model.layers[l.sources[0]].out_h ||
                                   from.out_w != model.layers[l.sources[0]].out_w))
          throw ParseError(s.line, "route inputs have different spatial sizes");
        l.sources.push_back(src);
        total_c += from.out_c;
      }
      l.out_c = total_c;
      l.out_h = model.layers[l.sources[0]].out_h;
      l.out_w = model.layers[l.sources[0]].out_w;
    } else {
      // yolo, dropout, ... : shape-neutral here.
      l.kind = LayerKind::other;
      if (s.type != "yolo") model.warnings.push_back("line " + std::to_string(s.line) + ": section [" + s.type +
                                                     "] treated as shape-neutral");
      r.ignore({"mask", "anchors", "classes", "num", "jitter", "ignore_thresh", "truth_thresh", "random",
                "probability"});
      l.out_c = c;
      l.out_h = h;
      l.out_w = w;
    }
    r.warn_unused();
    c = l.out_c;
    h = l.out_h;
    w = l.out_w;
    model.layers.push_back(std::move(l));
  }
  return model;
}

inline NetworkModel load_cfg(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("cannot open network description '" + path + "'");
  std::stringstream ss;
  ss << f.rdbuf();
  std::string name = path;
  if (auto slash = name.find_last_of('/'); slash != std::string::npos) name = name.substr(slash + 1);
  if (auto dot = name.rfind(".cfg"); dot != std::string::npos && dot + 4 == name.size()) name.resize(dot);
  return parse_cfg(ss.str(), name);
}

// ---- inference ----

struct RunConfig {
  VectorMachineConfig machine;
  CacheConfig cache;                   // L1 and line geometry, default L2
  std::vector<std::size_t> l2_bytes;   // one cache hierarchy per entry; empty = cache.l2_bytes
  CostModel cost;
  RunMode mode = RunMode::hybrid;
  StrategyConfig strategy;
  DispatchPolicy policy;
  std::uint64_t seed = 1;
  bool keep_outputs = false;
};

struct LayerRun {
  std::size_t index = 0;
  LayerKind kind = LayerKind::other;
  Algorithm algorithm = Algorithm::none;
  std::vector<ExecStats> stats;  // one per cache hierarchy
  std::vector<float> output;     // only with keep_outputs
};

struct InferenceResult {
  std::vector<std::size_t> l2_bytes;
  std::vector<LayerRun> layers;
  std::vector<ExecStats> totals;
};

namespace detail {

inline std::uint64_t layer_seed(std::uint64_t seed, std::size_t layer) {
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ull * (layer + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

/// out = a + b, traced.
inline void vector_add(Machine& m, Address a, Address b, Address out, std::size_t n) {
  VectorValue x = m.make_vector(), y = m.make_vector();
  for (std::size_t i = 0; i < n;) {
    const std::size_t gvl = m.set_vector_length(n - i);
    m.load_unit(x, a + i * kElementBytes, gvl);
    m.load_unit(y, b + i * kElementBytes, gvl);
    m.elementwise_into(x, ElemOp::add, x, y, gvl);
    m.store_unit(x, out + i * kElementBytes, gvl);
    i += gvl;
  }
}

inline std::vector<float> maxpool_host(const std::vector<float>& in, const LayerDescriptor& l) {
  std::vector<float> out(l.out_c * l.out_h * l.out_w);
  const auto off = -static_cast<std::int64_t>(l.pad / 2);
  for (std::size_t c = 0; c < l.out_c; ++c)
    for (std::size_t y = 0; y < l.out_h; ++y)
      for (std::size_t x = 0; x < l.out_w; ++x) {
        float best = -std::numeric_limits<float>::infinity();
        for (std::size_t i = 0; i < l.size; ++i)
          for (std::size_t j = 0; j < l.size; ++j) {
            const std::int64_t iy = off + static_cast<std::int64_t>(y * l.stride + i);
            const std::int64_t ix = off + static_cast<std::int64_t>(x * l.stride + j);
            if (iy < 0 || ix < 0 || iy >= static_cast<std::int64_t>(l.in_h) || ix >= static_cast<std::int64_t>(l.in_w))
              continue;
            best = std::max(best, in[(c * l.in_h + static_cast<std::size_t>(iy)) * l.in_w + static_cast<std::size_t>(ix)]);
          }
        out[(c * l.out_h + y) * l.out_w + x] = best;
      }
  return out;
}

inline std::vector<float> upsample_host(const std::vector<float>& in, const LayerDescriptor& l) {
  std::vector<float> out(l.out_c * l.out_h * l.out_w);
  for (std::size_t c = 0; c < l.out_c; ++c)
    for (std::size_t y = 0; y < l.out_h; ++y)
      for (std::size_t x = 0; x < l.out_w; ++x)
        out[(c * l.out_h + y) * l.out_w + x] = in[(c * l.in_h + y / l.stride) * l.in_w + x / l.stride];
  return out;
}

}  // namespace detail

/// Runs every layer on one machine whose trace feeds one cache hierarchy
/// per requested L2 size. Inputs and weights are seeded uniform [-1, 1].
inline InferenceResult run_network_inference(const NetworkModel& model, const RunConfig& cfg) {
  cfg.machine.validate();
  InferenceResult res;
  res.l2_bytes = cfg.l2_bytes.empty() ? std::vector<std::size_t>{cfg.cache.l2_bytes} : cfg.l2_bytes;
  std::vector<std::unique_ptr<StatsCollector>> collectors;
  TeeSink tee;
  for (std::size_t l2 : res.l2_bytes) {
    CacheConfig cc = cfg.cache;
    cc.l2_bytes = l2;
    collectors.push_back(std::make_unique<StatsCollector>(cc, cfg.cost));
    tee.add(collectors.back().get());
  }
  TraceSink* sink = collectors.size() == 1 ? static_cast<TraceSink*>(collectors[0].get()) : &tee;
  Machine m(cfg.machine, sink);
  auto snapshot = [&] {
    std::vector<ExecStats> s;
    for (const auto& c : collectors) s.push_back(c->stats());
    return s;
  };

  const Address input = m.allocate(model.channels * model.height * model.width);
  m.write_host(input, uniform_values(model.channels * model.height * model.width, cfg.seed));
  std::vector<Address> outputs;
  for (const auto& l : model.layers) {
    const Address in_addr = l.index == 0 ? input : outputs[l.index - 1];
    const std::size_t out_n = l.out_c * l.out_h * l.out_w;
    LayerRun run;
    run.index = l.index;
    run.kind = l.kind;
    run.algorithm = select_algorithm(l, cfg.mode, cfg.policy);
    const auto before = snapshot();
    Address out_addr = 0;
    if (l.kind == LayerKind::convolutional) {
      out_addr = m.allocate(out_n);
      const std::size_t mark = m.memory_mark();
      const ConvShape shape = l.conv_shape();
      const Address w = m.allocate(shape.filter_elements());
      m.write_host(w, uniform_values(shape.filter_elements(), detail::layer_seed(cfg.seed, l.index)));
      if (run.algorithm == Algorithm::winograd) {
        conv_winograd(m, in_addr, w, out_addr, shape, cfg.strategy);
      } else {
        conv_im2col_gemm(m, in_addr, w, out_addr, shape);
      }
      m.release_to(mark);
    } else if (l.kind == LayerKind::shortcut) {
      out_addr = m.allocate(out_n);
      detail::vector_add(m, outputs[l.sources[0]], outputs[l.sources[1]], out_addr, out_n);
    } else if (l.type == "maxpool") {
      out_addr = m.allocate(out_n);
      m.write_host(out_addr, detail::maxpool_host(m.read_host(in_addr, l.in_c * l.in_h * l.in_w), l));
    } else if (l.type == "upsample") {
      out_addr = m.allocate(out_n);
      m.write_host(out_addr, detail::upsample_host(m.read_host(in_addr, l.in_c * l.in_h * l.in_w), l));
    } else if (l.type == "route") {
      out_addr = m.allocate(out_n);
      Address dst = out_addr;
      for (std::size_t src : l.sources) {
        const auto& s = model.layers[src];
        const std::size_t n = s.out_c * s.out_h * s.out_w;
        m.write_host(dst, m.read_host(outputs[src], n));
        dst += n * kElementBytes;
      }
    } else {
      out_addr = in_addr;
    }
    const auto after = snapshot();
    for (std::size_t i = 0; i < collectors.size(); ++i) run.stats.push_back(after[i].since(before[i]));
    if (cfg.keep_outputs) run.output = m.read_host(out_addr, out_n);
    outputs.push_back(out_addr);
    res.layers.push_back(std::move(run));
  }
  res.totals = snapshot();
  return res;
}

}  // namespace vlaconv
