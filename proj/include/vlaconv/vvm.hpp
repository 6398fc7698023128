#pragma once

// Vector-length-agnostic virtual vector machine.
//
// Every instruction executed by a Machine is reported to an optional
// TraceSink as one InstructionRecord. Memory lives in a single flat,
// byte-addressed region owned by the machine; host-side reads and writes
// (tensor initialisation, result readback) bypass the trace.

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <deque>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "vlaconv/error.hpp"

namespace vlaconv {

using Address = std::uint64_t;

inline constexpr std::size_t kElementBytes = 4;

struct VectorMachineConfig {
  std::size_t vlen_bits = 512;
  static constexpr std::size_t element_width = 32;

  std::size_t vlmax() const noexcept { return vlen_bits / element_width; }

  void validate() const {
    if (!std::has_single_bit(vlen_bits) || vlen_bits < 128 || vlen_bits > 16384)
      throw ConfigError("vlen_bits must be a power of two in [128, 16384], got " +
                        std::to_string(vlen_bits));
  }
};

enum class OpClass : std::uint8_t {
  arith,
  fma,
  slide,
  mem_unit,
  mem_strided,
  mem_indexed,
  permute,
  reduce,
  setvl,
  scalar,
};

inline constexpr std::size_t kOpClassCount = 10;

inline const char* to_string(OpClass c) noexcept {
  switch (c) {
    case OpClass::arith: return "arith";
    case OpClass::fma: return "fma";
    case OpClass::slide: return "slide";
    case OpClass::mem_unit: return "mem_unit";
    case OpClass::mem_strided: return "mem_strided";
    case OpClass::mem_indexed: return "mem_indexed";
    case OpClass::permute: return "permute";
    case OpClass::reduce: return "reduce";
    case OpClass::setvl: return "setvl";
    case OpClass::scalar: return "scalar";
  }
  return "?";
}

inline bool is_memory_class(OpClass c) noexcept {
  return c == OpClass::mem_unit || c == OpClass::mem_strided || c == OpClass::mem_indexed;
}

enum class MemKind : std::uint8_t {
  load_unit,
  store_unit,
  load_strided,
  store_strided,
  load_indexed,
  store_indexed,
};

inline const char* to_string(MemKind k) noexcept {
  switch (k) {
    case MemKind::load_unit: return "load_unit";
    case MemKind::store_unit: return "store_unit";
    case MemKind::load_strided: return "load_strided";
    case MemKind::store_strided: return "store_strided";
    case MemKind::load_indexed: return "load_indexed";
    case MemKind::store_indexed: return "store_indexed";
  }
  return "?";
}

/// One vector memory access. Unit and strided events describe their
/// addresses by (base, stride); indexed events carry the address list,
/// which is only valid for the duration of the TraceSink::record call.
struct MemoryEvent {
  MemKind kind = MemKind::load_unit;
  Address base = 0;
  std::uint32_t element_count = 0;
  std::int64_t stride_bytes = static_cast<std::int64_t>(kElementBytes);
  std::span<const Address> indexed_addresses;

  bool is_store() const noexcept {
    return kind == MemKind::store_unit || kind == MemKind::store_strided ||
           kind == MemKind::store_indexed;
  }
  bool is_indexed() const noexcept {
    return kind == MemKind::load_indexed || kind == MemKind::store_indexed;
  }

  Address address(std::size_t i) const noexcept {
    if (is_indexed()) return indexed_addresses[i];
    return static_cast<Address>(static_cast<std::int64_t>(base) +
                                static_cast<std::int64_t>(i) * stride_bytes);
  }

  std::vector<Address> per_element_addresses() const {
    std::vector<Address> out(element_count);
    for (std::size_t i = 0; i < element_count; ++i) out[i] = address(i);
    return out;
  }
};

struct InstructionRecord {
  OpClass op = OpClass::scalar;
  std::uint32_t gvl = 0;
  std::uint64_t flops = 0;
  std::optional<MemoryEvent> memory;  // present iff op is a memory class
};

class TraceSink {
 public:
  virtual ~TraceSink() = default;
  virtual void record(const InstructionRecord& rec) = 0;
};

/// Keeps an owned copy of every record, for replay and inspection.
class TraceRecorder final : public TraceSink {
 public:
  void record(const InstructionRecord& rec) override {
    InstructionRecord copy = rec;
    if (copy.memory && copy.memory->is_indexed()) {
      const auto& src = copy.memory->indexed_addresses;
      auto& owned = address_pool_.emplace_back(src.begin(), src.end());
      copy.memory->indexed_addresses = owned;
    }
    records_.push_back(copy);
  }

  const std::vector<InstructionRecord>& records() const noexcept { return records_; }
  std::size_t size() const noexcept { return records_.size(); }

  std::size_t count(OpClass c) const {
    return static_cast<std::size_t>(
        std::count_if(records_.begin(), records_.end(),
                      [c](const InstructionRecord& r) { return r.op == c; }));
  }

  void clear() {
    records_.clear();
    address_pool_.clear();
  }

 private:
  std::vector<InstructionRecord> records_;
  std::deque<std::vector<Address>> address_pool_;
};

/// Forwards each record to several sinks, in registration order.
class TeeSink final : public TraceSink {
 public:
  void add(TraceSink* sink) { sinks_.push_back(sink); }
  void record(const InstructionRecord& rec) override {
    for (auto* s : sinks_) s->record(rec);
  }

 private:
  std::vector<TraceSink*> sinks_;
};

/// Debug dump: one line per record, "opcode_class gvl address_count".
class TextTraceSink final : public TraceSink {
 public:
  explicit TextTraceSink(std::ostream& os) : os_(os) {}
  void record(const InstructionRecord& rec) override {
    os_ << to_string(rec.op) << ' ' << rec.gvl << ' '
        << (rec.memory ? rec.memory->element_count : 0u) << '\n';
  }

 private:
  std::ostream& os_;
};

class Machine;

/// A vector register value: vlmax fp32 lanes, of which the first
/// `active()` were produced by the last instruction writing it. Lanes at
/// or beyond active() are zero.
class VectorValue {
 public:
  VectorValue() = default;
  explicit VectorValue(std::size_t vlmax) : lanes_(vlmax, 0.0f) {}

  /// Host-side construction (tests, index vectors built outside the trace).
  static VectorValue from_lanes(std::size_t vlmax, std::span<const float> values) {
    if (values.size() > vlmax) throw ArgumentError("more lane values than vlmax");
    VectorValue v(vlmax);
    std::copy(values.begin(), values.end(), v.lanes_.begin());
    v.active_ = values.size();
    return v;
  }

  std::size_t size() const noexcept { return lanes_.size(); }
  std::size_t active() const noexcept { return active_; }
  float operator[](std::size_t i) const { return lanes_[i]; }
  std::span<const float> lanes() const noexcept { return lanes_; }
  std::span<const float> active_lanes() const noexcept {
    return std::span<const float>(lanes_).first(active_);
  }

  friend bool operator==(const VectorValue&, const VectorValue&) = default;

 private:
  friend class Machine;

  float* data() noexcept { return lanes_.data(); }
  const float* data() const noexcept { return lanes_.data(); }

  // Marks [0, gvl) as written and zeroes whatever stale tail remains.
  void set_active(std::size_t gvl) noexcept {
    if (active_ > gvl) std::fill(lanes_.begin() + gvl, lanes_.begin() + active_, 0.0f);
    active_ = gvl;
  }

  std::vector<float> lanes_;
  std::size_t active_ = 0;
};

enum class ElemOp : std::uint8_t { add, sub, mul };

class Machine {
 public:
  explicit Machine(VectorMachineConfig config, TraceSink* sink = nullptr)
      : config_(config), sink_(sink) {
    config_.validate();
    vlmax_ = config_.vlmax();
  }

  Machine(const Machine&) = delete;
  Machine& operator=(const Machine&) = delete;

  const VectorMachineConfig& config() const noexcept { return config_; }
  std::size_t vlmax() const noexcept { return vlmax_; }
  TraceSink* sink() const noexcept { return sink_; }
  void set_sink(TraceSink* sink) noexcept { sink_ = sink; }

  VectorValue make_vector() const { return VectorValue(vlmax_); }

  // ---- memory management (untraced) ----

  /// Reserves `elements` zeroed fp32 words, 64-byte aligned.
  Address allocate(std::size_t elements) {
    const std::size_t start = (top_ + 15) & ~std::size_t{15};
    const std::size_t end = start + elements;
    if (memory_.size() < end) memory_.resize(std::max(end, memory_.size() + memory_.size() / 2));
    std::fill(memory_.begin() + static_cast<std::ptrdiff_t>(start),
              memory_.begin() + static_cast<std::ptrdiff_t>(end), 0.0f);
    top_ = end;
    return start * kElementBytes;
  }

  std::size_t memory_mark() const noexcept { return top_; }
  void release_to(std::size_t mark) {
    if (mark > top_) throw ArgumentError("release mark beyond allocation top");
    top_ = mark;
  }
  std::size_t allocated_bytes() const noexcept { return top_ * kElementBytes; }

  void write_host(Address addr, std::span<const float> values) {
    const std::size_t w = word_index(addr, values.size());
    std::copy(values.begin(), values.end(), memory_.begin() + static_cast<std::ptrdiff_t>(w));
  }
  void read_host(Address addr, std::span<float> out) const {
    const std::size_t w = word_index(addr, out.size());
    std::copy_n(memory_.begin() + static_cast<std::ptrdiff_t>(w), out.size(), out.begin());
  }
  std::vector<float> read_host(Address addr, std::size_t count) const {
    std::vector<float> out(count);
    read_host(addr, out);
    return out;
  }
  float peek(Address addr) const { return memory_[word_index(addr, 1)]; }
  void poke(Address addr, float v) { memory_[word_index(addr, 1)] = v; }

  // ---- configuration ----

  std::size_t set_vector_length(std::size_t avl) {
    const std::size_t gvl = std::min(avl, vlmax_);
    emit(OpClass::setvl, gvl, 0);
    return gvl;
  }

  /// Loop-control / address arithmetic on the scalar core.
  void scalar(std::size_t count = 1) {
    for (std::size_t i = 0; i < count; ++i) emit(OpClass::scalar, 0, 0);
  }

  // ---- memory instructions ----

  void load_unit(VectorValue& dst, Address addr, std::size_t gvl) {
    check_vector(dst, gvl);
    const std::size_t w = word_index(addr, gvl);
    std::copy_n(memory_.data() + w, gvl, dst.data());
    dst.set_active(gvl);
    emit_mem(OpClass::mem_unit, MemKind::load_unit, addr, gvl, kElementBytes);
  }
  VectorValue load_unit(Address addr, std::size_t gvl) {
    VectorValue v = make_vector();
    load_unit(v, addr, gvl);
    return v;
  }

  void store_unit(const VectorValue& src, Address addr, std::size_t gvl) {
    check_vector(src, gvl);
    const std::size_t w = word_index(addr, gvl);
    std::copy_n(src.data(), gvl, memory_.data() + w);
    emit_mem(OpClass::mem_unit, MemKind::store_unit, addr, gvl, kElementBytes);
  }

  /// A single fp32 read by the scalar core; traced as a one-element
  /// unit-stride access so it reaches the cache model.
  float load_scalar(Address addr) {
    const float v = memory_[word_index(addr, 1)];
    emit_mem(OpClass::mem_unit, MemKind::load_unit, addr, 1, kElementBytes);
    return v;
  }

  void load_strided(VectorValue& dst, Address addr, std::int64_t stride_bytes, std::size_t gvl) {
    check_vector(dst, gvl);
    check_strided(addr, stride_bytes, gvl);
    const float* mem = memory_.data();
    const std::int64_t step = stride_bytes / static_cast<std::int64_t>(kElementBytes);
    auto w = static_cast<std::int64_t>(addr / kElementBytes);
    float* out = dst.data();
    for (std::size_t i = 0; i < gvl; ++i, w += step) out[i] = mem[w];
    dst.set_active(gvl);
    emit_mem(OpClass::mem_strided, MemKind::load_strided, addr, gvl, stride_bytes);
  }
  VectorValue load_strided(Address addr, std::int64_t stride_bytes, std::size_t gvl) {
    VectorValue v = make_vector();
    load_strided(v, addr, stride_bytes, gvl);
    return v;
  }

  void store_strided(const VectorValue& src, Address addr, std::int64_t stride_bytes,
                     std::size_t gvl) {
    check_vector(src, gvl);
    if (stride_bytes == 0 && gvl > 1)
      throw ArgumentError("store_strided: zero stride makes lanes collide");
    check_strided(addr, stride_bytes, gvl);
    float* mem = memory_.data();
    const std::int64_t step = stride_bytes / static_cast<std::int64_t>(kElementBytes);
    auto w = static_cast<std::int64_t>(addr / kElementBytes);
    for (std::size_t i = 0; i < gvl; ++i, w += step) mem[w] = src.data()[i];
    emit_mem(OpClass::mem_strided, MemKind::store_strided, addr, gvl, stride_bytes);
  }

  /// Lane i reads the word at base + 4 * index[i].
  void load_indexed(VectorValue& dst, Address base, const VectorValue& index, std::size_t gvl) {
    check_vector(dst, gvl);
    check_vector(index, gvl);
    gather_addresses(base, index, gvl);
    const float* mem = memory_.data();
    float* out = dst.data();
    for (std::size_t i = 0; i < gvl; ++i) out[i] = mem[addresses_[i] / kElementBytes];
    dst.set_active(gvl);
    emit_indexed(MemKind::load_indexed, base, gvl);
  }
  VectorValue load_indexed(Address base, const VectorValue& index, std::size_t gvl) {
    VectorValue v = make_vector();
    load_indexed(v, base, index, gvl);
    return v;
  }

  void store_indexed(const VectorValue& src, Address base, const VectorValue& index,
                     std::size_t gvl) {
    check_vector(src, gvl);
    check_vector(index, gvl);
    gather_addresses(base, index, gvl);
    float* mem = memory_.data();
    for (std::size_t i = 0; i < gvl; ++i) mem[addresses_[i] / kElementBytes] = src.data()[i];
    emit_indexed(MemKind::store_indexed, base, gvl);
  }

  // ---- permutation ----

  /// dest[i] keeps its value for i < offset; dest[i] = src[i - offset]
  /// for offset <= i < gvl. `dest` and `src` may be the same register.
  void slide_up_into(VectorValue& dest, const VectorValue& src, std::size_t offset,
                     std::size_t gvl) {
    check_vector(dest, gvl);
    check_vector(src, gvl);
    if (offset > gvl) throw ArgumentError("slide_up: offset exceeds gvl");
    float* d = dest.data();
    const float* s = src.data();
    for (std::size_t i = gvl; i-- > offset;) d[i] = s[i - offset];
    dest.set_active(gvl);
    emit(OpClass::slide, gvl, 0);
  }
  VectorValue slide_up(const VectorValue& dest, const VectorValue& src, std::size_t offset,
                       std::size_t gvl) {
    VectorValue r = dest;
    slide_up_into(r, src, offset, gvl);
    return r;
  }

  /// dest[i] = src[i + offset] while i + offset < gvl, zero above.
  void slide_down_into(VectorValue& dest, const VectorValue& src, std::size_t offset,
                       std::size_t gvl) {
    check_vector(dest, gvl);
    check_vector(src, gvl);
    if (offset > gvl) throw ArgumentError("slide_down: offset exceeds gvl");
    float* d = dest.data();
    const float* s = src.data();
    for (std::size_t i = 0; i < gvl; ++i) d[i] = i + offset < gvl ? s[i + offset] : 0.0f;
    dest.set_active(gvl);
    emit(OpClass::slide, gvl, 0);
  }
  VectorValue slide_down(const VectorValue& src, std::size_t offset, std::size_t gvl) {
    VectorValue r = make_vector();
    slide_down_into(r, src, offset, gvl);
    return r;
  }

  // ---- arithmetic ----

  /// acc[i] = acc[i] + a[i] * b[i], fused, single rounding.
  void fmacc(VectorValue& acc, const VectorValue& a, const VectorValue& b, std::size_t gvl) {
    check_vector(acc, gvl);
    check_vector(a, gvl);
    check_vector(b, gvl);
    float* d = acc.data();
    const float* x = a.data();
    const float* y = b.data();
    for (std::size_t i = 0; i < gvl; ++i) d[i] = std::fma(x[i], y[i], d[i]);
    acc.set_active(gvl);
    emit(OpClass::fma, gvl, 2 * gvl);
  }
  VectorValue fused_multiply_accumulate(const VectorValue& acc, const VectorValue& a,
                                        const VectorValue& b, std::size_t gvl) {
    VectorValue r = acc;
    fmacc(r, a, b, gvl);
    return r;
  }

  void elementwise_into(VectorValue& dst, ElemOp op, const VectorValue& a, const VectorValue& b,
                        std::size_t gvl) {
    check_vector(dst, gvl);
    check_vector(a, gvl);
    check_vector(b, gvl);
    float* d = dst.data();
    const float* x = a.data();
    const float* y = b.data();
    switch (op) {
      case ElemOp::add:
        for (std::size_t i = 0; i < gvl; ++i) d[i] = x[i] + y[i];
        break;
      case ElemOp::sub:
        for (std::size_t i = 0; i < gvl; ++i) d[i] = x[i] - y[i];
        break;
      case ElemOp::mul:
        for (std::size_t i = 0; i < gvl; ++i) d[i] = x[i] * y[i];
        break;
    }
    dst.set_active(gvl);
    emit(OpClass::arith, gvl, gvl);
  }
  VectorValue elementwise(ElemOp op, const VectorValue& a, const VectorValue& b, std::size_t gvl) {
    VectorValue r = make_vector();
    elementwise_into(r, op, a, b, gvl);
    return r;
  }

  void scale_into(VectorValue& dst, const VectorValue& a, float s, std::size_t gvl) {
    check_vector(dst, gvl);
    check_vector(a, gvl);
    float* d = dst.data();
    const float* x = a.data();
    for (std::size_t i = 0; i < gvl; ++i) d[i] = x[i] * s;
    dst.set_active(gvl);
    emit(OpClass::arith, gvl, gvl);
  }
  VectorValue scale_by_scalar(const VectorValue& a, float s, std::size_t gvl) {
    VectorValue r = make_vector();
    scale_into(r, a, s, gvl);
    return r;
  }

  void broadcast_into(VectorValue& dst, float s, std::size_t gvl) {
    check_vector(dst, gvl);
    std::fill_n(dst.data(), gvl, s);
    dst.set_active(gvl);
    emit(OpClass::arith, gvl, 0);
  }
  VectorValue broadcast_scalar(float s, std::size_t gvl) {
    VectorValue r = make_vector();
    broadcast_into(r, s, gvl);
    return r;
  }

  /// Sequential sum of lanes [0, gvl).
  float reduce_sum(const VectorValue& a, std::size_t gvl) {
    check_vector(a, gvl);
    float s = 0.0f;
    for (std::size_t i = 0; i < gvl; ++i) s += a.data()[i];
    emit(OpClass::reduce, gvl, gvl > 0 ? gvl - 1 : 0);
    return s;
  }

 private:
  void emit(OpClass op, std::size_t gvl, std::size_t flops) {
    if (!sink_) return;
    InstructionRecord rec;
    rec.op = op;
    rec.gvl = static_cast<std::uint32_t>(gvl);
    rec.flops = flops;
    sink_->record(rec);
  }

  void emit_mem(OpClass op, MemKind kind, Address base, std::size_t count,
                std::int64_t stride) {
    if (!sink_) return;
    InstructionRecord rec;
    rec.op = op;
    rec.gvl = static_cast<std::uint32_t>(count);
    MemoryEvent ev;
    ev.kind = kind;
    ev.base = base;
    ev.element_count = static_cast<std::uint32_t>(count);
    ev.stride_bytes = stride;
    rec.memory = ev;
    sink_->record(rec);
  }

  void emit_indexed(MemKind kind, Address base, std::size_t count) {
    if (!sink_) return;
    InstructionRecord rec;
    rec.op = OpClass::mem_indexed;
    rec.gvl = static_cast<std::uint32_t>(count);
    MemoryEvent ev;
    ev.kind = kind;
    ev.base = base;
    ev.element_count = static_cast<std::uint32_t>(count);
    ev.stride_bytes = 0;
    ev.indexed_addresses = std::span<const Address>(addresses_.data(), count);
    rec.memory = ev;
    sink_->record(rec);
  }

  void check_vector(const VectorValue& v, std::size_t gvl) const {
    if (v.size() != vlmax_) throw ArgumentError("vector operand belongs to a different machine");
    if (gvl > vlmax_)
      throw ArgumentError("gvl " + std::to_string(gvl) + " exceeds vlmax " +
                          std::to_string(vlmax_));
  }

  std::size_t word_index(Address addr, std::size_t count) const {
    if (addr % kElementBytes != 0)
      throw FaultError("misaligned access at address " + std::to_string(addr));
    const std::size_t w = addr / kElementBytes;
    if (w > top_ || count > top_ - w)
      throw FaultError("access outside simulated memory at address " + std::to_string(addr));
    return w;
  }

  void check_strided(Address addr, std::int64_t stride, std::size_t gvl) const {
    if (stride % static_cast<std::int64_t>(kElementBytes) != 0)
      throw ArgumentError("stride must be a multiple of 4 bytes");
    if (gvl == 0) return;
    const auto first = static_cast<std::int64_t>(addr);
    const std::int64_t last = first + static_cast<std::int64_t>(gvl - 1) * stride;
    const std::int64_t lo = std::min(first, last);
    const std::int64_t hi = std::max(first, last);
    if (lo < 0) throw FaultError("strided access below address 0");
    word_index(static_cast<Address>(lo), 1);
    word_index(static_cast<Address>(hi), 1);
  }

  void gather_addresses(Address base, const VectorValue& index, std::size_t gvl) {
    if (addresses_.size() < vlmax_) addresses_.resize(vlmax_);
    for (std::size_t i = 0; i < gvl; ++i) {
      const float idx = index.data()[i];
      if (!(idx >= 0.0f) || idx != std::floor(idx) || idx >= 16777216.0f)
        throw ArgumentError("lane " + std::to_string(i) + " holds an invalid index");
      const Address a = base + static_cast<Address>(idx) * kElementBytes;
      const std::size_t w = a / kElementBytes;
      if (a % kElementBytes != 0 || w >= top_)
        throw FaultError("indexed access out of bounds in lane " + std::to_string(i) +
                         " (address " + std::to_string(a) + ")");
      addresses_[i] = a;
    }
  }

  VectorMachineConfig config_;
  std::size_t vlmax_ = 0;
  TraceSink* sink_ = nullptr;
  std::vector<float> memory_;
  std::size_t top_ = 0;
  std::vector<Address> addresses_;
};

}  // namespace vlaconv
