#pragma once

// Winograd F(6x6, 3x3) convolution on the virtual vector machine.
//
// Pipeline per layer: input tiles are transformed once into V; output
// channels are then processed in groups of `blocks = vlmax / 4`, and for
// each group the filters are transformed into a U slice, multiplied
// against V into an M slice and transformed back into the output. Only
// one group's U and M are resident at a time; layers with many input
// channels fill U one channel block at a time, accumulating into M.
//
// Packed layouts (all fp32, 16-byte quads):
//   V[t][q][c][s]            value V_t,c(4q + s)
//   U[g][q][c][f_rel][s]     value U_{f0 + f_rel},c(4q + s)
//   M[g][t][q][f_rel][s]     value M_{f0 + f_rel},t(4q + s)
// so that one unit-stride load of U or M yields lanes (f_rel, s).

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "vlaconv/conv_shape.hpp"
#include "vlaconv/error.hpp"
#include "vlaconv/vvm.hpp"

namespace vlaconv {

enum class ReplicateStrategy { indexed, slide };
enum class TransposeStrategy { indexed, strided };

struct StrategyConfig {
  ReplicateStrategy replicate = ReplicateStrategy::slide;
  TransposeStrategy transpose = TransposeStrategy::strided;
};

inline const char* to_string(ReplicateStrategy r) noexcept {
  return r == ReplicateStrategy::indexed ? "indexed" : "slide";
}
inline const char* to_string(TransposeStrategy t) noexcept {
  return t == TransposeStrategy::indexed ? "indexed" : "strided";
}

// ---- transform matrices ----

/// Y = A^T [(G g G^T) . (B^T d B)] A for an 8x8 tile d and 3x3 filter g.
struct WinogradMatrices {
  std::array<std::array<double, 8>, 8> B{};
  std::array<std::array<double, 3>, 8> G{};
  std::array<std::array<double, 6>, 8> A{};
};

/// Cook-Toom construction over the points {0, 1, -1, 2, -2, 1/2, -1/2, inf}.
inline WinogradMatrices build_winograd_matrices() {
  constexpr std::array<double, 7> p = {0.0, 1.0, -1.0, 2.0, -2.0, 0.5, -0.5};
  WinogradMatrices w;
  // Coefficients (ascending powers) of prod over l != skip of (x - p_l).
  auto poly = [&](int skip) {
    std::array<double, 8> c{};
    c[0] = 1.0;
    int deg = 0;
    for (int l = 0; l < 7; ++l) {
      if (l == skip) continue;
      for (int i = deg + 1; i > 0; --i) c[i] = c[i - 1] - p[l] * c[i];
      c[0] = -p[l] * c[0];
      ++deg;
    }
    return c;
  };
  for (int j = 0; j < 7; ++j) {
    double f = 1.0;
    for (int l = 0; l < 7; ++l)
      if (l != j) f *= p[j] - p[l];
    for (int i = 0; i < 6; ++i) w.A[j][i] = std::pow(p[j], i);
    for (int k = 0; k < 3; ++k) w.G[j][k] = std::pow(p[j], k) / f;
    const auto c = poly(j);
    for (int i = 0; i < 8; ++i) w.B[i][j] = c[i];
  }
  w.A[7][5] = 1.0;
  w.G[7][2] = 1.0;
  const auto full = poly(-1);
  for (int i = 0; i < 8; ++i) w.B[i][7] = full[i];
  return w;
}

namespace detail {
inline const WinogradMatrices*& matrices_override() noexcept {
  thread_local const WinogradMatrices* p = nullptr;
  return p;
}
}  // namespace detail

/// The matrices every kernel uses (built once).
inline const WinogradMatrices& winograd_matrices() {
  if (const WinogradMatrices* p = detail::matrices_override()) return *p;
  static const WinogradMatrices m = build_winograd_matrices();
  return m;
}

/// Fault-injection hook: kernels on this thread see `m` while the guard lives.
class ScopedMatrixOverride {
 public:
  explicit ScopedMatrixOverride(const WinogradMatrices& m) : prev_(detail::matrices_override()) {
    detail::matrices_override() = &m;
  }
  ~ScopedMatrixOverride() { detail::matrices_override() = prev_; }
  ScopedMatrixOverride(const ScopedMatrixOverride&) = delete;
  ScopedMatrixOverride& operator=(const ScopedMatrixOverride&) = delete;

 private:
  const WinogradMatrices* prev_;
};

/// Reference fp64 evaluation of the tile identity.
inline std::array<double, 36> winograd_tile_fp64(const WinogradMatrices& w,
                                                  const std::array<double, 64>& d,
                                                  const std::array<double, 9>& g) {
  std::array<double, 64> u{}, v{}, tmp{};
  // u = G g G^T
  for (int j = 0; j < 8; ++j)
    for (int kx = 0; kx < 3; ++kx) {
      double s = 0;
      for (int ky = 0; ky < 3; ++ky) s += w.G[j][ky] * g[ky * 3 + kx];
      tmp[j * 3 + kx] = s;
    }
  for (int j = 0; j < 8; ++j)
    for (int jj = 0; jj < 8; ++jj) {
      double s = 0;
      for (int kx = 0; kx < 3; ++kx) s += tmp[j * 3 + kx] * w.G[jj][kx];
      u[j * 8 + jj] = s;
    }
  // v = B^T d B
  for (int i = 0; i < 8; ++i)
    for (int k = 0; k < 8; ++k) {
      double s = 0;
      for (int j = 0; j < 8; ++j) s += d[i * 8 + j] * w.B[j][k];
      tmp[i * 8 + k] = s;
    }
  for (int a = 0; a < 8; ++a)
    for (int k = 0; k < 8; ++k) {
      double s = 0;
      for (int i = 0; i < 8; ++i) s += w.B[i][a] * tmp[i * 8 + k];
      v[a * 8 + k] = s;
    }
  std::array<double, 64> mm{};
  for (int e = 0; e < 64; ++e) mm[e] = u[e] * v[e];
  std::array<double, 48> t2{};
  for (int i = 0; i < 8; ++i)
    for (int b = 0; b < 6; ++b) {
      double s = 0;
      for (int j = 0; j < 8; ++j) s += mm[i * 8 + j] * w.A[j][b];
      t2[i * 6 + b] = s;
    }
  std::array<double, 36> y{};
  for (int a = 0; a < 6; ++a)
    for (int b = 0; b < 6; ++b) {
      double s = 0;
      for (int i = 0; i < 8; ++i) s += w.A[i][a] * t2[i * 6 + b];
      y[a * 6 + b] = s;
    }
  return y;
}

// ---- tile geometry ----

/// A 3x3 stride-1 layer cut into 6x6 output tiles.
struct TileGrid {
  std::size_t channels = 0;
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t filters = 0;
  std::size_t pad = 0;

  static TileGrid from(const ConvShape& s) {
    if (s.kernel != 3 || s.stride != 1)
      throw DispatchError("Winograd F(6x6,3x3) needs a 3x3 stride-1 layer, got k=" +
                          std::to_string(s.kernel) + " stride=" + std::to_string(s.stride));
    if (s.channels == 0) throw DispatchError("Winograd layer has no input channels");
    s.validate();
    return {s.channels, s.height, s.width, s.filters, s.pad};
  }

  std::size_t out_height() const noexcept { return height + 2 * pad - 2; }
  std::size_t out_width() const noexcept { return width + 2 * pad - 2; }
  std::size_t tiles_y() const noexcept { return (out_height() + 5) / 6; }
  std::size_t tiles_x() const noexcept { return (out_width() + 5) / 6; }
  std::size_t tiles() const noexcept { return tiles_y() * tiles_x(); }
};

/// Addresses of the packed transformed-domain tensors. With `fused` set,
/// every output-channel group shares a single U slice and M slice.
/// Upper bound on the transformed-filter bytes a fused group produces
/// before consuming them; deep layers are split into channel blocks.
inline constexpr std::size_t kFilterBlockBytes = std::size_t{256} << 10;

struct PackedDomain {
  std::size_t blocks = 0;
  std::size_t channels = 0;
  std::size_t channel_block = 0;  ///< channels per U slice

  std::size_t filters = 0;
  std::size_t tiles = 0;
  bool fused = false;
  Address v = 0;
  Address u = 0;
  Address m = 0;

  std::size_t groups() const noexcept { return (filters + blocks - 1) / blocks; }
  std::size_t group_begin(std::size_t g) const noexcept { return g * blocks; }
  std::size_t group_width(std::size_t g) const noexcept {
    return std::min(blocks, filters - g * blocks);
  }

  std::size_t v_elements() const noexcept { return 64 * tiles * channels; }
  /// Quad-rows between consecutive q in U; one spare row keeps the 16
  /// q-planes of a channel out of a single cache set.
  std::size_t u_pitch() const noexcept { return channel_block + 1; }
  std::size_t u_slice_elements() const noexcept { return 64 * u_pitch() * blocks; }
  std::size_t m_slice_elements() const noexcept { return 64 * tiles * blocks; }

  Address v_quad(std::size_t t, std::size_t q, std::size_t c) const noexcept {
    return v + ((t * 16 + q) * channels + c) * 16;
  }
  Address u_quad(std::size_t g, std::size_t q, std::size_t c) const noexcept {
    const Address base = u + (fused ? 0 : g * u_slice_elements() * kElementBytes);
    return base + (q * u_pitch() + c % channel_block) * group_width(g) * 16;
  }
  Address m_quad(std::size_t g, std::size_t t, std::size_t q) const noexcept {
    const Address base = m + (fused ? 0 : g * m_slice_elements() * kElementBytes);
    return base + (t * 16 + q) * group_width(g) * 16;
  }

  /// Reserves V, U and M in machine memory.
  static PackedDomain allocate(Machine& mach, const TileGrid& grid, bool fused) {
    PackedDomain p;
    p.blocks = mach.vlmax() / 4;
    p.channels = grid.channels;
    p.filters = grid.filters;
    p.tiles = grid.tiles();
    p.fused = fused;
    p.channel_block = p.channels;
    if (fused) {
      const std::size_t per_channel = 64 * p.blocks * kElementBytes;
      p.channel_block = std::clamp<std::size_t>(kFilterBlockBytes / per_channel, 1, p.channels);
    }
    const std::size_t copies = fused ? 1 : p.groups();
    p.v = mach.allocate(p.v_elements());
    p.u = mach.allocate(p.u_slice_elements() * copies);
    p.m = mach.allocate(p.m_slice_elements() * copies);
    return p;
  }
};

// ---- vector 1-D transforms ----

/// Applies a small constant matrix to a set of vector registers, one
/// output register per matrix row. Coefficients of +-1 become add/sub;
/// the rest use fmacc against pre-broadcast coefficient registers.
class VectorTransform {
 public:
  template <std::size_t Rows, std::size_t Cols>
  VectorTransform(Machine& m, const std::array<std::array<double, Cols>, Rows>& mat,
                  bool transposed)
      : m_(m) {
    const std::size_t out_n = transposed ? Cols : Rows;
    const std::size_t in_n = transposed ? Rows : Cols;
    rows_.resize(out_n);
    for (std::size_t r = 0; r < out_n; ++r) {
      for (std::size_t c = 0; c < in_n; ++c) {
        const auto coef = static_cast<float>(transposed ? mat[c][r] : mat[r][c]);
        if (coef == 0.0f) continue;
        Term t{c, coef, 0};
        if (coef != 1.0f && coef != -1.0f) t.reg = coefficient_register(coef);
        rows_[r].push_back(t);
      }
      // Start from a +1 term when there is one: it needs no instruction.
      auto& terms = rows_[r];
      auto one = std::find_if(terms.begin(), terms.end(), [](const Term& t) { return t.coef == 1.0f; });
      if (one != terms.end()) std::rotate(terms.begin(), one, one + 1);
    }
  }

  /// out[r] = sum_c mat[r][c] * in[c], over lanes [0, gvl).
  void apply(const VectorValue* const* in, VectorValue* const* out, std::size_t gvl) {
    for (std::size_t r = 0; r < rows_.size(); ++r) {
      const auto& terms = rows_[r];
      VectorValue& acc = *out[r];
      if (terms.empty()) {
        m_.broadcast_into(acc, 0.0f, gvl);
        continue;
      }
      const Term& first = terms.front();
      if (first.coef == 1.0f) {
        acc = *in[first.input];  // register renaming, no instruction
      } else {
        m_.scale_into(acc, *in[first.input], first.coef, gvl);
      }
      for (std::size_t k = 1; k < terms.size(); ++k) {
        const Term& t = terms[k];
        if (t.coef == 1.0f) {
          m_.elementwise_into(acc, ElemOp::add, acc, *in[t.input], gvl);
        } else if (t.coef == -1.0f) {
          m_.elementwise_into(acc, ElemOp::sub, acc, *in[t.input], gvl);
        } else {
          m_.fmacc(acc, *in[t.input], coefs_[t.reg], gvl);
        }
      }
    }
  }

 private:
  struct Term {
    std::size_t input;
    float coef;
    std::size_t reg;
  };

  std::size_t coefficient_register(float coef) {
    for (std::size_t i = 0; i < coef_values_.size(); ++i)
      if (coef_values_[i] == coef) return i;
    coef_values_.push_back(coef);
    coefs_.push_back(m_.broadcast_scalar(coef, m_.vlmax()));
    return coefs_.size() - 1;
  }

  Machine& m_;
  std::vector<std::vector<Term>> rows_;
  std::vector<float> coef_values_;
  std::vector<VectorValue> coefs_;
};

// ---- interleave4 ----

/// Interleaves four vectors so that out[4j + k] = v[k][j] for j < gvl.
/// The 4*gvl result lands in `outs[0..n)` as full registers, n =
/// ceil(4*gvl / vlmax); `scratch` must hold 4 * vlmax words.
inline std::size_t interleave4_registers(Machine& m, const VectorValue* const* v, std::size_t gvl,
                                         TransposeStrategy strategy, Address scratch,
                                         VectorValue* outs, const VectorValue* index_cache = nullptr) {
  const std::size_t vlmax = m.vlmax();
  const std::size_t total = 4 * gvl;
  const std::size_t n = (total + vlmax - 1) / vlmax;
  if (strategy == TransposeStrategy::strided) {
    for (std::size_t k = 0; k < 4; ++k) m.store_strided(*v[k], scratch + 4 * k, 16, gvl);
    for (std::size_t i = 0; i < n; ++i)
      m.load_unit(outs[i], scratch + i * vlmax * kElementBytes, std::min(vlmax, total - i * vlmax));
  } else {
    for (std::size_t k = 0; k < 4; ++k) m.store_unit(*v[k], scratch + k * gvl * kElementBytes, gvl);
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t lanes = std::min(vlmax, total - i * vlmax);
      VectorValue idx;
      if (index_cache) {
        idx = index_cache[i];
      } else {
        std::vector<float> lane_idx(lanes);
        for (std::size_t l = 0; l < lanes; ++l) {
          const std::size_t pos = i * vlmax + l;
          lane_idx[l] = static_cast<float>((pos % 4) * gvl + pos / 4);
        }
        idx = VectorValue::from_lanes(vlmax, lane_idx);
      }
      m.load_indexed(outs[i], scratch, idx, lanes);
    }
  }
  return n;
}

/// Index vectors for the indexed transpose at a given gvl (built once per
/// kernel, as the index-generation loop would be hoisted).
inline std::vector<VectorValue> interleave4_indices(Machine& m, std::size_t gvl) {
  const std::size_t vlmax = m.vlmax();
  const std::size_t total = 4 * gvl;
  std::vector<VectorValue> out;
  for (std::size_t i = 0; i * vlmax < total; ++i) {
    const std::size_t lanes = std::min(vlmax, total - i * vlmax);
    std::vector<float> lane_idx(lanes);
    for (std::size_t l = 0; l < lanes; ++l) {
      const std::size_t pos = i * vlmax + l;
      lane_idx[l] = static_cast<float>((pos % 4) * gvl + pos / 4);
    }
    out.push_back(VectorValue::from_lanes(vlmax, lane_idx));
  }
  m.scalar(total);  // index generation loop
  return out;
}

/// interleave4 into memory at `dst` (4*gvl words).
inline void interleave4(Machine& m, const VectorValue* const* v, std::size_t gvl,
                        TransposeStrategy strategy, Address scratch, Address dst,
                        const VectorValue* index_cache = nullptr) {
  std::array<VectorValue, 4> outs;
  for (auto& o : outs) o = m.make_vector();
  const std::size_t n = interleave4_registers(m, v, gvl, strategy, scratch, outs.data(), index_cache);
  const std::size_t vlmax = m.vlmax();
  for (std::size_t i = 0; i < n; ++i)
    m.store_unit(outs[i], dst + i * vlmax * kElementBytes, std::min(vlmax, 4 * gvl - i * vlmax));
}

// ---- pipeline stages ----

/// V = B^T d B for every tile and channel; lanes run over channels.
inline void input_transform(Machine& m, Address input, const TileGrid& grid, const PackedDomain& pd,
                            TransposeStrategy strategy) {
  const std::size_t mark = m.memory_mark();
  const Address scratch = m.allocate(4 * m.vlmax());
  VectorTransform bt(m, winograd_matrices().B, true);

  std::vector<VectorValue> d(64, m.make_vector()), tmp(64, m.make_vector()), out(64, m.make_vector());
  VectorValue zero = m.make_vector();
  std::array<const VectorValue*, 8> in_ptrs{};
  std::array<VectorValue*, 8> out_ptrs{};
  std::vector<VectorValue> idx_cache;
  std::size_t idx_gvl = 0;

  const std::size_t C = grid.channels, H = grid.height, W = grid.width;
  const std::int64_t chan_stride = static_cast<std::int64_t>(H * W * kElementBytes);
  for (std::size_t ty = 0; ty < grid.tiles_y(); ++ty) {
    for (std::size_t tx = 0; tx < grid.tiles_x(); ++tx) {
      const std::size_t t = ty * grid.tiles_x() + tx;
      for (std::size_t c0 = 0; c0 < C;) {
        const std::size_t gvl = m.set_vector_length(C - c0);
        if (zero.active() != gvl) m.broadcast_into(zero, 0.0f, gvl);
        if (strategy == TransposeStrategy::indexed && idx_gvl != gvl) {
          idx_cache = interleave4_indices(m, gvl);
          idx_gvl = gvl;
        }
        m.scalar();
        for (std::size_t i = 0; i < 8; ++i) {
          const auto y = static_cast<std::int64_t>(ty * 6 + i) - static_cast<std::int64_t>(grid.pad);
          for (std::size_t j = 0; j < 8; ++j) {
            const auto x = static_cast<std::int64_t>(tx * 6 + j) - static_cast<std::int64_t>(grid.pad);
            if (y < 0 || x < 0 || y >= static_cast<std::int64_t>(H) || x >= static_cast<std::int64_t>(W)) {
              d[i * 8 + j] = zero;
            } else {
              const Address a =
                  input + ((c0 * H + static_cast<std::size_t>(y)) * W + static_cast<std::size_t>(x)) * kElementBytes;
              m.load_strided(d[i * 8 + j], a, chan_stride, gvl);
            }
          }
        }
        // Rows: tmp[i][k] = sum_j B^T[k][j] d[i][j]
        for (std::size_t i = 0; i < 8; ++i) {
          for (std::size_t j = 0; j < 8; ++j) {
            in_ptrs[j] = &d[i * 8 + j];
            out_ptrs[j] = &tmp[i * 8 + j];
          }
          bt.apply(in_ptrs.data(), out_ptrs.data(), gvl);
        }
        // Columns: out[a][k] = sum_i B^T[a][i] tmp[i][k]
        for (std::size_t k = 0; k < 8; ++k) {
          for (std::size_t i = 0; i < 8; ++i) {
            in_ptrs[i] = &tmp[i * 8 + k];
            out_ptrs[i] = &out[i * 8 + k];
          }
          bt.apply(in_ptrs.data(), out_ptrs.data(), gvl);
        }
        for (std::size_t q = 0; q < 16; ++q) {
          const std::array<const VectorValue*, 4> quad = {&out[4 * q], &out[4 * q + 1], &out[4 * q + 2],
                                                          &out[4 * q + 3]};
          interleave4(m, quad.data(), gvl, strategy, scratch, pd.v_quad(t, q, c0),
                      strategy == TransposeStrategy::indexed ? idx_cache.data() : nullptr);
        }
        c0 += gvl;
      }
    }
  }
  m.release_to(mark);
}

/// U = G g G^T for the filters of group `g`; lanes run over channels.
inline void filter_transform_group(Machine& m, Address filters, const TileGrid& grid,
                                   const PackedDomain& pd, std::size_t g, std::size_t c_begin = 0,
                                   std::size_t c_end = SIZE_MAX) {
  VectorTransform gt(m, winograd_matrices().G, false);
  std::vector<VectorValue> w(9, m.make_vector()), tmp(24, m.make_vector()), u(64, m.make_vector());
  std::array<const VectorValue*, 8> in_ptrs{};
  std::array<VectorValue*, 8> out_ptrs{};
  const std::size_t C = grid.channels;
  const std::size_t nb = pd.group_width(g);
  const auto u_stride = static_cast<std::int64_t>(nb * 16);
  c_end = std::min(c_end, C);
  for (std::size_t c0 = c_begin; c0 < c_end;) {
    const std::size_t gvl = m.set_vector_length(c_end - c0);
    for (std::size_t fr = 0; fr < nb; ++fr) {
      const std::size_t f = pd.group_begin(g) + fr;
      m.scalar();
      for (std::size_t k = 0; k < 9; ++k)
        m.load_strided(w[k], filters + ((f * C + c0) * 9 + k) * kElementBytes, 36, gvl);
      // tmp[j][kx] = sum_ky G[j][ky] g[ky][kx]
      for (std::size_t kx = 0; kx < 3; ++kx) {
        for (std::size_t ky = 0; ky < 3; ++ky) in_ptrs[ky] = &w[ky * 3 + kx];
        for (std::size_t j = 0; j < 8; ++j) out_ptrs[j] = &tmp[j * 3 + kx];
        gt.apply(in_ptrs.data(), out_ptrs.data(), gvl);
      }
      // u[j][jj] = sum_kx G[jj][kx] tmp[j][kx]
      for (std::size_t j = 0; j < 8; ++j) {
        for (std::size_t kx = 0; kx < 3; ++kx) in_ptrs[kx] = &tmp[j * 3 + kx];
        for (std::size_t jj = 0; jj < 8; ++jj) out_ptrs[jj] = &u[j * 8 + jj];
        gt.apply(in_ptrs.data(), out_ptrs.data(), gvl);
      }
      for (std::size_t e = 0; e < 64; ++e)
        m.store_strided(u[e], pd.u_quad(g, e / 4, c0) + fr * 16 + (e % 4) * kElementBytes, u_stride, gvl);
    }
    c0 += gvl;
  }
}

/// Tiles register-blocked per channel sweep in tuple_multiply.
inline constexpr std::size_t kTupleTileBlock = 4;


/// M[f][t][e] = sum_c U[f][c][e] * V[t][c][e] for the filters of group `g`,
/// accumulating in channel order.
inline void tuple_multiply_group(Machine& m, const PackedDomain& pd, std::size_t g,
                                 ReplicateStrategy strategy, std::size_t c_begin = 0,
                                 std::size_t c_end = SIZE_MAX) {
  const std::size_t T = pd.tiles;
  c_end = std::min(c_end, pd.channels);
  if (c_begin >= c_end) throw ArgumentError("tuple_multiply: no input channels");
  const bool accumulate = c_begin > 0;
  const std::size_t nb = pd.group_width(g);
  const std::size_t gvl = m.set_vector_length(4 * nb);

  VectorValue index = m.make_vector();
  if (strategy == ReplicateStrategy::indexed) {
    std::vector<float> lanes(gvl);
    for (std::size_t i = 0; i < gvl; ++i) lanes[i] = static_cast<float>(i % 4);
    index = VectorValue::from_lanes(m.vlmax(), lanes);
    m.scalar(gvl);  // index generation loop
  }
  std::array<VectorValue, kTupleTileBlock> acc;
  for (auto& a : acc) a = m.make_vector();
  VectorValue uvec = m.make_vector(), rep = m.make_vector();

  for (std::size_t q = 0; q < 16; ++q) {
    for (std::size_t t0 = 0; t0 < T; t0 += kTupleTileBlock) {
      const std::size_t rn = std::min(kTupleTileBlock, T - t0);
      for (std::size_t r = 0; r < rn; ++r) {
        if (accumulate) {
          m.load_unit(acc[r], pd.m_quad(g, t0 + r, q), gvl);
        } else {
          m.broadcast_into(acc[r], 0.0f, gvl);
        }
      }
      for (std::size_t c = c_begin; c < c_end; ++c) {
        m.scalar();
        m.load_unit(uvec, pd.u_quad(g, q, c), gvl);
        for (std::size_t r = 0; r < rn; ++r) {
          const Address quad = pd.v_quad(t0 + r, q, c);
          if (strategy == ReplicateStrategy::slide) {
            m.load_unit(rep, quad, std::min<std::size_t>(4, gvl));
            for (std::size_t off = 4; off < gvl; off *= 2)
              m.slide_up_into(rep, rep, off, std::min(2 * off, gvl));
          } else {
            m.load_indexed(rep, quad, index, gvl);
          }
          m.fmacc(acc[r], uvec, rep, gvl);
        }
      }
      for (std::size_t r = 0; r < rn; ++r) m.store_unit(acc[r], pd.m_quad(g, t0 + r, q), gvl);
    }
  }
}

/// Y = A^T M A per tile for the filters of group `g`, cropped into the
/// F x Ho x Wo output. Lanes run over the group's output channels.
inline void output_transform_group(Machine& m, const PackedDomain& pd, std::size_t g,
                                   const TileGrid& grid, Address output) {
  VectorTransform at(m, winograd_matrices().A, true);
  std::vector<VectorValue> mv(64, m.make_vector()), tmp(48, m.make_vector()), y(36, m.make_vector());
  std::array<const VectorValue*, 8> in_ptrs{};
  std::array<VectorValue*, 8> out_ptrs{};
  const std::size_t Ho = grid.out_height(), Wo = grid.out_width();
  const std::size_t nb = pd.group_width(g);
  const std::size_t f0 = pd.group_begin(g);
  const auto plane = static_cast<std::int64_t>(Ho * Wo * kElementBytes);
  const std::size_t gvl = m.set_vector_length(nb);
  for (std::size_t ty = 0; ty < grid.tiles_y(); ++ty) {
    for (std::size_t tx = 0; tx < grid.tiles_x(); ++tx) {
      const std::size_t t = ty * grid.tiles_x() + tx;
      m.scalar();
      for (std::size_t e = 0; e < 64; ++e)
        m.load_strided(mv[e], pd.m_quad(g, t, e / 4) + (e % 4) * kElementBytes, 16, gvl);
      // tmp[i][b] = sum_j A^T[b][j] M[i][j]
      for (std::size_t i = 0; i < 8; ++i) {
        for (std::size_t j = 0; j < 8; ++j) in_ptrs[j] = &mv[i * 8 + j];
        for (std::size_t b = 0; b < 6; ++b) out_ptrs[b] = &tmp[i * 6 + b];
        at.apply(in_ptrs.data(), out_ptrs.data(), gvl);
      }
      // y[a][b] = sum_i A^T[a][i] tmp[i][b]
      for (std::size_t b = 0; b < 6; ++b) {
        for (std::size_t i = 0; i < 8; ++i) in_ptrs[i] = &tmp[i * 6 + b];
        for (std::size_t a = 0; a < 6; ++a) out_ptrs[a] = &y[a * 6 + b];
        at.apply(in_ptrs.data(), out_ptrs.data(), gvl);
      }
      for (std::size_t a = 0; a < 6; ++a) {
        const std::size_t oy = ty * 6 + a;
        if (oy >= Ho) break;
        for (std::size_t b = 0; b < 6; ++b) {
          const std::size_t ox = tx * 6 + b;
          if (ox >= Wo) break;
          m.store_strided(y[a * 6 + b], output + ((f0 * Ho + oy) * Wo + ox) * kElementBytes, plane, gvl);
        }
      }
    }
  }
}

// ---- whole-layer stage wrappers (unfused domain) ----

inline void filter_transform(Machine& m, Address filters, const TileGrid& grid, const PackedDomain& pd) {
  for (std::size_t g = 0; g < pd.groups(); ++g) filter_transform_group(m, filters, grid, pd, g);
}

inline void tuple_multiply(Machine& m, const PackedDomain& pd, ReplicateStrategy strategy) {
  if (pd.channels == 0) throw ArgumentError("tuple_multiply: no input channels");
  for (std::size_t g = 0; g < pd.groups(); ++g) tuple_multiply_group(m, pd, g, strategy);
}

inline void output_transform(Machine& m, const PackedDomain& pd, const TileGrid& grid, Address output) {
  for (std::size_t g = 0; g < pd.groups(); ++g) output_transform_group(m, pd, g, grid, output);
}

/// Full Winograd convolution. `output` must hold F x Ho x Wo words.
/// Throws DispatchError for layers that are not 3x3 stride-1.
inline void conv_winograd(Machine& m, Address input, Address filters, Address output,
                          const ConvShape& shape, const StrategyConfig& strategy = {}) {
  const TileGrid grid = TileGrid::from(shape);
  const std::size_t mark = m.memory_mark();
  const PackedDomain pd = PackedDomain::allocate(m, grid, true);
  input_transform(m, input, grid, pd, strategy.transpose);
  for (std::size_t g = 0; g < pd.groups(); ++g) {
    const std::size_t cb = pd.channel_block;
    for (std::size_t c0 = 0; c0 < grid.channels; c0 += cb) {
      filter_transform_group(m, filters, grid, pd, g, c0, c0 + cb);
      tuple_multiply_group(m, pd, g, strategy.replicate, c0, c0 + cb);
    }
    output_transform_group(m, pd, g, grid, output);
  }
  m.release_to(mark);
}

// ---- host-side packing helpers (untraced) ----

/// V as [t][c][64].
inline std::vector<float> unpack_v(const Machine& m, const PackedDomain& pd) {
  std::vector<float> out(pd.v_elements());
  for (std::size_t q = 0; q < 16; ++q)
    for (std::size_t t = 0; t < pd.tiles; ++t)
      for (std::size_t c = 0; c < pd.channels; ++c)
        for (std::size_t s = 0; s < 4; ++s)
          out[(t * pd.channels + c) * 64 + 4 * q + s] = m.peek(pd.v_quad(t, q, c) + s * kElementBytes);
  return out;
}

inline void pack_v(Machine& m, const PackedDomain& pd, const std::vector<float>& v) {
  for (std::size_t q = 0; q < 16; ++q)
    for (std::size_t t = 0; t < pd.tiles; ++t)
      for (std::size_t c = 0; c < pd.channels; ++c)
        for (std::size_t s = 0; s < 4; ++s)
          m.poke(pd.v_quad(t, q, c) + s * kElementBytes, v[(t * pd.channels + c) * 64 + 4 * q + s]);
}

/// U as [f][c][64] (unfused domain only).
inline std::vector<float> unpack_u(const Machine& m, const PackedDomain& pd) {
  std::vector<float> out(pd.filters * pd.channels * 64);
  for (std::size_t f = 0; f < pd.filters; ++f) {
    const std::size_t g = f / pd.blocks, fr = f % pd.blocks;
    for (std::size_t c = 0; c < pd.channels; ++c)
      for (std::size_t e = 0; e < 64; ++e)
        out[(f * pd.channels + c) * 64 + e] = m.peek(pd.u_quad(g, e / 4, c) + fr * 16 + (e % 4) * kElementBytes);
  }
  return out;
}

inline void pack_u(Machine& m, const PackedDomain& pd, const std::vector<float>& u) {
  for (std::size_t f = 0; f < pd.filters; ++f) {
    const std::size_t g = f / pd.blocks, fr = f % pd.blocks;
    for (std::size_t c = 0; c < pd.channels; ++c)
      for (std::size_t e = 0; e < 64; ++e)
        m.poke(pd.u_quad(g, e / 4, c) + fr * 16 + (e % 4) * kElementBytes, u[(f * pd.channels + c) * 64 + e]);
  }
}

/// M as [f][t][64] (unfused domain only).
inline std::vector<float> unpack_m(const Machine& m, const PackedDomain& pd) {
  std::vector<float> out(pd.filters * pd.tiles * 64);
  for (std::size_t f = 0; f < pd.filters; ++f) {
    const std::size_t g = f / pd.blocks, fr = f % pd.blocks;
    for (std::size_t t = 0; t < pd.tiles; ++t)
      for (std::size_t e = 0; e < 64; ++e)
        out[(f * pd.tiles + t) * 64 + e] = m.peek(pd.m_quad(g, t, e / 4) + fr * 16 + (e % 4) * kElementBytes);
  }
  return out;
}

inline void pack_m(Machine& m, const PackedDomain& pd, const std::vector<float>& mm) {
  for (std::size_t f = 0; f < pd.filters; ++f) {
    const std::size_t g = f / pd.blocks, fr = f % pd.blocks;
    for (std::size_t t = 0; t < pd.tiles; ++t)
      for (std::size_t e = 0; e < 64; ++e)
        m.poke(pd.m_quad(g, t, e / 4) + fr * 16 + (e % 4) * kElementBytes, mm[(f * pd.tiles + t) * 64 + e]);
  }
}

}  // namespace vlaconv
