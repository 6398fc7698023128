#pragma once

// im2col + GEMM convolution and the fp64 direct-convolution oracle.

#include <algorithm>
#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "vlaconv/conv_shape.hpp"
#include "vlaconv/error.hpp"
#include "vlaconv/vvm.hpp"

namespace vlaconv {

/// Rows of C produced per pass over a B column strip.
inline constexpr std::size_t kGemmRowBlock = 4;

/// Stores `count` zeros starting at `addr`, stripmined.
inline void store_zeros(Machine& m, VectorValue& zero, Address addr, std::size_t count) {
  for (std::size_t i = 0; i < count;) {
    const std::size_t gvl = m.set_vector_length(count - i);
    if (zero.active() < gvl) m.broadcast_into(zero, 0.0f, m.vlmax());
    m.store_unit(zero, addr + i * kElementBytes, gvl);
    i += gvl;
  }
}

/// Row pitch (in elements) of a column matrix with `cols` columns: a whole
/// number of cache lines plus one, so consecutive rows do not map to the
/// same cache set when `cols` is a power of two.
inline std::size_t col_matrix_pitch(std::size_t cols) noexcept { return (cols + 15) / 16 * 16 + 16; }

/// Builds the (C*k*k) x (Ho*Wo) column matrix at `col` with row pitch
/// `ld` (>= Ho*Wo). Entry (c*k*k + di*k + dj, y*Wo + x) =
/// input(c, y*stride + di - pad, x*stride + dj - pad), zero outside the image.
inline void im2col(Machine& m, Address input, const ConvShape& s, Address col, std::size_t ld = 0) {
  s.validate();
  const std::size_t H = s.height, W = s.width, k = s.kernel, st = s.stride;
  const std::size_t Ho = s.out_height(), Wo = s.out_width();
  if (ld == 0) ld = Ho * Wo;
  if (ld < Ho * Wo) throw ArgumentError("im2col: row pitch shorter than a row");
  const auto pad = static_cast<std::int64_t>(s.pad);
  VectorValue v = m.make_vector();
  VectorValue zero = m.make_vector();
  for (std::size_t c = 0; c < s.channels; ++c) {
    for (std::size_t di = 0; di < k; ++di) {
      for (std::size_t dj = 0; dj < k; ++dj) {
        const std::size_t row = (c * k + di) * k + dj;
        // Valid output columns: 0 <= x*st + dj - pad < W.
        const std::int64_t off = static_cast<std::int64_t>(dj) - pad;
        std::size_t x_lo = 0;
        if (off < 0) x_lo = static_cast<std::size_t>((-off + static_cast<std::int64_t>(st) - 1) / static_cast<std::int64_t>(st));
        std::size_t x_hi = 0;  // exclusive
        if (static_cast<std::int64_t>(W) - off > 0)
          x_hi = static_cast<std::size_t>((static_cast<std::int64_t>(W) - off - 1) / static_cast<std::int64_t>(st)) + 1;
        x_hi = std::min(x_hi, Wo);
        x_lo = std::min(x_lo, x_hi);
        for (std::size_t y = 0; y < Ho; ++y) {
          m.scalar();
          const Address dst = col + (row * ld + y * Wo) * kElementBytes;
          const std::int64_t iy = static_cast<std::int64_t>(y * st + di) - pad;
          if (iy < 0 || iy >= static_cast<std::int64_t>(H)) {
            store_zeros(m, zero, dst, Wo);
            continue;
          }
          if (x_lo > 0) store_zeros(m, zero, dst, x_lo);
          const Address src_row = input + (c * H + static_cast<std::size_t>(iy)) * W * kElementBytes;
          for (std::size_t x = x_lo; x < x_hi;) {
            const std::size_t gvl = m.set_vector_length(x_hi - x);
            const auto ix = static_cast<std::size_t>(static_cast<std::int64_t>(x * st) + off);
            if (st == 1) {
              m.load_unit(v, src_row + ix * kElementBytes, gvl);
            } else {
              m.load_strided(v, src_row + ix * kElementBytes, static_cast<std::int64_t>(st * kElementBytes), gvl);
            }
            m.store_unit(v, dst + x * kElementBytes, gvl);
            x += gvl;
          }
          if (x_hi < Wo) store_zeros(m, zero, dst + x_hi * kElementBytes, Wo - x_hi);
        }
      }
    }
  }
}

/// C (rows x cols) = A (rows x inner) * B (inner x cols), all row-major in
/// machine memory; B's row pitch is `ldb` elements (0 means `cols`).
/// Vectorised along the columns of B; every output element accumulates
/// over the inner dimension in increasing order.
inline void gemm(Machine& m, Address a, Address b, Address c, std::size_t rows, std::size_t inner,
                 std::size_t cols, std::size_t ldb = 0) {
  if (rows == 0 || inner == 0 || cols == 0) throw ArgumentError("gemm: empty operand");
  if (ldb == 0) ldb = cols;
  if (ldb < cols) throw ArgumentError("gemm: row pitch of B shorter than a row");
  std::array<VectorValue, kGemmRowBlock> acc;
  for (auto& v : acc) v = m.make_vector();
  VectorValue bv = m.make_vector(), av = m.make_vector();
  for (std::size_t n0 = 0; n0 < cols;) {
    const std::size_t gvl = m.set_vector_length(cols - n0);
    for (std::size_t f0 = 0; f0 < rows; f0 += kGemmRowBlock) {
      const std::size_t rn = std::min(kGemmRowBlock, rows - f0);
      for (std::size_t r = 0; r < rn; ++r) m.broadcast_into(acc[r], 0.0f, gvl);
      for (std::size_t k = 0; k < inner; ++k) {
        m.scalar();
        m.load_unit(bv, b + (k * ldb + n0) * kElementBytes, gvl);
        for (std::size_t r = 0; r < rn; ++r) {
          const float s = m.load_scalar(a + ((f0 + r) * inner + k) * kElementBytes);
          m.broadcast_into(av, s, gvl);
          m.fmacc(acc[r], av, bv, gvl);
        }
      }
      for (std::size_t r = 0; r < rn; ++r)
        m.store_unit(acc[r], c + ((f0 + r) * cols + n0) * kElementBytes, gvl);
    }
    n0 += gvl;
  }
}

/// Convolution as gemm(filters viewed F x (C*k*k), im2col(input)).
/// `output` must hold F x Ho x Wo words.
inline void conv_im2col_gemm(Machine& m, Address input, Address filters, Address output,
                             const ConvShape& s) {
  s.validate();
  const std::size_t K = s.channels * s.kernel * s.kernel;
  const std::size_t N = s.out_height() * s.out_width();
  const std::size_t mark = m.memory_mark();
  const std::size_t ld = col_matrix_pitch(N);
  const Address col = m.allocate(K * ld);
  im2col(m, input, s, col, ld);
  gemm(m, filters, col, output, s.filters, K, N, ld);
  m.release_to(mark);
}

/// Naive cross-correlation in fp64; the reference for every kernel.
inline std::vector<double> direct_conv_oracle(std::span<const float> input, std::span<const float> filters,
                                              const ConvShape& s) {
  s.validate();
  if (input.size() != s.input_elements() || filters.size() != s.filter_elements())
    throw ArgumentError("direct_conv_oracle: tensor sizes do not match the shape");
  const std::size_t H = s.height, W = s.width, k = s.kernel;
  const std::size_t Ho = s.out_height(), Wo = s.out_width();
  const auto pad = static_cast<std::int64_t>(s.pad);
  std::vector<double> out(s.output_elements(), 0.0);
  for (std::size_t f = 0; f < s.filters; ++f)
    for (std::size_t y = 0; y < Ho; ++y)
      for (std::size_t x = 0; x < Wo; ++x) {
        double acc = 0.0;
        for (std::size_t c = 0; c < s.channels; ++c)
          for (std::size_t di = 0; di < k; ++di) {
            const std::int64_t iy = static_cast<std::int64_t>(y * s.stride + di) - pad;
            if (iy < 0 || iy >= static_cast<std::int64_t>(H)) continue;
            for (std::size_t dj = 0; dj < k; ++dj) {
              const std::int64_t ix = static_cast<std::int64_t>(x * s.stride + dj) - pad;
              if (ix < 0 || ix >= static_cast<std::int64_t>(W)) continue;
              acc += static_cast<double>(input[(c * H + static_cast<std::size_t>(iy)) * W + static_cast<std::size_t>(ix)]) *
                     static_cast<double>(filters[((f * s.channels + c) * k + di) * k + dj]);
            }
          }
        out[(f * Ho + y) * Wo + x] = acc;
      }
  return out;
}

}  // namespace vlaconv
