#include <gtest/gtest.h>

#include <cstring>
#include <random>

#include "oracles.hpp"
#include "vlaconv/memsim.hpp"
#include "vlaconv/winograd.hpp"

using namespace vlaconv;

namespace {

VectorMachineConfig vl(std::size_t bits) {
  VectorMachineConfig c;
  c.vlen_bits = bits;
  return c;
}

bool same_bits(const std::vector<float>& a, const std::vector<float>& b) {
  return a.size() == b.size() && std::memcmp(a.data(), b.data(), a.size() * sizeof(float)) == 0;
}

std::vector<double> to_double(const std::vector<float>& v) { return {v.begin(), v.end()}; }

// Row-major copies of the transform matrices for the dense oracle.
std::vector<double> flat_b() {
  std::vector<double> b;
  for (const auto& r : winograd_matrices().B) b.insert(b.end(), r.begin(), r.end());
  return b;
}
std::vector<double> flat_g() {
  std::vector<double> g;
  for (const auto& r : winograd_matrices().G) g.insert(g.end(), r.begin(), r.end());
  return g;
}
std::vector<double> flat_a() {
  std::vector<double> a;
  for (const auto& r : winograd_matrices().A) a.insert(a.end(), r.begin(), r.end());
  return a;
}

struct Layer {
  ConvShape shape;
  std::vector<float> input, filters;
};

Layer make_layer(ConvShape s, std::uint64_t seed) {
  return {s, oracle::random_floats(s.input_elements(), seed), oracle::random_floats(s.filter_elements(), seed + 1)};
}

std::vector<float> winograd(const Layer& l, std::size_t vlen, StrategyConfig st = {}, TraceSink* sink = nullptr) {
  Machine m(vl(vlen), sink);
  const Address in = m.allocate(l.input.size());
  const Address w = m.allocate(l.filters.size());
  const Address out = m.allocate(l.shape.output_elements());
  m.write_host(in, l.input);
  m.write_host(w, l.filters);
  conv_winograd(m, in, w, out, l.shape, st);
  return m.read_host(out, l.shape.output_elements());
}

// The four stages run whole-layer over the unfused packed domain.
std::vector<float> staged(const Layer& l, std::size_t vlen, StrategyConfig st = {}) {
  Machine m(vl(vlen));
  const TileGrid grid = TileGrid::from(l.shape);
  const Address in = m.allocate(l.input.size());
  const Address w = m.allocate(l.filters.size());
  const Address out = m.allocate(l.shape.output_elements());
  m.write_host(in, l.input);
  m.write_host(w, l.filters);
  const PackedDomain pd = PackedDomain::allocate(m, grid, false);
  input_transform(m, in, grid, pd, st.transpose);
  filter_transform(m, w, grid, pd);
  tuple_multiply(m, pd, st.replicate);
  output_transform(m, pd, grid, out);
  return m.read_host(out, l.shape.output_elements());
}

std::vector<double> reference(const Layer& l) {
  const ConvShape& s = l.shape;
  return oracle::conv_scatter(l.input, l.filters, s.channels, s.height, s.width, s.filters, s.kernel, s.stride, s.pad);
}

}  // namespace

// ---- matrices ----

TEST(Matrices, TileIdentityOnRandomPairs) {
  std::mt19937_64 rng(42);
  std::uniform_real_distribution<double> u(-1, 1);
  double worst = 0;
  for (int i = 0; i < 1000; ++i) {
    std::array<double, 64> d;
    std::array<double, 9> g;
    for (auto& x : d) x = u(rng);
    for (auto& x : g) x = u(rng);
    const auto y = winograd_tile_fp64(winograd_matrices(), d, g);
    const auto ref = oracle::corr6x6(d, g);
    for (int k = 0; k < 36; ++k) worst = std::max(worst, std::abs(y[k] - ref[k]));
  }
  EXPECT_LT(worst, 1e-10);
}

TEST(Matrices, DenseProductFormMatchesCorrelation) {
  const auto B = flat_b(), G = flat_g(), A = flat_a();
  const auto d = to_double(oracle::random_floats(64, 5));
  const auto g = to_double(oracle::random_floats(9, 6));
  const auto U = oracle::matmul(oracle::matmul(G, g, 8, 3, 3), oracle::transpose(G, 8, 3), 8, 3, 8);
  const auto V = oracle::matmul(oracle::matmul(oracle::transpose(B, 8, 8), d, 8, 8, 8), B, 8, 8, 8);
  std::vector<double> M(64);
  for (int i = 0; i < 64; ++i) M[static_cast<std::size_t>(i)] = U[static_cast<std::size_t>(i)] * V[static_cast<std::size_t>(i)];
  const auto Y = oracle::matmul(oracle::matmul(oracle::transpose(A, 8, 6), M, 6, 8, 8), A, 6, 8, 6);
  std::array<double, 64> da;
  std::array<double, 9> ga;
  std::copy(d.begin(), d.end(), da.begin());
  std::copy(g.begin(), g.end(), ga.begin());
  const auto ref = oracle::corr6x6(da, ga);
  for (int k = 0; k < 36; ++k) EXPECT_NEAR(Y[static_cast<std::size_t>(k)], ref[static_cast<std::size_t>(k)], 1e-10);
}

TEST(Matrices, InterpolationPointsAppearInA) {
  const auto& A = winograd_matrices().A;
  const double pts[] = {0, 1, -1, 2, -2, 0.5, -0.5};
  for (int j = 0; j < 7; ++j) {
    EXPECT_DOUBLE_EQ(A[j][0], 1.0);
    EXPECT_DOUBLE_EQ(A[j][1], pts[j]);
  }
  for (int i = 0; i < 5; ++i) EXPECT_EQ(A[7][i], 0.0);
  EXPECT_EQ(A[7][5], 1.0);
}

// ---- geometry and packing ----

TEST(TileGrid, CoversEveryOutputOnce) {
  for (std::size_t h = 3; h < 40; h += 5)
    for (std::size_t pad : {0, 1}) {
      const TileGrid g = TileGrid::from(ConvShape{4, h, h + 2, 8, 3, 1, pad});
      std::vector<int> hits(g.out_height() * g.out_width(), 0);
      for (std::size_t ty = 0; ty < g.tiles_y(); ++ty)
        for (std::size_t tx = 0; tx < g.tiles_x(); ++tx)
          for (std::size_t a = 0; a < 6; ++a)
            for (std::size_t b = 0; b < 6; ++b) {
              const std::size_t y = ty * 6 + a, x = tx * 6 + b;
              if (y < g.out_height() && x < g.out_width()) ++hits[y * g.out_width() + x];
            }
      for (int c : hits) EXPECT_EQ(c, 1);
    }
}

TEST(TileGrid, RejectsOtherKernels) {
  EXPECT_THROW(TileGrid::from(ConvShape{4, 8, 8, 4, 3, 2, 1}), DispatchError);
  EXPECT_THROW(TileGrid::from(ConvShape{4, 8, 8, 4, 1, 1, 0}), DispatchError);
}

TEST(PackedDomain, BlocksFollowVectorLength) {
  const TileGrid g = TileGrid::from(ConvShape{8, 12, 12, 8, 3, 1, 1});
  for (std::size_t bits : {128, 512, 8192}) {
    Machine m(vl(bits));
    const PackedDomain pd = PackedDomain::allocate(m, g, false);
    EXPECT_EQ(pd.blocks * 4, m.vlmax());
  }
  Machine m512(vl(512)), m8k(vl(8192));
  EXPECT_EQ(PackedDomain::allocate(m512, g, false).blocks, 4u);
  EXPECT_EQ(PackedDomain::allocate(m8k, g, false).blocks, 64u);
}

TEST(PackedDomain, PackingIsABijection) {
  const TileGrid g = TileGrid::from(ConvShape{5, 14, 9, 7, 3, 1, 1});
  for (std::size_t bits : {128, 512, 2048}) {
    Machine m(vl(bits));
    const PackedDomain pd = PackedDomain::allocate(m, g, false);
    const auto v = oracle::random_floats(pd.v_elements(), 1);
    const auto u = oracle::random_floats(pd.filters * pd.channels * 64, 2);
    const auto mm = oracle::random_floats(pd.filters * pd.tiles * 64, 3);
    pack_v(m, pd, v);
    pack_u(m, pd, u);
    pack_m(m, pd, mm);
    EXPECT_EQ(unpack_v(m, pd), v);
    EXPECT_EQ(unpack_u(m, pd), u);
    EXPECT_EQ(unpack_m(m, pd), mm);
  }
}

TEST(PackedDomain, FusedChannelBlockBoundsFilterSlice) {
  const TileGrid g = TileGrid::from(ConvShape{512, 8, 8, 64, 3, 1, 1});
  for (std::size_t bits : {512, 4096, 16384}) {
    Machine m(vl(bits));
    const PackedDomain pd = PackedDomain::allocate(m, g, true);
    EXPECT_GE(pd.channel_block, 1u);
    EXPECT_LE(pd.channel_block, 512u);
    EXPECT_LE(pd.channel_block * 64 * pd.blocks * kElementBytes, std::max<std::size_t>(kFilterBlockBytes, 64 * pd.blocks * kElementBytes));
    EXPECT_EQ(PackedDomain::allocate(m, g, false).channel_block, 512u);
  }
}

// ---- stages ----

TEST(FilterTransform, CenterImpulseGivesOuterProduct) {
  const ConvShape s{1, 8, 8, 1, 3, 1, 0};
  Machine m(vl(512));
  const TileGrid grid = TileGrid::from(s);
  const Address w = m.allocate(9);
  m.poke(w + 4 * kElementBytes, 1.0f);
  const PackedDomain pd = PackedDomain::allocate(m, grid, false);
  filter_transform(m, w, grid, pd);
  const auto u = unpack_u(m, pd);
  const auto& G = winograd_matrices().G;
  for (int i = 0; i < 8; ++i)
    for (int j = 0; j < 8; ++j) {
      const double ref = G[i][1] * G[j][1];
      EXPECT_NEAR(u[static_cast<std::size_t>(i * 8 + j)], ref, 1e-6 * std::max(1.0, std::abs(ref)));
    }
}

TEST(FilterTransform, MatchesDenseOracle) {
  const ConvShape s{6, 8, 8, 5, 3, 1, 0};
  const auto G = flat_g();
  const auto filt = oracle::random_floats(s.filter_elements(), 12);
  for (std::size_t bits : {128, 1024}) {
    Machine m(vl(bits));
    const TileGrid grid = TileGrid::from(s);
    const Address w = m.allocate(filt.size());
    m.write_host(w, filt);
    const PackedDomain pd = PackedDomain::allocate(m, grid, false);
    filter_transform(m, w, grid, pd);
    const auto u = unpack_u(m, pd);
    for (std::size_t f = 0; f < 5; ++f)
      for (std::size_t c = 0; c < 6; ++c) {
        const std::vector<double> g(filt.begin() + static_cast<std::ptrdiff_t>((f * 6 + c) * 9),
                                    filt.begin() + static_cast<std::ptrdiff_t>((f * 6 + c) * 9 + 9));
        const auto ref = oracle::matmul(oracle::matmul(G, g, 8, 3, 3), oracle::transpose(G, 8, 3), 8, 3, 8);
        for (std::size_t e = 0; e < 64; ++e) EXPECT_NEAR(u[(f * 6 + c) * 64 + e], ref[e], 1e-6);
      }
  }
}

TEST(InputTransform, SingleTileMatchesDenseOracle) {
  const ConvShape s{1, 8, 8, 1, 3, 1, 0};
  const auto d = oracle::random_floats(64, 21);
  const auto B = flat_b();
  const auto ref = oracle::matmul(oracle::matmul(oracle::transpose(B, 8, 8), to_double(d), 8, 8, 8), B, 8, 8, 8);
  for (auto st : {TransposeStrategy::strided, TransposeStrategy::indexed}) {
    Machine m(vl(512));
    const TileGrid grid = TileGrid::from(s);
    const Address in = m.allocate(64);
    m.write_host(in, d);
    const PackedDomain pd = PackedDomain::allocate(m, grid, false);
    input_transform(m, in, grid, pd, st);
    const auto v = unpack_v(m, pd);
    std::vector<float> got(v.begin(), v.begin() + 64);
    EXPECT_LT(oracle::rel_error(got, ref), 1e-5);
  }
}

TEST(InputTransform, PaddedTilesMatchDenseOracle) {
  const ConvShape s{7, 13, 10, 4, 3, 1, 1};
  const auto x = oracle::random_floats(s.input_elements(), 22);
  const auto B = flat_b();
  const TileGrid grid = TileGrid::from(s);
  Machine m(vl(256));
  const Address in = m.allocate(x.size());
  m.write_host(in, x);
  const PackedDomain pd = PackedDomain::allocate(m, grid, false);
  input_transform(m, in, grid, pd, TransposeStrategy::strided);
  const auto v = unpack_v(m, pd);
  for (std::size_t ty = 0; ty < grid.tiles_y(); ++ty)
    for (std::size_t tx = 0; tx < grid.tiles_x(); ++tx)
      for (std::size_t c = 0; c < 7; ++c) {
        std::vector<double> d(64, 0.0);
        for (std::size_t i = 0; i < 8; ++i)
          for (std::size_t j = 0; j < 8; ++j) {
            const long long y = static_cast<long long>(ty * 6 + i) - 1, xx = static_cast<long long>(tx * 6 + j) - 1;
            if (y >= 0 && xx >= 0 && y < 13 && xx < 10)
              d[i * 8 + j] = x[(c * 13 + static_cast<std::size_t>(y)) * 10 + static_cast<std::size_t>(xx)];
          }
        const auto ref = oracle::matmul(oracle::matmul(oracle::transpose(B, 8, 8), d, 8, 8, 8), B, 8, 8, 8);
        const std::size_t t = ty * grid.tiles_x() + tx;
        std::vector<float> got(v.begin() + static_cast<std::ptrdiff_t>((t * 7 + c) * 64),
                               v.begin() + static_cast<std::ptrdiff_t>((t * 7 + c) * 64 + 64));
        EXPECT_LT(oracle::rel_error(got, ref), 1e-5);
      }
}

TEST(Interleave4, StrategiesAgreeAndMatchDefinition) {
  std::mt19937_64 rng(7);
  for (std::size_t bits : {128, 512, 2048, 8192}) {
    Machine m(vl(bits));
    const Address scratch = m.allocate(4 * m.vlmax());
    const Address out_s = m.allocate(4 * m.vlmax());
    const Address out_i = m.allocate(4 * m.vlmax());
    for (int trial = 0; trial < 5; ++trial) {
      const std::size_t gvl = 1 + rng() % m.vlmax();
      std::array<VectorValue, 4> v;
      std::array<const VectorValue*, 4> ptr{};
      std::vector<std::vector<float>> raw;
      for (std::size_t k = 0; k < 4; ++k) {
        raw.push_back(oracle::random_floats(gvl, rng()));
        v[k] = VectorValue::from_lanes(m.vlmax(), raw.back());
        ptr[k] = &v[k];
      }
      interleave4(m, ptr.data(), gvl, TransposeStrategy::strided, scratch, out_s);
      interleave4(m, ptr.data(), gvl, TransposeStrategy::indexed, scratch, out_i);
      const auto a = m.read_host(out_s, 4 * gvl), b = m.read_host(out_i, 4 * gvl);
      EXPECT_TRUE(same_bits(a, b));
      for (std::size_t j = 0; j < gvl; ++j)
        for (std::size_t k = 0; k < 4; ++k) EXPECT_EQ(a[4 * j + k], raw[k][j]);
    }
  }
}

TEST(Interleave4, IndexedUsesGathersStridedDoesNot) {
  for (auto st : {TransposeStrategy::strided, TransposeStrategy::indexed}) {
    TraceRecorder rec;
    Machine m(vl(512), &rec);
    const Address scratch = m.allocate(64), dst = m.allocate(64);
    std::array<VectorValue, 4> v;
    std::array<const VectorValue*, 4> ptr{};
    for (std::size_t k = 0; k < 4; ++k) {
      v[k] = m.make_vector();
      ptr[k] = &v[k];
    }
    interleave4(m, ptr.data(), 16, st, scratch, dst);
    if (st == TransposeStrategy::strided) {
      EXPECT_EQ(rec.count(OpClass::mem_indexed), 0u);
      EXPECT_EQ(rec.count(OpClass::mem_strided), 4u);
    } else {
      EXPECT_EQ(rec.count(OpClass::mem_indexed), 4u);
      EXPECT_EQ(rec.count(OpClass::mem_strided), 0u);
    }
  }
}

namespace {

struct TupleCase {
  std::size_t C, F, T;
  std::vector<float> u, v;
};

std::vector<float> run_tuple(const TupleCase& tc, std::size_t bits, ReplicateStrategy st, TraceSink* sink = nullptr) {
  Machine m(vl(bits), sink);
  // A 3x3 stride-1 grid with exactly T tiles in one row.
  const TileGrid grid = TileGrid::from(ConvShape{tc.C, 3, 6 * tc.T, tc.F, 3, 1, 1});
  const PackedDomain pd = PackedDomain::allocate(m, grid, false);
  EXPECT_EQ(pd.tiles, tc.T);
  pack_v(m, pd, tc.v);
  pack_u(m, pd, tc.u);
  tuple_multiply(m, pd, st);
  return unpack_m(m, pd);
}

TupleCase random_tuple(std::size_t C, std::size_t F, std::size_t T, std::uint64_t seed) {
  return {C, F, T, oracle::random_floats(F * C * 64, seed), oracle::random_floats(T * C * 64, seed + 100)};
}

}  // namespace

TEST(TupleMultiply, AllOnesFilterSumsChannels) {
  TupleCase tc = random_tuple(6, 3, 2, 4);
  std::fill(tc.u.begin(), tc.u.end(), 1.0f);
  const auto m = run_tuple(tc, 512, ReplicateStrategy::slide);
  for (std::size_t f = 0; f < 3; ++f)
    for (std::size_t t = 0; t < 2; ++t)
      for (std::size_t e = 0; e < 64; ++e) {
        float s = 0.0f;
        for (std::size_t c = 0; c < 6; ++c) s += tc.v[(t * 6 + c) * 64 + e];
        EXPECT_EQ(m[(f * 2 + t) * 64 + e], s);
      }
}

TEST(TupleMultiply, BitExactAgainstScalarOracle) {
  const TupleCase tc = random_tuple(8, 8, 4, 3);
  const auto ref = oracle::tuple_multiply(tc.u, tc.v, 8, 8, 4);
  for (std::size_t bits : {128, 512, 2048, 8192})
    for (auto st : {ReplicateStrategy::indexed, ReplicateStrategy::slide})
      EXPECT_TRUE(same_bits(run_tuple(tc, bits, st), ref)) << bits << ' ' << to_string(st);
}

TEST(TupleMultiply, StrategyEquivalenceOnRandomShapes) {
  std::mt19937_64 rng(31);
  const std::size_t vlens[] = {128, 512, 2048, 8192};
  for (int i = 0; i < 40; ++i) {
    const TupleCase tc = random_tuple(1 + rng() % 12, 1 + rng() % 40, 1 + rng() % 9, rng());
    const std::size_t bits = vlens[i % 4];
    const auto a = run_tuple(tc, bits, ReplicateStrategy::indexed);
    const auto b = run_tuple(tc, bits, ReplicateStrategy::slide);
    ASSERT_TRUE(same_bits(a, b)) << i;
    ASSERT_TRUE(same_bits(a, oracle::tuple_multiply(tc.u, tc.v, tc.F, tc.C, tc.T))) << i;
  }
}

TEST(TupleMultiply, SlideAvoidsGathersIndexedGathersEveryQuad) {
  const TupleCase tc = random_tuple(8, 8, 4, 3);
  TraceRecorder slide, indexed;
  run_tuple(tc, 512, ReplicateStrategy::slide, &slide);
  run_tuple(tc, 512, ReplicateStrategy::indexed, &indexed);
  EXPECT_EQ(slide.count(OpClass::mem_indexed), 0u);
  const std::size_t groups = 2;  // 8 filters, 4 blocks at 512 bits
  EXPECT_GE(indexed.count(OpClass::mem_indexed), 4u * 16u * 8u * groups);
  EXPECT_GT(slide.count(OpClass::slide), 0u);
}

TEST(TupleMultiply, FlopsPerTileChannelFilterIs128) {
  const TupleCase tc = random_tuple(5, 11, 3, 8);
  for (std::size_t bits : {128, 512, 4096}) {
    TraceRecorder rec;
    run_tuple(tc, bits, ReplicateStrategy::slide, &rec);
    std::uint64_t fma_flops = 0;
    for (const auto& r : rec.records())
      if (r.op == OpClass::fma) fma_flops += r.flops;
    EXPECT_EQ(fma_flops, 128u * 5 * 11 * 3);
  }
  EXPECT_NEAR(6.0 * 6 * 3 * 3 / (8 * 8), 5.06, 0.01);
}

TEST(TupleMultiply, LongerVectorsNeverAddInstructions) {
  for (std::size_t F : {24, 64, 100}) {
    const TupleCase tc = random_tuple(16, F, 5, F);
    for (auto st : {ReplicateStrategy::indexed, ReplicateStrategy::slide}) {
      std::uint64_t prev = UINT64_MAX;
      for (std::size_t bits = 128; bits <= 16384; bits *= 2) {
        StatsCollector sc(CacheConfig{}, CostModel{});
        run_tuple(tc, bits, st, &sc);
        const std::uint64_t n = sc.stats().vector_instructions();
        EXPECT_LE(n, prev) << F << ' ' << to_string(st) << ' ' << bits;
        prev = n;
      }
    }
  }
}

TEST(TupleMultiply, EmptyChannelRangeRejected) {
  Machine m(vl(512));
  const PackedDomain pd = PackedDomain::allocate(m, TileGrid::from(ConvShape{4, 6, 6, 4, 3, 1, 1}), false);
  EXPECT_THROW(tuple_multiply_group(m, pd, 0, ReplicateStrategy::slide, 2, 2), ArgumentError);
}

TEST(OutputTransform, SingleTileMatchesDenseOracle) {
  const ConvShape s{4, 8, 8, 1, 3, 1, 0};
  const auto A = flat_a();
  Machine m(vl(512));
  const TileGrid grid = TileGrid::from(s);
  const PackedDomain pd = PackedDomain::allocate(m, grid, false);
  const auto mm = oracle::random_floats(64, 33);
  pack_m(m, pd, mm);
  const Address out = m.allocate(36);
  output_transform(m, pd, grid, out);
  const auto ref = oracle::matmul(oracle::matmul(oracle::transpose(A, 8, 6), to_double(mm), 6, 8, 8), A, 6, 8, 6);
  EXPECT_LT(oracle::rel_error(m.read_host(out, 36), ref), 1e-5);
}

// ---- full convolution ----

TEST(ConvWinograd, MatchesDirectOracle) {
  const Layer l = make_layer(ConvShape{8, 20, 20, 8, 3, 1, 1}, 11);
  EXPECT_LT(oracle::rel_error(winograd(l, 512), reference(l)), 5e-3);
}

TEST(ConvWinograd, RandomLayersWithinBudget) {
  std::mt19937_64 rng(2024);
  for (int i = 0; i < 12; ++i) {
    ConvShape s;
    s.channels = 4 + rng() % 61;
    s.filters = 4 + rng() % 61;
    s.height = 8 + rng() % 27;
    s.width = 8 + rng() % 27;
    s.pad = rng() % 2;
    const Layer l = make_layer(s, rng());
    const std::size_t bits = std::size_t{128} << (rng() % 8);
    EXPECT_LT(oracle::rel_error(winograd(l, bits), reference(l)), 5e-3) << i;
  }
}

TEST(ConvWinograd, WideLayerWithinBudget) {
  const Layer l = make_layer(ConvShape{384, 7, 6, 72, 3, 1, 1}, 77);
  EXPECT_LT(oracle::rel_error(winograd(l, 2048), reference(l)), 5e-3);
}

TEST(ConvWinograd, StrategiesBitIdentical) {
  const Layer l = make_layer(ConvShape{9, 17, 13, 10, 3, 1, 1}, 5);
  for (std::size_t bits : {128, 512, 2048}) {
    const auto base = winograd(l, bits);
    for (auto r : {ReplicateStrategy::indexed, ReplicateStrategy::slide})
      for (auto t : {TransposeStrategy::indexed, TransposeStrategy::strided})
        EXPECT_TRUE(same_bits(winograd(l, bits, {r, t}), base)) << bits;
  }
}

TEST(ConvWinograd, VectorLengthAgnostic) {
  const Layer l = make_layer(ConvShape{13, 15, 19, 21, 3, 1, 1}, 6);
  const auto base = winograd(l, 128);
  for (std::size_t bits = 256; bits <= 16384; bits *= 2) EXPECT_TRUE(same_bits(winograd(l, bits), base)) << bits;
}

TEST(ConvWinograd, ChannelBlocksAreBitIdenticalToWholeLayerStages) {
  // 4096 bits: one channel of transformed filters is 8 KiB, so 80 channels
  // split into blocks of 32, 32 and 16.
  const Layer l = make_layer(ConvShape{80, 10, 10, 40, 3, 1, 1}, 8);
  Machine probe(vl(4096));
  const PackedDomain pd = PackedDomain::allocate(probe, TileGrid::from(l.shape), true);
  ASSERT_EQ(pd.channel_block, 32u);
  EXPECT_TRUE(same_bits(winograd(l, 4096), staged(l, 4096)));
  EXPECT_TRUE(same_bits(winograd(l, 4096, {ReplicateStrategy::indexed, TransposeStrategy::indexed}), staged(l, 4096)));
}

TEST(ConvWinograd, LinearUnderPowerOfTwoScaling) {
  Layer l = make_layer(ConvShape{6, 12, 12, 5, 3, 1, 1}, 9);
  const auto base = winograd(l, 512);
  for (float alpha : {0.25f, 2.0f, 8.0f}) {
    Layer scaled = l;
    for (auto& x : scaled.input) x *= alpha;
    const auto out = winograd(scaled, 512);
    for (std::size_t i = 0; i < out.size(); ++i)
      EXPECT_NEAR(out[i], alpha * base[i], 1e-6 * std::abs(alpha * base[i]) + 1e-30);
  }
}

TEST(ConvWinograd, ZeroInputGivesZero) {
  Layer l = make_layer(ConvShape{4, 9, 9, 4, 3, 1, 1}, 1);
  std::fill(l.input.begin(), l.input.end(), 0.0f);
  for (float y : winograd(l, 512)) EXPECT_EQ(y, 0.0f);
}

TEST(ConvWinograd, ReleasesScratchMemory) {
  const Layer l = make_layer(ConvShape{4, 9, 9, 4, 3, 1, 1}, 1);
  Machine m(vl(512));
  const Address in = m.allocate(l.input.size());
  const Address w = m.allocate(l.filters.size());
  const Address out = m.allocate(l.shape.output_elements());
  m.write_host(in, l.input);
  m.write_host(w, l.filters);
  const std::size_t mark = m.memory_mark();
  conv_winograd(m, in, w, out, l.shape);
  EXPECT_EQ(m.memory_mark(), mark);
}

TEST(ConvWinograd, RejectsLayersItCannotServe) {
  Machine m(vl(512));
  const Address a = m.allocate(4096);
  EXPECT_THROW(conv_winograd(m, a, a, a, ConvShape{4, 8, 8, 4, 3, 2, 1}), DispatchError);
  EXPECT_THROW(conv_winograd(m, a, a, a, ConvShape{4, 8, 8, 4, 1, 1, 0}), DispatchError);
}

TEST(ConvWinograd, CorruptedMatricesAreDetected) {
  WinogradMatrices bad = build_winograd_matrices();
  bad.B[3][4] += 0.25;
  const Layer l = make_layer(ConvShape{4, 12, 12, 4, 3, 1, 1}, 2);
  ScopedMatrixOverride guard(bad);
  EXPECT_GT(oracle::rel_error(winograd(l, 512), reference(l)), 5e-3);
}
