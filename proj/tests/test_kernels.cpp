#include <gtest/gtest.h>

#include <random>
#include <vector>

#include "gasca/kernels.hpp"
#include "oracles.hpp"

using namespace gasca;
namespace k = gasca::kernels;

namespace {

struct Case {
  k::ConvGeometry g;
  Tensor x, w, b;
};

Case random_case(std::mt19937_64& rng, bool with_pad) {
  auto pick = [&](std::size_t lo, std::size_t hi) { return std::uniform_int_distribution<std::size_t>(lo, hi)(rng); };
  Case c;
  c.g.batch = pick(1, 3);
  c.g.in_ch = pick(1, 3);
  c.g.out_ch = pick(1, 4);
  c.g.k_h = pick(1, 4);
  c.g.k_w = pick(1, 4);
  c.g.in_h = c.g.k_h + pick(0, 5);
  c.g.pad_right = with_pad ? pick(0, 2) : 0;
  c.g.in_w = std::max(c.g.k_w, c.g.pad_right + 1) + pick(0, 5);
  if (c.g.in_w + c.g.pad_right < c.g.k_w) c.g.in_w = c.g.k_w;
  c.x = oracle::random_tensor({c.g.batch, c.g.in_ch, c.g.in_h, c.g.in_w}, rng);
  c.w = oracle::random_tensor({c.g.out_ch, c.g.in_ch, c.g.k_h, c.g.k_w}, rng);
  c.b = oracle::random_tensor({c.g.out_ch}, rng);
  return c;
}

}  // namespace

TEST(Kernels, ConvForwardMatchesNestedLoops) {
  std::mt19937_64 rng(11);
  for (int t = 0; t < 150; ++t) {
    Case c = random_case(rng, true);
    Tensor out({c.g.batch, c.g.out_ch, c.g.out_h(), c.g.out_w()});
    k::conv2d_forward(c.g, c.x.data(), c.w.data(), c.b.data(), out.data());
    const Tensor ref = oracle::conv2d(c.x, c.w, &c.b, c.g.pad_right);
    ASSERT_LE(oracle::max_abs_diff(out, ref), 1e-12) << "case " << t;
  }
}

TEST(Kernels, ConvBackwardMatchesAdjointOracle) {
  // <conv(x), y> = <x, conv^T(y)> and <conv_w(x), y> = <w, dW>
  std::mt19937_64 rng(12);
  for (int t = 0; t < 100; ++t) {
    Case c = random_case(rng, true);
    Tensor dout = oracle::random_tensor({c.g.batch, c.g.out_ch, c.g.out_h(), c.g.out_w()}, rng);
    Tensor din(c.x.shape()), dw(c.w.shape()), db(c.b.shape());
    k::conv2d_backward_input(c.g, dout.data(), c.w.data(), din.data());
    k::conv2d_backward_weight(c.g, c.x.data(), dout.data(), dw.data(), db.data());
    // Brute force: every partial derivative via a one-hot forward pass.
    for (std::size_t i = 0; i < c.x.size(); i += 1 + c.x.size() / 17) {
      Tensor e(c.x.shape());
      e[i] = 1.0;
      const Tensor y = oracle::conv2d(e, c.w, nullptr, c.g.pad_right);
      double s = 0.0;
      for (std::size_t j = 0; j < y.size(); ++j) s += y[j] * dout[j];
      ASSERT_NEAR(din[i], s, 1e-12);
    }
    for (std::size_t i = 0; i < c.w.size(); ++i) {
      Tensor e(c.w.shape());
      e[i] = 1.0;
      const Tensor y = oracle::conv2d(c.x, e, nullptr, c.g.pad_right);
      double s = 0.0;
      for (std::size_t j = 0; j < y.size(); ++j) s += y[j] * dout[j];
      ASSERT_NEAR(dw[i], s, 1e-12);
    }
    const std::size_t plane = c.g.out_h() * c.g.out_w();
    for (std::size_t o = 0; o < c.g.out_ch; ++o) {
      double s = 0.0;
      for (std::size_t n = 0; n < c.g.batch; ++n)
        for (std::size_t p = 0; p < plane; ++p) s += dout[(n * c.g.out_ch + o) * plane + p];
      ASSERT_NEAR(db[o], s, 1e-12);
    }
  }
}

TEST(Kernels, MatmulMatchesNestedLoops) {
  std::mt19937_64 rng(13);
  for (int t = 0; t < 120; ++t) {
    const std::size_t m = 1 + rng() % 9, kk = 1 + rng() % 9, n = 1 + rng() % 9;
    const Tensor a = oracle::random_tensor({m, kk}, rng), b = oracle::random_tensor({kk, n}, rng);
    Tensor c({m, n});
    k::matmul(m, kk, n, a.data(), b.data(), c.data());
    ASSERT_LE(oracle::max_abs_diff(c, oracle::matmul(a, b)), 1e-12);
  }
}

TEST(Kernels, TransposeRoundTrip) {
  std::mt19937_64 rng(14);
  const Tensor a = oracle::random_tensor({5, 7}, rng);
  Tensor t({7, 5}), back({5, 7});
  k::transpose(5, 7, a.data(), t.data());
  k::transpose(7, 5, t.data(), back.data());
  EXPECT_EQ(back, a);
  EXPECT_EQ(t[3 * 5 + 2], a[2 * 7 + 3]);
}

TEST(Kernels, SerialAndParallelAreBitIdentical) {
  std::mt19937_64 rng(15);
  k::ConvGeometry g{8, 4, 24, 24, 16, 3, 3, 1};
  const Tensor x = oracle::random_tensor({8, 4, 24, 24}, rng);
  const Tensor w = oracle::random_tensor({16, 4, 3, 3}, rng);
  const Tensor b = oracle::random_tensor({16}, rng);
  const Tensor dout = oracle::random_tensor({8, 16, g.out_h(), g.out_w()}, rng);
  Tensor o1({8, 16, g.out_h(), g.out_w()}), o2 = o1;
  k::conv2d_forward(g, x.data(), w.data(), b.data(), o1.data());
  k::serial::conv2d_forward(g, x.data(), w.data(), b.data(), o2.data());
  EXPECT_EQ(o1, o2);
  Tensor d1(x.shape()), d2(x.shape());
  k::conv2d_backward_input(g, dout.data(), w.data(), d1.data());
  k::serial::conv2d_backward_input(g, dout.data(), w.data(), d2.data());
  EXPECT_EQ(d1, d2);
  Tensor w1(w.shape()), w2(w.shape()), b1(b.shape()), b2(b.shape());
  k::conv2d_backward_weight(g, x.data(), dout.data(), w1.data(), b1.data());
  k::serial::conv2d_backward_weight(g, x.data(), dout.data(), w2.data(), b2.data());
  EXPECT_EQ(w1, w2);
  EXPECT_EQ(b1, b2);
  const Tensor a = oracle::random_tensor({64, 200}, rng), m = oracle::random_tensor({200, 48}, rng);
  Tensor c1({64, 48}), c2({64, 48});
  k::matmul(64, 200, 48, a.data(), m.data(), c1.data());
  k::serial::matmul(64, 200, 48, a.data(), m.data(), c2.data());
  EXPECT_EQ(c1, c2);
}

TEST(Kernels, MacCounterCountsOnlyRealTaps) {
  k::ConvGeometry g{1, 1, 5, 4, 1, 3, 3, 2};
  Tensor x({1, 1, 5, 4}, 1.0), w({1, 1, 3, 3}, 1.0), out({1, 1, g.out_h(), g.out_w()});
  k::reset_mac_count();
  k::conv2d_forward(g, x.data(), w.data(), {}, out.data());
  // Hand count: output columns j = 0..3, taps b with j + b < 4.
  // j=0:3, j=1:3, j=2:2, j=3:1 -> 9 per row * 3 rows * 3 output rows.
  EXPECT_EQ(k::mac_count(), 9u * 3u * 3u);
  EXPECT_EQ(k::conv2d_forward_macs(g), 81u);
  // All-ones input and kernel: each output equals its tap count.
  EXPECT_DOUBLE_EQ(out[0], 9.0);
  EXPECT_DOUBLE_EQ(out[3], 3.0);
}

TEST(Kernels, GeometryValidation) {
  k::ConvGeometry g{1, 1, 2, 2, 1, 3, 3, 0};
  EXPECT_THROW(g.validate(), DimensionError);
  Tensor x({1, 1, 3, 3}), w({1, 1, 3, 3}), out({1, 1, 1, 1}), small({1});
  k::ConvGeometry ok{1, 1, 3, 3, 1, 3, 3, 0};
  EXPECT_NO_THROW(k::conv2d_forward(ok, x.data(), w.data(), {}, out.data()));
  EXPECT_THROW(k::conv2d_forward(ok, small.data(), w.data(), {}, out.data()), DimensionError);
  EXPECT_THROW(k::matmul(2, 2, 2, small.data(), small.data(), small.data()), DimensionError);
}
