#include "doctest.h"

#include <algorithm>
#include <cmath>

#include "oracles.hpp"
#include "saenet/kernels.hpp"
#include "saenet/rng.hpp"

using namespace saenet;

TEST_CASE("conv2d: 1x1 identity kernel passes the input through") {
  Tensor<double> x = Tensor<double>::ones({1, 1, 3, 3});
  Tensor<double> w({1, 1, 1, 1}, {1.0});
  ConvSpec spec{1, 1, 1, 1, 1, 0, 1};
  Tensor<double> y = conv2d(x, w, nullptr, spec);
  REQUIRE(y.shape() == Shape{1, 1, 3, 3});
  for (int64_t i = 0; i < y.numel(); ++i) CHECK(y[i] == 1.0);
}

TEST_CASE("conv2d: grouped conv equals independent convs on channel slices") {
  Rng rng(42);
  for (int64_t groups : {1, 2, 4}) {
    const int64_t in_c = 4, out_c = 8;
    auto x = oracle::random_tensor<double>({2, in_c, 5, 5}, rng);
    auto w = oracle::random_tensor<double>({out_c, in_c / groups, 3, 3}, rng);
    ConvSpec spec{in_c, out_c, 3, 3, 1, 1, groups};
    Tensor<double> whole = conv2d(x, w, nullptr, spec);

    std::vector<Tensor<double>> parts;
    const int64_t gi = in_c / groups, go = out_c / groups;
    for (int64_t g = 0; g < groups; ++g) {
      Tensor<double> xg = slice_channels(x, g * gi, (g + 1) * gi);
      Tensor<double> wg({go, gi, 3, 3});
      for (int64_t i = 0; i < wg.numel(); ++i) wg[i] = w[g * go * gi * 9 + i];
      ConvSpec sub{gi, go, 3, 3, 1, 1, 1};
      parts.push_back(conv2d(xg, wg, nullptr, sub));
    }
    Tensor<double> stitched = concat_channels(parts);
    REQUIRE(whole.shape() == stitched.shape());
    for (int64_t i = 0; i < whole.numel(); ++i) CHECK(whole[i] == stitched[i]);
  }
}

TEST_CASE("conv2d: strided padded conv matches the direct-loop oracle") {
  Rng rng(7);
  auto x = oracle::random_tensor<double>({2, 3, 8, 8}, rng);
  auto w = oracle::random_tensor<double>({4, 3, 3, 3}, rng);
  ConvSpec spec{3, 4, 3, 3, 2, 1, 1};
  Tensor<double> got = conv2d(x, w, nullptr, spec);
  Tensor<double> want = oracle::conv2d_direct(x, w, nullptr, spec);
  REQUIRE(got.shape() == Shape{2, 4, 4, 4});
  CHECK(oracle::max_abs_diff(got, want) < 1e-12);
}

TEST_CASE("conv2d: random small shapes agree with the oracle, with bias too") {
  Rng rng(99);
  for (int trial = 0; trial < 25; ++trial) {
    const int64_t n = 1 + static_cast<int64_t>(rng.below(2));
    const int64_t groups = (trial % 3 == 0) ? 2 : 1;
    const int64_t ic = groups * (1 + static_cast<int64_t>(rng.below(3)));
    const int64_t oc = groups * (1 + static_cast<int64_t>(rng.below(3)));
    const int64_t k = 1 + 2 * static_cast<int64_t>(rng.below(2));
    const int64_t h = std::max<int64_t>(k, 2 + static_cast<int64_t>(rng.below(7)));
    const int64_t stride = 1 + static_cast<int64_t>(rng.below(2));
    const int64_t pad = static_cast<int64_t>(rng.below(2));
    if ((h + 2 * pad - k) / stride + 1 <= 0) continue;
    auto x = oracle::random_tensor<double>({n, ic, h, h}, rng);
    auto w = oracle::random_tensor<double>({oc, ic / groups, k, k}, rng);
    auto b = oracle::random_tensor<double>({oc}, rng);
    ConvSpec spec{ic, oc, k, k, stride, pad, groups};
    CHECK(oracle::max_abs_diff(conv2d(x, w, &b, spec),
                               oracle::conv2d_direct(x, w, &b, spec)) < 1e-12);
  }
}

TEST_CASE("conv2d: shape errors name the offending axis") {
  Tensor<double> x = Tensor<double>::ones({1, 3, 4, 4});
  Tensor<double> w = Tensor<double>::ones({2, 4, 3, 3});
  ConvSpec spec{4, 2, 3, 3, 1, 0, 1};
  CHECK_THROWS_AS(conv2d(x, w, nullptr, spec), DimensionError);

  ConvSpec bad_geom{3, 2, 3, 3, 1, 0, 1};
  Tensor<double> w3 = Tensor<double>::ones({2, 3, 3, 3});
  Tensor<double> tiny = Tensor<double>::ones({1, 3, 2, 2});
  CHECK_THROWS_AS(conv2d(tiny, w3, nullptr, bad_geom), ConfigError);

  ConvSpec bad_groups{3, 2, 3, 3, 1, 0, 2};
  CHECK_THROWS_AS(bad_groups.validate(), ConfigError);
}

TEST_CASE("matmul: identity, ones, and the triple-loop oracle") {
  Tensor<double> eye({3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1});
  Rng rng(3);
  auto b = oracle::random_tensor<double>({3, 2}, rng);
  auto out = matmul(eye, b);
  for (int64_t i = 0; i < b.numel(); ++i) CHECK(out[i] == b[i]);

  auto ones_row = Tensor<double>::ones({1, 4});
  auto ones_col = Tensor<double>::ones({4, 1});
  CHECK(matmul(ones_row, ones_col)[0] == 4.0);

  auto a = oracle::random_tensor<double>({5, 7}, rng);
  auto c = oracle::random_tensor<double>({7, 3}, rng);
  CHECK(oracle::max_abs_diff(matmul(a, c), oracle::matmul_direct(a, c)) < 1e-12);

  CHECK_THROWS_AS(matmul(a, b), DimensionError);
}

TEST_CASE("matmul_nt / matmul_tn agree with explicit transposition") {
  Rng rng(11);
  auto a = oracle::random_tensor<double>({4, 6}, rng);
  auto b = oracle::random_tensor<double>({5, 6}, rng);
  auto nt = matmul_nt(a, b); // (4,5)
  Tensor<double> bt({6, 5});
  for (int64_t i = 0; i < 5; ++i)
    for (int64_t j = 0; j < 6; ++j) bt[bt.offset2(j, i)] = b[b.offset2(i, j)];
  CHECK(oracle::max_abs_diff(nt, oracle::matmul_direct(a, bt)) < 1e-12);

  auto c = oracle::random_tensor<double>({6, 4}, rng);
  auto d = oracle::random_tensor<double>({6, 5}, rng);
  auto tn = matmul_tn(c, d); // (4,5)
  Tensor<double> ct({4, 6});
  for (int64_t i = 0; i < 6; ++i)
    for (int64_t j = 0; j < 4; ++j) ct[ct.offset2(j, i)] = c[c.offset2(i, j)];
  CHECK(oracle::max_abs_diff(tn, oracle::matmul_direct(ct, d)) < 1e-12);
}

TEST_CASE("global_avg_pool: constants, means, and the loop oracle") {
  auto constant = Tensor<double>::full({2, 3, 4, 4}, 0.75);
  auto pooled = global_avg_pool(constant);
  REQUIRE(pooled.shape() == Shape{2, 3});
  for (int64_t i = 0; i < pooled.numel(); ++i) CHECK(pooled[i] == doctest::Approx(0.75));

  Tensor<double> quad({1, 1, 2, 2}, {1, 2, 3, 4});
  CHECK(global_avg_pool(quad)[0] == doctest::Approx(2.5));

  Rng rng(5);
  auto x = oracle::random_tensor<double>({2, 8, 5, 5}, rng);
  CHECK(oracle::max_abs_diff(global_avg_pool(x), oracle::global_avg_pool_direct(x)) == 0.0);

  CHECK_THROWS_AS(global_avg_pool(Tensor<double>::ones({2, 3})), DimensionError);
}

TEST_CASE("global_avg_pool is equivariant under spatial permutation") {
  Rng rng(17);
  auto x = oracle::random_tensor<double>({2, 4, 3, 3}, rng);
  // Reverse the spatial positions of every channel plane.
  Tensor<double> perm(x.shape());
  const int64_t hw = 9;
  for (int64_t nc = 0; nc < 2 * 4; ++nc)
    for (int64_t i = 0; i < hw; ++i) perm[nc * hw + i] = x[nc * hw + (hw - 1 - i)];
  auto a = global_avg_pool(x);
  auto b = global_avg_pool(perm);
  CHECK(oracle::max_abs_diff(a, b) < 1e-15);
}

TEST_CASE("batchnorm2d: train mode normalizes each channel") {
  Rng rng(23);
  auto x = oracle::random_tensor<double>({4, 3, 5, 5}, rng, -3.0, 2.0);
  auto gamma = Tensor<double>::ones({3});
  auto beta = Tensor<double>::zeros({3});
  RunningStats<double> stats(3);
  auto y = batchnorm2d(x, gamma, beta, stats, true, 1e-5, 0.1);

  const int64_t hw = 25, m = 4 * hw;
  for (int64_t c = 0; c < 3; ++c) {
    double mean = 0, var = 0;
    for (int64_t n = 0; n < 4; ++n)
      for (int64_t i = 0; i < hw; ++i) mean += y[y.offset4(n, c, i / 5, i % 5)];
    mean /= m;
    for (int64_t n = 0; n < 4; ++n)
      for (int64_t i = 0; i < hw; ++i) {
        const double d = y[y.offset4(n, c, i / 5, i % 5)] - mean;
        var += d * d;
      }
    var /= m;
    CHECK(std::abs(mean) < 1e-10);
    CHECK(var == doctest::Approx(1.0).epsilon(1e-3)); // eps shifts variance slightly
  }
}

TEST_CASE("batchnorm2d: zero gamma yields constant beta output") {
  Rng rng(29);
  auto x = oracle::random_tensor<double>({2, 2, 3, 3}, rng);
  auto gamma = Tensor<double>::zeros({2});
  Tensor<double> beta({2}, {1.5, -2.0});
  RunningStats<double> stats(2);
  auto y = batchnorm2d(x, gamma, beta, stats, true, 1e-5, 0.1);
  for (int64_t n = 0; n < 2; ++n)
    for (int64_t c = 0; c < 2; ++c)
      for (int64_t i = 0; i < 9; ++i) CHECK(y[y.offset4(n, c, i / 3, i % 3)] == beta[c]);
}

TEST_CASE("batchnorm2d: momentum-1 train then eval reproduces the train output") {
  Rng rng(31);
  auto x = oracle::random_tensor<double>({3, 4, 6, 6}, rng, -2.0, 2.0);
  auto gamma = oracle::random_tensor<double>({4}, rng, 0.5, 1.5);
  auto beta = oracle::random_tensor<double>({4}, rng, -0.5, 0.5);
  RunningStats<double> stats(4);
  auto train_out = batchnorm2d(x, gamma, beta, stats, true, 1e-5, 1.0);
  auto eval_out = batchnorm2d(x, gamma, beta, stats, false, 1e-5, 1.0);
  CHECK(oracle::max_abs_diff(train_out, eval_out) < 1e-5);
}

TEST_CASE("batchnorm2d: degenerate train batch is rejected") {
  auto x = Tensor<double>::ones({1, 3, 1, 1});
  auto gamma = Tensor<double>::ones({3});
  auto beta = Tensor<double>::zeros({3});
  RunningStats<double> stats(3);
  CHECK_THROWS_AS(batchnorm2d(x, gamma, beta, stats, true, 1e-5, 0.1), DegenerateBatchError);
  CHECK_NOTHROW(batchnorm2d(x, gamma, beta, stats, false, 1e-5, 0.1));
}

TEST_CASE("concat_channels: singleton, rows, and slicing round-trip") {
  Rng rng(37);
  auto a = oracle::random_tensor<double>({3, 4}, rng);
  auto single = concat_channels<double>({a});
  for (int64_t i = 0; i < a.numel(); ++i) CHECK(single[i] == a[i]);

  Tensor<double> r1({1, 2}, {1, 2}), r2({1, 2}, {3, 4});
  auto row = concat_channels<double>({r1, r2});
  REQUIRE(row.shape() == Shape{1, 4});
  CHECK(row[0] == 1);
  CHECK(row[1] == 2);
  CHECK(row[2] == 3);
  CHECK(row[3] == 4);

  std::vector<Tensor<double>> parts;
  for (int i = 0; i < 3; ++i) parts.push_back(oracle::random_tensor<double>({2, 8}, rng));
  auto joined = concat_channels(parts);
  REQUIRE(joined.shape() == Shape{2, 24});
  for (int i = 0; i < 3; ++i) {
    auto back = slice_channels(joined, 8 * i, 8 * (i + 1));
    for (int64_t j = 0; j < back.numel(); ++j) CHECK(back[j] == parts[static_cast<size_t>(i)][j]);
  }

  Tensor<double> odd({2, 4});
  CHECK_THROWS_AS(concat_channels<double>({a, odd}), DimensionError);
}

TEST_CASE("concat_channels handles NCHW parts") {
  Rng rng(41);
  auto a = oracle::random_tensor<double>({2, 3, 4, 4}, rng);
  auto b = oracle::random_tensor<double>({2, 5, 4, 4}, rng);
  auto j = concat_channels<double>({a, b});
  REQUIRE(j.shape() == Shape{2, 8, 4, 4});
  CHECK(j[j.offset4(1, 2, 3, 3)] == a[a.offset4(1, 2, 3, 3)]);
  CHECK(j[j.offset4(1, 4, 0, 2)] == b[b.offset4(1, 1, 0, 2)]);
}

TEST_CASE("channel_scale: identity, null, and loop-oracle gates") {
  Rng rng(43);
  auto x = oracle::random_tensor<double>({2, 3, 4, 4}, rng);
  auto ones = Tensor<double>::ones({2, 3});
  auto scaled = channel_scale(x, ones);
  for (int64_t i = 0; i < x.numel(); ++i) CHECK(scaled[i] == x[i]);

  auto zeros = Tensor<double>::zeros({2, 3});
  auto dead = channel_scale(x, zeros);
  for (int64_t i = 0; i < x.numel(); ++i) CHECK(dead[i] == 0.0);

  auto gates = oracle::random_tensor<double>({2, 3}, rng);
  CHECK(oracle::max_abs_diff(channel_scale(x, gates),
                             oracle::channel_scale_direct(x, gates)) == 0.0);

  auto wrong = Tensor<double>::ones({2, 4});
  CHECK_THROWS_AS(channel_scale(x, wrong), DimensionError);
}

TEST_CASE("elementwise: relu, sigmoid, softmax stability, add") {
  Tensor<double> v({3}, {-1, 0, 2});
  auto r = relu(v);
  CHECK(r[0] == 0);
  CHECK(r[1] == 0);
  CHECK(r[2] == 2);

  CHECK(sigmoid(Tensor<double>::zeros({1}))[0] == doctest::Approx(0.5));

  Tensor<double> big({1, 2}, {1000, 1000});
  auto sm = softmax_rows(big);
  CHECK(sm[0] == doctest::Approx(0.5));
  CHECK(sm[1] == doctest::Approx(0.5));
  CHECK(sm.all_finite());

  CHECK_THROWS_AS(add(Tensor<double>::ones({2, 2}), Tensor<double>::ones({2, 3})),
                  DimensionError);
}

TEST_CASE("softmax_rows: rows sum to one and lie in [0,1]") {
  Rng rng(47);
  auto x = oracle::random_tensor<double>({6, 9}, rng, -30.0, 30.0);
  auto s = softmax_rows(x);
  for (int64_t i = 0; i < 6; ++i) {
    double total = 0;
    for (int64_t j = 0; j < 9; ++j) {
      const double p = s[s.offset2(i, j)];
      CHECK(p >= 0.0);
      CHECK(p <= 1.0);
      total += p;
    }
    CHECK(total == doctest::Approx(1.0).epsilon(1e-6));
  }
}

TEST_CASE("maxpool2d: hand case with overlap and padding") {
  // 1x1x4x4 ramp, 3x3 kernel stride 2 pad 1 -> 2x2
  std::vector<double> vals(16);
  for (int i = 0; i < 16; ++i) vals[static_cast<size_t>(i)] = i;
  Tensor<double> x({1, 1, 4, 4}, std::move(vals));
  std::vector<int64_t> argmax;
  auto y = maxpool2d(x, 3, 2, 1, &argmax);
  REQUIRE(y.shape() == Shape{1, 1, 2, 2});
  CHECK(y[0] == 5);
  CHECK(y[1] == 7);
  CHECK(y[2] == 13);
  CHECK(y[3] == 15);
  CHECK(argmax[3] == 15);
}

TEST_CASE("forward kernels keep finite inputs finite") {
  Rng rng(53);
  auto x = oracle::random_tensor<float>({2, 4, 6, 6}, rng, -50.0, 50.0);
  auto w = oracle::random_tensor<float>({8, 4, 3, 3}, rng);
  ConvSpec spec{4, 8, 3, 3, 1, 1, 1};
  CHECK(conv2d(x, w, nullptr, spec).all_finite());
  CHECK(relu(x).all_finite());
  CHECK(sigmoid(x).all_finite());
  CHECK(global_avg_pool(x).all_finite());
}
