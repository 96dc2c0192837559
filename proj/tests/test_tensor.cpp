#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "sea/tensor.hpp"
#include "testutil.hpp"

using namespace sea;
using testutil::gradcheck;
using testutil::max_abs_diff;

namespace {

// Independent triple-loop contraction used as the matmul oracle.
Tensor matmul_reference(const Tensor& a, const Tensor& b) {
  int64_t m = a.dim(0), p = a.dim(1), n = b.dim(1);
  Tensor out = Tensor::zeros({m, n});
  auto& od = out.mutable_data();
  for (int64_t i = 0; i < m; ++i)
    for (int64_t j = 0; j < n; ++j)
      for (int64_t k = 0; k < p; ++k)
        od[i * n + j] += a.data()[i * p + k] * b.data()[k * n + j];
  return out;
}

}  // namespace

TEST_CASE("matmul identity and hand-computed cases") {
  Tensor eye = Tensor::from({2, 2}, {1, 0, 0, 1});
  Tensor b = Tensor::from({2, 2}, {3, 4, 5, 6});
  Tensor c = matmul(eye, b);
  CHECK(max_abs_diff(c, b) == 0.0);

  Tensor row = Tensor::from({1, 2}, {1, 2});
  Tensor col = Tensor::from({2, 1}, {3, 4});
  CHECK(matmul(row, col).item() == 11.0);
}

TEST_CASE("matmul matches triple-loop reference") {
  Rng rng(7);
  Tensor a = Tensor::randn({4, 5}, rng);
  Tensor b = Tensor::randn({5, 3}, rng);
  CHECK(max_abs_diff(matmul(a, b), matmul_reference(a, b)) < 1e-12);
}

TEST_CASE("matmul shape errors report both shapes") {
  Tensor a = Tensor::zeros({2, 3});
  Tensor b = Tensor::zeros({4, 2});
  CHECK_THROWS_WITH_AS(matmul(a, b),
                       doctest::Contains("[2,3]"), ShapeError);
}

TEST_CASE("matmul batched against per-slice 2d") {
  Rng rng(3);
  Tensor a = Tensor::randn({3, 4, 5}, rng);
  Tensor b = Tensor::randn({3, 5, 2}, rng);
  Tensor c = matmul(a, b);
  for (int64_t t = 0; t < 3; ++t) {
    Tensor as = Tensor::from({4, 5}, std::vector<double>(
        a.data().begin() + t * 20, a.data().begin() + (t + 1) * 20));
    Tensor bs = Tensor::from({5, 2}, std::vector<double>(
        b.data().begin() + t * 10, b.data().begin() + (t + 1) * 10));
    Tensor cs = matmul_reference(as, bs);
    for (int64_t i = 0; i < 8; ++i)
      CHECK(c.data()[t * 8 + i] == doctest::Approx(cs.data()[i]).epsilon(1e-12));
  }
}

TEST_CASE("softmax basics") {
  Tensor x = Tensor::from({2}, {0, 0});
  Tensor y = softmax_lastdim(x);
  CHECK(y.data()[0] == doctest::Approx(0.5));
  CHECK(y.data()[1] == doctest::Approx(0.5));

  // large logits must not overflow
  Tensor big = softmax_lastdim(Tensor::from({2}, {1000, 0}));
  CHECK(big.data()[0] == doctest::Approx(1.0));
  CHECK(std::isfinite(big.data()[1]));

  CHECK_THROWS_AS(softmax_lastdim(Tensor::zeros({3, 0})), ShapeError);
}

TEST_CASE("softmax rows sum to one and match exp/sum oracle") {
  Rng rng(11);
  Tensor x = Tensor::randn({5, 9}, rng);
  Tensor y = softmax_lastdim(x);
  for (int64_t r = 0; r < 5; ++r) {
    double s = 0.0, denom = 0.0;
    for (int64_t c = 0; c < 9; ++c) denom += std::exp(x.data()[r * 9 + c]);
    for (int64_t c = 0; c < 9; ++c) {
      s += y.data()[r * 9 + c];
      double oracle = std::exp(x.data()[r * 9 + c]) / denom;
      CHECK(std::abs(y.data()[r * 9 + c] - oracle) < 1e-12);
    }
    CHECK(std::abs(s - 1.0) < 1e-12);
  }
}

TEST_CASE("conv2d identity kernel") {
  Rng rng(5);
  Tensor x = Tensor::randn({1, 4, 6}, rng);
  std::vector<double> k(9, 0.0);
  k[4] = 1.0;  // center tap
  Tensor w = Tensor::from({1, 1, 3, 3}, k);
  Tensor b = Tensor::zeros({1});
  CHECK(max_abs_diff(conv2d(x, w, b, 1, 1, false), x) == 0.0);
}

TEST_CASE("conv2d all-ones on all-ones input") {
  Tensor x = Tensor::full({1, 5, 5}, 1.0);
  Tensor w = Tensor::full({1, 1, 3, 3}, 1.0);
  Tensor b = Tensor::zeros({1});
  Tensor y = conv2d(x, w, b, 1, 1, false);
  // interior pixels see the full 3x3 window, corners see 2x2
  CHECK(y.at({0, 2, 2}) == doctest::Approx(9));
  CHECK(y.at({0, 0, 0}) == doctest::Approx(4));
  CHECK(y.at({0, 0, 4}) == doctest::Approx(4));
  CHECK(y.at({0, 4, 0}) == doctest::Approx(4));
  CHECK(y.at({0, 0, 2}) == doctest::Approx(6));
}

TEST_CASE("conv2d causal masks future rows bit-exactly") {
  Rng rng(17);
  Tensor x = Tensor::randn({2, 6, 4}, rng);
  Tensor w = Tensor::randn({3, 2, 3, 3}, rng);
  Tensor b = Tensor::randn({3}, rng);
  Tensor y1 = conv2d(x, w, b, 1, 1, true);

  Tensor x2 = x.detach();
  int64_t r_pert = 4;
  for (int64_t c = 0; c < 2; ++c)
    for (int64_t q = 0; q < 4; ++q)
      x2.mutable_data()[(c * 6 + r_pert) * 4 + q] += 3.5;
  Tensor y2 = conv2d(x2, w, b, 1, 1, true);
  for (int64_t c = 0; c < 3; ++c)
    for (int64_t r = 0; r < r_pert; ++r)
      for (int64_t q = 0; q < 4; ++q)
        CHECK(y1.at({c, r, q}) == y2.at({c, r, q}));
}

TEST_CASE("conv2d channel mismatch") {
  CHECK_THROWS_AS(conv2d(Tensor::zeros({2, 4, 4}), Tensor::zeros({1, 3, 3, 3}),
                         Tensor::zeros({1}), 1, 1, false),
                  ShapeError);
}

TEST_CASE("conv2d strided height reduction") {
  Rng rng(23);
  Tensor x = Tensor::randn({1, 8, 6}, rng);
  Tensor w = Tensor::randn({1, 1, 3, 3}, rng);
  Tensor b = Tensor::zeros({1});
  Tensor y = conv2d(x, w, b, 2, 1, false);
  CHECK(y.shape() == Shape{1, 4, 6});
}

TEST_CASE("nn_interpolate index mapping") {
  Tensor x = Tensor::from({4}, {1, 2, 3, 4});
  CHECK(max_abs_diff(nn_interpolate(x, 4, 0), x) == 0.0);  // identity resize

  Tensor ab = Tensor::from({2}, {5, 7});
  Tensor up = nn_interpolate(ab, 4, 0);
  CHECK(up.data() == std::vector<double>{5, 5, 7, 7});

  Tensor abcd = Tensor::from({4}, {1, 2, 3, 4});
  Tensor down = nn_interpolate(abcd, 2, 0);
  CHECK(down.data() == std::vector<double>{1, 3});
}

TEST_CASE("nn_interpolate up-then-down round trip is exact") {
  Rng rng(9);
  Tensor x = Tensor::randn({3, 7}, rng);
  Tensor up = nn_interpolate(x, 21, 1);
  Tensor back = nn_interpolate(up, 7, 1);
  CHECK(max_abs_diff(back, x) == 0.0);
}

TEST_CASE("causal_row_interpolate widths and zeros") {
  Tensor a = Tensor::from({1, 3, 2}, {1, 2, 3, 4, 5, 6});
  Tensor y = causal_row_interpolate(a, 3);
  // row 0: width 1, src floor(0*2/1)=0
  CHECK(y.at({0, 0, 0}) == 1);
  CHECK(y.at({0, 0, 1}) == 0);
  // row 1: width 2, srcs 0,1
  CHECK(y.at({0, 1, 0}) == 3);
  CHECK(y.at({0, 1, 1}) == 4);
  CHECK(y.at({0, 1, 2}) == 0);
  // row 2: width 3, srcs floor(c*2/3) = 0,0,1
  CHECK(y.at({0, 2, 0}) == 5);
  CHECK(y.at({0, 2, 1}) == 5);
  CHECK(y.at({0, 2, 2}) == 6);
}

TEST_CASE("reshape and transpose round trips are bit-exact") {
  Rng rng(13);
  Tensor x = Tensor::randn({3, 4, 5}, rng);
  CHECK(max_abs_diff(reshape(reshape(x, {12, 5}), {3, 4, 5}), x) == 0.0);
  CHECK(max_abs_diff(transpose_last2(transpose_last2(x)), x) == 0.0);
  Tensor p = permute(permute(x, {2, 0, 1}), {1, 2, 0});
  CHECK(max_abs_diff(p, x) == 0.0);
}

TEST_CASE("cumsum forward") {
  Tensor x = Tensor::from({2, 3}, {1, 2, 3, 4, 5, 6});
  Tensor y = cumsum(x, 0);
  CHECK(y.data() == std::vector<double>{1, 2, 3, 5, 7, 9});
  Tensor z = cumsum(x, 1);
  CHECK(z.data() == std::vector<double>{1, 3, 6, 4, 9, 15});
}

TEST_CASE("backward basics: sum and quadratic") {
  {
    Tape tape;
    TapeScope scope(tape);
    Tensor x = Tensor::from({3}, {1, 2, 3}).set_requires_grad(true);
    tape.backward(sum_all(x));
    CHECK(x.grad() == std::vector<double>{1, 1, 1});
  }
  {
    Tape tape;
    TapeScope scope(tape);
    Tensor x = Tensor::from({3}, {1, 2, 3}).set_requires_grad(true);
    tape.backward(sum_all(mul(x, x)));
    CHECK(x.grad() == std::vector<double>{2, 4, 6});
  }
}

TEST_CASE("backward rejects non-scalar loss and double consumption") {
  Tape tape;
  TapeScope scope(tape);
  Tensor x = Tensor::from({2}, {1, 2}).set_requires_grad(true);
  Tensor y = mul(x, x);
  CHECK_THROWS_AS(tape.backward(y), ContractError);
  Tensor l = sum_all(y);
  tape.backward(l);
  CHECK_THROWS_AS(tape.backward(l), ContractError);
}

TEST_CASE("gradcheck: every differentiable op") {
  Rng rng(101);
  double tol = 1e-4;

  SUBCASE("elementwise and reductions") {
    Tensor a = Tensor::rand_uniform({3, 4}, rng, -2, 2);
    Tensor b = Tensor::rand_uniform({3, 4}, rng, -2, 2);
    Tensor pos = Tensor::rand_uniform({3, 4}, rng, 0.5, 2.5);
    Tensor s = Tensor::rand_uniform({3}, rng, -2, 2);
    CHECK(gradcheck([&] { return sum_all(mul(add(a, b), sub(a, b))); }, {a, b}) < tol);
    CHECK(gradcheck([&] { return sum_all(div(a, pos)); }, {a, pos}) < tol);
    CHECK(gradcheck([&] { return sum_all(exp(mul_scalar(a, 0.5))); }, {a}) < tol);
    CHECK(gradcheck([&] { return sum_all(log(pos)); }, {pos}) < tol);
    CHECK(gradcheck([&] { return sum_all(sigmoid(a)); }, {a}) < tol);
    CHECK(gradcheck([&] { return sum_all(silu(a)); }, {a}) < tol);
    CHECK(gradcheck([&] { return sum_all(recip(pos)); }, {pos}) < tol);
    CHECK(gradcheck([&] { return sum_all(mul_rows(a, s)); }, {a, s}) < tol);
    CHECK(gradcheck([&] { return sum_all(mul(sum(a, 1), s)); }, {a, s}) < tol);
    CHECK(gradcheck([&] { return mean_all(mul(mean(a, 0), mean(a, 0))); }, {a}) < tol);
    CHECK(gradcheck([&] { return sum_all(mul(cumsum(a, 0), cumsum(a, 1))); }, {a}) < tol);
  }

  SUBCASE("matmul softmax shapeops") {
    Tensor a = Tensor::rand_uniform({4, 3}, rng, -2, 2);
    Tensor b = Tensor::rand_uniform({3, 5}, rng, -2, 2);
    Tensor w = Tensor::rand_uniform({2, 4, 3}, rng, -2, 2);
    CHECK(gradcheck([&] { return sum_all(mul(matmul(a, b), matmul(a, b))); }, {a, b}) < tol);
    CHECK(gradcheck([&] { return sum_all(mul(matmul(w, b), matmul(w, b))); }, {w, b}) < tol);
    CHECK(gradcheck([&] {
      return sum_all(mul(matmul(softmax_lastdim(a), b), matmul(a, b)));
    }, {a, b}) < tol);
    CHECK(gradcheck([&] {
      return sum_all(mul(transpose_last2(a), transpose_last2(a)));
    }, {a}) < tol);
    CHECK(gradcheck([&] {
      Tensor r = reshape(a, {2, 6});
      return sum_all(mul(r, r));
    }, {a}) < tol);
    CHECK(gradcheck([&] {
      Tensor c = concat_lastdim(a, a);
      return sum_all(mul(c, c));
    }, {a}) < tol);
    CHECK(gradcheck([&] {
      Tensor p = permute(w, {1, 2, 0});
      return sum_all(mul(p, p));
    }, {w}) < tol);
    CHECK(gradcheck([&] {
      Tensor s = select0(w, 1);
      return sum_all(mul(s, s));
    }, {w}) < tol);
    CHECK(gradcheck([&] {
      Tensor s = stack0({a, a});
      return sum_all(mul(s, s));
    }, {a}) < tol);
    Tensor bias = Tensor::rand_uniform({5}, rng, -2, 2);
    CHECK(gradcheck([&] {
      Tensor y = linear(a, b, bias);
      return sum_all(mul(y, y));
    }, {a, b, bias}) < tol);
  }

  SUBCASE("conv and interpolation") {
    Tensor x = Tensor::rand_uniform({2, 6, 4}, rng, -2, 2);
    Tensor w = Tensor::rand_uniform({3, 2, 3, 3}, rng, -2, 2);
    Tensor b = Tensor::rand_uniform({3}, rng, -2, 2);
    CHECK(gradcheck([&] {
      Tensor y = conv2d(x, w, b, 1, 1, false);
      return sum_all(mul(y, y));
    }, {x, w, b}) < tol);
    CHECK(gradcheck([&] {
      Tensor y = conv2d(x, w, b, 2, 1, false);
      return sum_all(mul(y, y));
    }, {x, w, b}) < tol);
    CHECK(gradcheck([&] {
      Tensor y = conv2d(x, w, b, 1, 2, false);
      return sum_all(mul(y, y));
    }, {x, w, b}) < tol);
    CHECK(gradcheck([&] {
      Tensor y = conv2d(x, w, b, 1, 1, true);
      return sum_all(mul(y, y));
    }, {x, w, b}) < tol);
    CHECK(gradcheck([&] {
      Tensor y = nn_interpolate(x, 9, 1);
      return sum_all(mul(y, y));
    }, {x}) < tol);
    CHECK(gradcheck([&] {
      Tensor y = nn_interpolate(x, 3, 2);
      return sum_all(mul(y, y));
    }, {x}) < tol);
    CHECK(gradcheck([&] {
      Tensor y = causal_row_interpolate(x, 8);
      return sum_all(mul(y, y));
    }, {x}) < tol);
  }

  SUBCASE("composite graph vs finite differences") {
    Tensor a = Tensor::rand_uniform({4, 4}, rng, -2, 2);
    Tensor b = Tensor::rand_uniform({4, 4}, rng, -2, 2);
    CHECK(gradcheck([&] {
      Tensor h = softmax_lastdim(matmul(a, transpose_last2(b)));
      Tensor c = matmul(h, b);
      return mean_all(mul(c, sigmoid(c)));
    }, {a, b}) < tol);
  }
}

TEST_CASE("assert_finite flags NaN and Inf") {
  CHECK_NOTHROW(assert_finite(Tensor::from({2}, {1.0, -3.0}), "x"));
  CHECK_THROWS_AS(
      assert_finite(Tensor::from({2}, {1.0, std::nan("")}), "x"),
      NumericError);
  CHECK_THROWS_AS(
      assert_finite(Tensor::from({1}, {INFINITY}), "x"), NumericError);
}
