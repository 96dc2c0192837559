#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "sea/performer.hpp"
#include "testutil.hpp"

using namespace sea;
using testutil::max_abs_diff;

namespace {

// Dense softmax(QK^T/sqrt(d))V oracle, quadratic on purpose.
Tensor dense_attn_reference(const Tensor& q, const Tensor& k,
                            const Tensor& v) {
  int64_t t_len = q.dim(0), d = q.dim(1), dv = v.dim(1);
  double scale = 1.0 / std::sqrt(static_cast<double>(d));
  Tensor out = Tensor::zeros({t_len, dv});
  for (int64_t i = 0; i < t_len; ++i) {
    std::vector<double> row(t_len);
    double mx = -1e300;
    for (int64_t j = 0; j < t_len; ++j) {
      double s = 0.0;
      for (int64_t c = 0; c < d; ++c)
        s += q.data()[i * d + c] * k.data()[j * d + c];
      row[j] = s * scale;
      mx = std::max(mx, row[j]);
    }
    double denom = 0.0;
    for (int64_t j = 0; j < t_len; ++j) {
      row[j] = std::exp(row[j] - mx);
      denom += row[j];
    }
    for (int64_t j = 0; j < t_len; ++j)
      for (int64_t c = 0; c < dv; ++c)
        out.mutable_data()[i * dv + c] += row[j] / denom * v.data()[j * dv + c];
  }
  return out;
}

double favor_max_err(int64_t m, uint64_t seed, const Tensor& q,
                     const Tensor& k, const Tensor& v) {
  FeatureMap fm = FeatureMap::create(m, q.dim(1), seed);
  Tensor approx = favor_plus(q, k, v, fm, false);
  return max_abs_diff(approx, dense_attn_reference(q, k, v));
}

}  // namespace

TEST_CASE("phi of zero rows is uniform m^-1/2 and outputs are positive") {
  FeatureMap fm = FeatureMap::create(16, 4, 42);
  Tensor zero = Tensor::zeros({1, 4});
  Tensor f = phi(zero, fm);
  for (double x : f.data()) CHECK(x == doctest::Approx(0.25).epsilon(1e-12));

  Rng rng(1);
  Tensor x = Tensor::rand_uniform({6, 4}, rng, -5, 5);
  Tensor fx = phi(x, fm);
  for (double v : fx.data()) CHECK(v > 0.0);
}

TEST_CASE("phi Monte-Carlo matches the softmax kernel within 3 SE") {
  Rng rng(77);
  Tensor q = Tensor::randn({1, 4}, rng, 0.7);
  Tensor k = Tensor::randn({1, 4}, rng, 0.7);
  double dot = 0.0;
  for (int i = 0; i < 4; ++i) dot += q.data()[i] * k.data()[i];
  double exact = std::exp(dot / 2.0);  // sqrt(d) = 2

  std::vector<double> est;
  for (uint64_t seed = 0; seed < 10; ++seed) {
    FeatureMap fm = FeatureMap::create(4096, 4, seed);
    Tensor fq = phi(q, fm), fk = phi(k, fm);
    double e = 0.0;
    for (int64_t j = 0; j < 4096; ++j) e += fq.data()[j] * fk.data()[j];
    est.push_back(e);
  }
  double mean = 0.0;
  for (double e : est) mean += e;
  mean /= est.size();
  double var = 0.0;
  for (double e : est) var += (e - mean) * (e - mean);
  var /= (est.size() - 1);
  double se = std::sqrt(var / est.size());
  CHECK(std::abs(mean - exact) <= 3.0 * se + 1e-12);
}

TEST_CASE("favor_plus single token returns the value row") {
  Rng rng(3);
  Tensor q = Tensor::randn({1, 4}, rng);
  Tensor k = Tensor::randn({1, 4}, rng);
  Tensor v = Tensor::randn({1, 6}, rng);
  for (bool causal : {false, true}) {
    Tensor out = favor_plus(q, k, v, FeatureMap::create(8, 4, 5), causal);
    CHECK(max_abs_diff(out, v) < 1e-9);
  }
}

TEST_CASE("favor_plus with identical keys averages V") {
  Rng rng(4);
  Tensor q = Tensor::randn({5, 4}, rng);
  Tensor krow = Tensor::randn({1, 4}, rng);
  std::vector<double> kd;
  for (int i = 0; i < 5; ++i)
    kd.insert(kd.end(), krow.data().begin(), krow.data().end());
  Tensor k = Tensor::from({5, 4}, kd);
  Tensor v = Tensor::randn({5, 3}, rng);
  Tensor out = favor_plus(q, k, v, FeatureMap::create(32, 4, 6), false);
  for (int64_t c = 0; c < 3; ++c) {
    double m = 0.0;
    for (int64_t t = 0; t < 5; ++t) m += v.data()[t * 3 + c];
    m /= 5.0;
    for (int64_t t = 0; t < 5; ++t)
      CHECK(out.data()[t * 3 + c] == doctest::Approx(m).epsilon(1e-9));
  }
}

TEST_CASE("favor_plus approximates dense attention at large m") {
  Rng rng(8);
  Tensor q = Tensor::randn({8, 4}, rng, 0.5);
  Tensor k = Tensor::randn({8, 4}, rng, 0.5);
  Tensor v = Tensor::randn({8, 4}, rng);
  CHECK(favor_max_err(8192, 123, q, k, v) < 0.1);
}

TEST_CASE("favor_plus error decreases with feature count") {
  int better = 0;
  const int seeds = 20;
  std::vector<double> err_small, err_large;
  for (uint64_t s = 0; s < seeds; ++s) {
    Rng rng(1000 + s);
    Tensor q = Tensor::randn({8, 4}, rng, 0.5);
    Tensor k = Tensor::randn({8, 4}, rng, 0.5);
    Tensor v = Tensor::randn({8, 4}, rng);
    double e64 = favor_max_err(64, 2000 + s, q, k, v);
    double e4096 = favor_max_err(4096, 3000 + s, q, k, v);
    err_small.push_back(e4096);
    err_large.push_back(e64);
    if (e4096 < e64) ++better;
  }
  CHECK(better >= 18);
  std::sort(err_small.begin(), err_small.end());
  std::sort(err_large.begin(), err_large.end());
  CHECK(err_small[seeds / 2] < err_large[seeds / 2]);
}

TEST_CASE("causal favor_plus ignores the future bit-exactly") {
  Rng rng(21);
  Tensor q = Tensor::randn({7, 4}, rng);
  Tensor k = Tensor::randn({7, 4}, rng);
  Tensor v = Tensor::randn({7, 3}, rng);
  FeatureMap fm = FeatureMap::create(16, 4, 9);
  Tensor base = favor_plus(q, k, v, fm, true);

  int64_t cut = 4;  // perturb rows > cut-1
  Tensor q2 = q.detach(), k2 = k.detach(), v2 = v.detach();
  for (int64_t t = cut; t < 7; ++t)
    for (int64_t c = 0; c < 4; ++c) {
      q2.mutable_data()[t * 4 + c] += 1.25;
      k2.mutable_data()[t * 4 + c] -= 0.75;
      if (c < 3) v2.mutable_data()[t * 3 + c] *= -2.0;
    }
  Tensor pert = favor_plus(q2, k2, v2, fm, true);
  for (int64_t t = 0; t < cut; ++t)
    for (int64_t c = 0; c < 3; ++c)
      CHECK(base.data()[t * 3 + c] == pert.data()[t * 3 + c]);
}

TEST_CASE("causal equals bidirectional at T=1") {
  Rng rng(31);
  Tensor q = Tensor::randn({1, 4}, rng);
  Tensor k = Tensor::randn({1, 4}, rng);
  Tensor v = Tensor::randn({1, 5}, rng);
  FeatureMap fm = FeatureMap::create(12, 4, 2);
  CHECK(max_abs_diff(favor_plus(q, k, v, fm, true),
                     favor_plus(q, k, v, fm, false)) == 0.0);
}

TEST_CASE("no NaN/Inf for bounded inputs") {
  Rng rng(55);
  for (int trial = 0; trial < 5; ++trial) {
    Tensor q = Tensor::rand_uniform({12, 8}, rng, -10, 10);
    Tensor k = Tensor::rand_uniform({12, 8}, rng, -10, 10);
    Tensor v = Tensor::rand_uniform({12, 8}, rng, -10, 10);
    FeatureMap fm = FeatureMap::create(16, 8, 100 + trial);
    for (bool causal : {false, true})
      CHECK_NOTHROW(assert_finite(favor_plus(q, k, v, fm, causal), "favor"));
  }
}

TEST_CASE("orthogonal feature flag still approximates the kernel") {
  Rng rng(66);
  Tensor q = Tensor::randn({8, 4}, rng, 0.5);
  Tensor k = Tensor::randn({8, 4}, rng, 0.5);
  Tensor v = Tensor::randn({8, 4}, rng);
  FeatureMap fm = FeatureMap::create(4096, 4, 11, /*orthogonal=*/true);
  Tensor fq_pos = phi(q, fm);
  for (double x : fq_pos.data()) CHECK(x > 0.0);
  Tensor approx = favor_plus(q, k, v, fm, false);
  CHECK(max_abs_diff(approx, dense_attn_reference(q, k, v)) < 0.2);
}

TEST_CASE("build_v_cat identity resize") {
  Rng rng(71);
  Tensor v = Tensor::randn({4, 2}, rng);
  Tensor cat = build_v_cat(v);
  CHECK(cat.shape() == Shape{4, 4});
  // V_I rows: e1,e1,e2,e2
  std::vector<double> want = {1, 0, 1, 0, 0, 1, 0, 1};
  for (int64_t t = 0; t < 4; ++t)
    for (int64_t c = 0; c < 2; ++c)
      CHECK(cat.at({t, c}) == want[t * 2 + c]);
  for (int64_t t = 0; t < 4; ++t)
    for (int64_t c = 0; c < 2; ++c) CHECK(cat.at({t, 2 + c}) == v.at({t, c}));

  // T = d: V_I is the identity
  Tensor v3 = Tensor::randn({3, 3}, rng);
  Tensor cat3 = build_v_cat(v3);
  for (int64_t i = 0; i < 3; ++i)
    for (int64_t j = 0; j < 3; ++j)
      CHECK(cat3.at({i, j}) == (i == j ? 1.0 : 0.0));

  // learned positional embedding replaces V_I
  Tensor pe = Tensor::randn({4, 2}, rng);
  Tensor catp = build_v_cat(v, &pe);
  for (int64_t t = 0; t < 4; ++t)
    for (int64_t c = 0; c < 2; ++c) CHECK(catp.at({t, c}) == pe.at({t, c}));
}
