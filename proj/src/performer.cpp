#include "sea/performer.hpp"

#include <cmath>
#include <string>

namespace sea {

FeatureMap FeatureMap::create(int64_t m, int64_t d, uint64_t rng_seed,
                              bool orthogonal) {
  if (m < 1 || d < 1)
    throw ConfigError("feature map needs m >= 1 and d >= 1");
  Rng rng(rng_seed);
  Tensor proj = Tensor::randn({m, d}, rng);
  if (orthogonal) {
    // Gram-Schmidt in blocks of d rows; each orthonormal direction is scaled
    // back to the length of an independent gaussian vector so feature
    // magnitudes match the unstructured draw.
    auto& p = proj.mutable_data();
    for (int64_t b0 = 0; b0 < m; b0 += d) {
      int64_t rows = std::min(d, m - b0);
      for (int64_t i = 0; i < rows; ++i) {
        double* ri = &p[(b0 + i) * d];
        for (int64_t j = 0; j < i; ++j) {
          const double* rj = &p[(b0 + j) * d];
          double dot = 0.0;
          for (int64_t c = 0; c < d; ++c) dot += ri[c] * rj[c];
          for (int64_t c = 0; c < d; ++c) ri[c] -= dot * rj[c];
        }
        double norm = 0.0;
        for (int64_t c = 0; c < d; ++c) norm += ri[c] * ri[c];
        norm = std::sqrt(norm);
        if (norm < 1e-12) continue;  // degenerate block row, keep as-is
        double target = 0.0;
        for (int64_t c = 0; c < d; ++c) {
          double g = rng.normal();
          target += g * g;
        }
        target = std::sqrt(target);
        for (int64_t c = 0; c < d; ++c) ri[c] *= target / norm;
      }
    }
  }
  FeatureMap fm;
  fm.projection = proj;
  fm.m = m;
  fm.d = d;
  fm.rng_seed = rng_seed;
  return fm;
}

Tensor phi(const Tensor& x, const FeatureMap& fm) {
  if (x.ndim() != 2 || x.dim(1) != fm.d)
    throw ShapeError("phi: input " + shape_str(x.shape()) +
                     " does not match feature map d=" + std::to_string(fm.d));
  double d = static_cast<double>(fm.d);
  double inv_d4 = 1.0 / std::pow(d, 0.25);
  // logits[t,j] = w_j.x_t / d^(1/4); norm[t] = |x_t|^2 / (2 sqrt(d))
  Tensor logits =
      mul_scalar(matmul(x, transpose_last2(fm.projection)), inv_d4);
  Tensor norms = mul_scalar(sum(mul(x, x), 1), 1.0 / (2.0 * std::sqrt(d)));
  Tensor features = mul_rows(exp(logits), exp(neg(norms)));
  return mul_scalar(features, 1.0 / std::sqrt(static_cast<double>(fm.m)));
}

namespace {

constexpr double kNormalizerFloor = 1e-12;
constexpr double kDegeneracyThreshold = 1e-20;

void check_denominator(const Tensor& den, int64_t rows) {
  for (int64_t t = 0; t < rows; ++t)
    if (den.data()[t] < kDegeneracyThreshold)
      throw NumericError("favor_plus: normalizer degenerate at row " +
                         std::to_string(t));
}

}  // namespace

Tensor favor_plus(const Tensor& q, const Tensor& k, const Tensor& v,
                  const FeatureMap& fm, bool causal) {
  if (q.ndim() != 2 || k.ndim() != 2 || v.ndim() != 2)
    throw ShapeError("favor_plus: Q,K,V must be rank 2");
  if (q.dim(1) != k.dim(1))
    throw ShapeError("favor_plus: Q " + shape_str(q.shape()) + " and K " +
                     shape_str(k.shape()) + " disagree on d");
  if (k.dim(0) != v.dim(0))
    throw ShapeError("favor_plus: K and V row counts differ");
  int64_t t_len = q.dim(0);
  int64_t dv = v.dim(1);

  Tensor phi_q = phi(q, fm);  // [T,m]
  Tensor phi_k = phi(k, fm);  // [T,m]

  Tensor num, den;
  if (!causal) {
    Tensor kv = matmul(transpose_last2(phi_k), v);             // [m,dv]
    Tensor ksum = sum(phi_k, 0);                               // [m]
    num = matmul(phi_q, kv);                                   // [T,dv]
    den = reshape(matmul(phi_q, reshape(ksum, {fm.m, 1})), {t_len});
  } else {
    // Running prefix sums of phi(k_t) v_t^T and phi(k_t): row t only sees
    // rows <= t, which is what makes suffix perturbations invisible.
    Tensor outer = matmul(reshape(phi_k, {t_len, fm.m, 1}),
                          reshape(v, {t_len, 1, dv}));  // [T,m,dv]
    Tensor pref_kv = cumsum(outer, 0);
    Tensor pref_k = cumsum(phi_k, 0);  // [T,m]
    num = reshape(matmul(reshape(phi_q, {t_len, 1, fm.m}), pref_kv),
                  {t_len, dv});
    den = sum(mul(phi_q, pref_k), 1);  // [T]
  }
  den = add_scalar(den, kNormalizerFloor);
  check_denominator(den, t_len);
  return mul_rows(num, recip(den));
}

Tensor build_v_cat(const Tensor& v, const Tensor* pos_emb) {
  if (v.ndim() != 2) throw ShapeError("build_v_cat: V must be [T,d]");
  int64_t t_len = v.dim(0), d = v.dim(1);
  Tensor v_i;
  if (pos_emb != nullptr) {
    if (pos_emb->dim(0) != t_len || pos_emb->dim(1) != d)
      throw ShapeError("build_v_cat: positional embedding must be [T,d]");
    v_i = *pos_emb;
  } else {
    std::vector<double> id(t_len * d, 0.0);
    for (int64_t t = 0; t < t_len; ++t) id[t * d + (t * d) / t_len] = 1.0;
    v_i = Tensor::from({t_len, d}, std::move(id));
  }
  return concat_lastdim(v_i, v);
}

}  // namespace sea
