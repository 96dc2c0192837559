#pragma once

#include "sea/tensor.hpp"

namespace sea {

// Random feature map for the positive softmax kernel. For rows q, k the dot
// product of features estimates exp(q.k / sqrt(d)): the 1/sqrt(d) attention
// temperature is folded into the map, so the normalized estimator targets
// softmax(QK^T/sqrt(d)).
struct FeatureMap {
  Tensor projection;  // [m, d], rows i.i.d. standard normal
  int64_t m = 0;
  int64_t d = 0;
  uint64_t rng_seed = 0;

  // orthogonal=true applies blockwise Gram-Schmidt to the directions,
  // rescaling each row to the norm of a fresh gaussian draw.
  static FeatureMap create(int64_t m, int64_t d, uint64_t rng_seed,
                           bool orthogonal = false);
};

// phi(x)[t,j] = m^-1/2 * exp(w_j.x_t / d^1/4 - |x_t|^2 / (2 sqrt(d))).
// Strictly positive for finite inputs.
Tensor phi(const Tensor& x, const FeatureMap& fm);

// Normalized linear attention: phi(Q) (phi(K)^T V) / (phi(Q) (phi(K)^T 1)),
// never materializing TxT. The causal variant runs prefix sums over time, so
// output row t depends only on rows <= t of all inputs. V may have a value
// width different from d. Differentiable when a tape is active.
Tensor favor_plus(const Tensor& q, const Tensor& k, const Tensor& v,
                  const FeatureMap& fm, bool causal);

// [V_I; V] with V_I the identity resized to T rows by nearest neighbor.
// Pass pos_emb (shape [T,d]) to substitute a learned embedding for V_I,
// which the causal configuration requires.
Tensor build_v_cat(const Tensor& v, const Tensor* pos_emb = nullptr);

}  // namespace sea
