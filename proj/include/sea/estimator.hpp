#pragma once

#include <string>
#include <vector>

#include "sea/config.hpp"
#include "sea/performer.hpp"
#include "sea/serialize.hpp"
#include "sea/tensor.hpp"

namespace sea {

// Learned parameters of the compressed-attention decoder: an MLP pair
// (mu, nu), a 3-layer CNN, the two scaler heads and, for causal layers, the
// positional embedding that replaces the resized identity in V_cat.
struct EstimatorWeights {
  Tensor mu_w, mu_b;          // [3d (or H*3d), d'], [d']
  Tensor nu_w, nu_b;          // [d', K*c_h/c_s (or H*...)], [...]
  Tensor cnn_w[3], cnn_b[3];  // 3x3 kernels
  Tensor f_prob_w, f_prob_b;  // [d',1], [1]
  Tensor f_pool_w, f_pool_b;  // [d',1], [1]
  Tensor pos_emb;             // [T,d], causal configurations only

  static EstimatorWeights init(const SeaConfig& cfg, Rng& rng);
  std::vector<Tensor> parameters();
  void add_to(WeightMap& wm, const std::string& prefix) const;
  static EstimatorWeights read_from(const WeightMap& wm,
                                    const std::string& prefix, bool causal);
};

// Everything one SEA layer learns: the performer feature map plus the
// estimator. The projection is serialized with the estimator weights.
struct SeaWeights {
  FeatureMap fm;
  EstimatorWeights est;

  static SeaWeights init(const SeaConfig& cfg, uint64_t seed);
  std::vector<Tensor> parameters() { return est.parameters(); }
  void add_to(WeightMap& wm, const std::string& prefix) const;
  static SeaWeights read_from(const WeightMap& wm, const std::string& prefix,
                              const SeaConfig& cfg);
};

struct EstimateResult {
  Tensor a_hat;  // [H,T,K], each row softmax-normalized over K
  Tensor z;      // [H,T,d'] per-head, [T,d'] when concat_heads
};

// Decodes Q,K,V [H,T,d] into the compressed attention estimate. Runs on the
// active tape, so the whole path is differentiable for training.
EstimateResult estimate(const Tensor& q, const Tensor& k, const Tensor& v,
                        const SeaWeights& w, const SeaConfig& cfg);

struct Scalers {
  Tensor s_prob;  // sigmoid(f_prob(Z)): probability rescale, in (0,1)
  Tensor s_mix;   // sigmoid(f_pool(Z)): sparse/global mixing gate
};

Scalers scalers(const Tensor& z, const SeaWeights& w);

}  // namespace sea
