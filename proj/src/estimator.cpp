#include "sea/estimator.hpp"

#include <cmath>

#include "sea/workcounter.hpp"

namespace sea {

void SeaConfig::validate() const {
  if (t_len < 1 || k_len < 1 || k < 1 || d < 1 || heads < 1 || d_prime < 1 ||
      c_s < 1 || c_h < 1 || m < 1)
    throw ConfigError("config: all extents must be >= 1");
  if (k_len % c_s != 0)
    throw ConfigError("config: K=" + std::to_string(k_len) +
                      " must be divisible by c_s=" + std::to_string(c_s));
  if (k > t_len) throw ConfigError("config: k must not exceed T");
  if (k_len > t_len) throw ConfigError("config: K must not exceed T");
  if (causal && mode != TopKMode::CausalPerBatch)
    throw ConfigError("config: causal layers require causal-per-batch top-k");
  if (!causal && t_len % c_s != 0)
    throw ConfigError("config: bidirectional T must be divisible by c_s");
}

namespace {

Tensor init_linear(int64_t in, int64_t out, Rng& rng) {
  return Tensor::randn({in, out}, rng, std::sqrt(1.0 / in));
}

Tensor init_conv(int64_t co, int64_t ci, Rng& rng) {
  return Tensor::randn({co, ci, 3, 3}, rng, std::sqrt(1.0 / (9.0 * ci)));
}

}  // namespace

EstimatorWeights EstimatorWeights::init(const SeaConfig& cfg, Rng& rng) {
  cfg.validate();
  int64_t mu_in = cfg.concat_heads ? cfg.heads * 3 * cfg.d : 3 * cfg.d;
  int64_t nu_out = cfg.k_len * cfg.c_h / cfg.c_s;
  if (cfg.concat_heads) nu_out *= cfg.heads;
  int64_t hc = cfg.heads * cfg.c_h;

  EstimatorWeights w;
  w.mu_w = init_linear(mu_in, cfg.d_prime, rng);
  w.mu_b = Tensor::zeros({cfg.d_prime});
  w.nu_w = init_linear(cfg.d_prime, nu_out, rng);
  w.nu_b = Tensor::zeros({nu_out});
  w.cnn_w[0] = init_conv(hc, hc, rng);
  w.cnn_b[0] = Tensor::zeros({hc});
  w.cnn_w[1] = init_conv(hc, hc, rng);
  w.cnn_b[1] = Tensor::zeros({hc});
  w.cnn_w[2] = init_conv(cfg.heads, hc, rng);
  w.cnn_b[2] = Tensor::zeros({cfg.heads});
  w.f_prob_w = init_linear(cfg.d_prime, 1, rng);
  w.f_prob_b = Tensor::zeros({1});
  w.f_pool_w = init_linear(cfg.d_prime, 1, rng);
  w.f_pool_b = Tensor::zeros({1});
  if (cfg.causal)
    w.pos_emb = Tensor::randn({cfg.t_len, cfg.d}, rng, 0.1);
  return w;
}

std::vector<Tensor> EstimatorWeights::parameters() {
  std::vector<Tensor> ps = {mu_w,     mu_b,     nu_w,     nu_b,
                            cnn_w[0], cnn_b[0], cnn_w[1], cnn_b[1],
                            cnn_w[2], cnn_b[2], f_prob_w, f_prob_b,
                            f_pool_w, f_pool_b};
  if (pos_emb.defined()) ps.push_back(pos_emb);
  return ps;
}

void EstimatorWeights::add_to(WeightMap& wm, const std::string& p) const {
  wm.put(p + "estimator.mu.weight", mu_w);
  wm.put(p + "estimator.mu.bias", mu_b);
  wm.put(p + "estimator.nu.weight", nu_w);
  wm.put(p + "estimator.nu.bias", nu_b);
  for (int i = 0; i < 3; ++i) {
    std::string base = p + "estimator.cnn." + std::to_string(i);
    wm.put(base + ".weight", cnn_w[i]);
    wm.put(base + ".bias", cnn_b[i]);
  }
  wm.put(p + "estimator.f_prob.weight", f_prob_w);
  wm.put(p + "estimator.f_prob.bias", f_prob_b);
  wm.put(p + "estimator.f_pool.weight", f_pool_w);
  wm.put(p + "estimator.f_pool.bias", f_pool_b);
  if (pos_emb.defined()) wm.put(p + "estimator.pos_emb", pos_emb);
}

EstimatorWeights EstimatorWeights::read_from(const WeightMap& wm,
                                             const std::string& p,
                                             bool causal) {
  EstimatorWeights w;
  w.mu_w = wm.get(p + "estimator.mu.weight");
  w.mu_b = wm.get(p + "estimator.mu.bias");
  w.nu_w = wm.get(p + "estimator.nu.weight");
  w.nu_b = wm.get(p + "estimator.nu.bias");
  for (int i = 0; i < 3; ++i) {
    std::string base = p + "estimator.cnn." + std::to_string(i);
    w.cnn_w[i] = wm.get(base + ".weight");
    w.cnn_b[i] = wm.get(base + ".bias");
  }
  w.f_prob_w = wm.get(p + "estimator.f_prob.weight");
  w.f_prob_b = wm.get(p + "estimator.f_prob.bias");
  w.f_pool_w = wm.get(p + "estimator.f_pool.weight");
  w.f_pool_b = wm.get(p + "estimator.f_pool.bias");
  if (causal) w.pos_emb = wm.get(p + "estimator.pos_emb");
  return w;
}

SeaWeights SeaWeights::init(const SeaConfig& cfg, uint64_t seed) {
  cfg.validate();
  SeaWeights w;
  w.fm = FeatureMap::create(cfg.m, cfg.d, seed ^ 0x5ea5ea5ea5ea5ea5ULL,
                            cfg.orthogonal_features);
  Rng rng(seed);
  w.est = EstimatorWeights::init(cfg, rng);
  return w;
}

void SeaWeights::add_to(WeightMap& wm, const std::string& p) const {
  wm.put(p + "performer.projection", fm.projection);
  est.add_to(wm, p);
}

SeaWeights SeaWeights::read_from(const WeightMap& wm, const std::string& p,
                                 const SeaConfig& cfg) {
  SeaWeights w;
  w.fm.projection = wm.get(p + "performer.projection");
  w.fm.m = w.fm.projection.dim(0);
  w.fm.d = w.fm.projection.dim(1);
  w.est = EstimatorWeights::read_from(wm, p, cfg.causal);
  return w;
}

EstimateResult estimate(const Tensor& q, const Tensor& k, const Tensor& v,
                        const SeaWeights& w, const SeaConfig& cfg) {
  cfg.validate();
  Shape want = {cfg.heads, cfg.t_len, cfg.d};
  if (q.shape() != want || k.shape() != want || v.shape() != want)
    throw ShapeError("estimate: Q/K/V must be " + shape_str(want));

  StageScope stage("estimator");
  // Per head: C_perf = FAVOR+(Q, K, [V_I; V]) and V'_cat = [C_perf; V].
  std::vector<Tensor> vcat_parts;
  for (int64_t h = 0; h < cfg.heads; ++h) {
    Tensor qh = select0(q, h), kh = select0(k, h), vh = select0(v, h);
    Tensor v_cat = build_v_cat(vh, cfg.causal ? &w.est.pos_emb : nullptr);
    Tensor c_perf;
    {
      StageScope s2("performer");
      c_perf = favor_plus(qh, kh, v_cat, w.fm, cfg.causal);
    }
    vcat_parts.push_back(concat_lastdim(c_perf, vh));
  }
  Tensor v_prime = stack0(vcat_parts);  // [H,T,3d]

  Tensor z, z_hat;
  int64_t hc = cfg.heads * cfg.c_h;
  int64_t kcs = cfg.k_len / cfg.c_s;
  if (!cfg.concat_heads) {
    z = silu(linear(v_prime, w.est.mu_w, w.est.mu_b));       // [H,T,d']
    Tensor nu = linear(z, w.est.nu_w, w.est.nu_b);           // [H,T,c_h*kcs]
    nu = reshape(nu, {cfg.heads, cfg.t_len, cfg.c_h, kcs});
    z_hat = reshape(permute(nu, {0, 2, 1, 3}), {hc, cfg.t_len, kcs});
  } else {
    Tensor tok = reshape(permute(v_prime, {1, 0, 2}),
                         {cfg.t_len, cfg.heads * 3 * cfg.d});
    z = silu(linear(tok, w.est.mu_w, w.est.mu_b));           // [T,d']
    Tensor nu = linear(z, w.est.nu_w, w.est.nu_b);
    nu = reshape(nu, {cfg.t_len, cfg.heads, cfg.c_h, kcs});
    z_hat = reshape(permute(nu, {1, 2, 0, 3}), {hc, cfg.t_len, kcs});
  }

  // 3-layer CNN decoder. Bidirectional: layer 1 reduces height by c_s and a
  // nearest-neighbor resize restores [T, K] before the head-merging layer.
  // Causal: height untouched, taps into future rows masked, width-only resize.
  Tensor h1 = silu(conv2d(z_hat, w.est.cnn_w[0], w.est.cnn_b[0],
                          cfg.causal ? 1 : cfg.c_s, 1, cfg.causal));
  Tensor h2 = silu(conv2d(h1, w.est.cnn_w[1], w.est.cnn_b[1], 1, 1,
                          cfg.causal));
  if (!cfg.causal) h2 = nn_interpolate(h2, cfg.t_len, 1);
  h2 = nn_interpolate(h2, cfg.k_len, 2);
  Tensor logits = conv2d(h2, w.est.cnn_w[2], w.est.cnn_b[2], 1, 1,
                         cfg.causal);
  EstimateResult res;
  res.a_hat = softmax_lastdim(logits);
  res.z = z;
  return res;
}

Scalers scalers(const Tensor& z, const SeaWeights& w) {
  Shape rows(z.shape().begin(), z.shape().end() - 1);
  Scalers s;
  s.s_prob = reshape(sigmoid(linear(z, w.est.f_prob_w, w.est.f_prob_b)), rows);
  s.s_mix = reshape(sigmoid(linear(z, w.est.f_pool_w, w.est.f_pool_b)), rows);
  return s;
}

}  // namespace sea
