#pragma once

#include <cstdint>

#include "sea/flatcsr.hpp"

namespace sea {

// Structural hyperparameters of one attention layer. T is the sequence
// length, K the compressed key width (K <= T), k the per-row sparsity
// budget of the full mask, d the head dimension and H the head count.
struct SeaConfig {
  int64_t t_len = 64;    // T
  int64_t k_len = 16;    // K
  int64_t k = 8;
  int64_t d = 16;
  int64_t heads = 2;     // H
  int64_t d_prime = 64;  // shared hidden width of the decoder
  int64_t c_s = 2;       // width/height reduction factor
  int64_t c_h = 4;       // channel expansion factor
  int64_t m = 64;        // random feature count
  TopKMode mode = TopKMode::CausalPerBatch;
  bool causal = true;
  bool concat_heads = false;         // decoder input spans all heads
  bool orthogonal_features = false;  // blockwise-orthogonal projections

  // Throws ConfigError on violation.
  void validate() const;
};

}  // namespace sea
