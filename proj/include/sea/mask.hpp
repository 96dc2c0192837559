#pragma once

#include "sea/flatcsr.hpp"
#include "sea/tensor.hpp"

namespace sea {

// Binary selection mask over the compressed [H,T,K] attention estimate.
struct CompressedMask {
  int64_t heads = 0;
  int64_t t_len = 0;
  int64_t k_len = 0;             // K
  std::vector<uint8_t> bits;     // H*T*K, row-major

  uint8_t at(int64_t h, int64_t t, int64_t j) const {
    return bits[(h * t_len + t) * k_len + j];
  }
  int64_t count() const;
};

// k_hat = max(1, round(k*K/T)), rounding half away from zero.
int64_t compress_k(int64_t k, int64_t k_len, int64_t t_len);

// Marks the largest entries within each group defined by `mode`; budget per
// group is k_hat scaled by the group's extra dimensions, capped at the group
// size. Ties break toward the lowest flat index of a_hat.
CompressedMask grouped_topk(const Tensor& a_hat, TopKMode mode,
                            int64_t k_hat);

// Expands the compressed mask to the full sparse mask, touching only the
// nonzero entries. Each nonzero compressed column j of logical row (h,t)
// owns the destination block
//     [floor(j*W/K), max(floor(j*W/K)+1, floor((j+1)*W/K)))
// where W is the row width (T, or t+1 when causal), and contributes
// p = min(k, ceil(W/K), block) columns spaced as b0 + floor(i*block/p).
// Emissions collide when blocks degenerate to a single pixel; duplicates are
// merged and each logical row keeps at most its k lowest columns.
FlatCsrMatrix interpolate_mask(const CompressedMask& m_hat, int64_t t_len,
                               int64_t k, bool causal);

namespace testing {
// Off-by-one injection used by the verification suite to prove the
// oracle-equivalence check can fail.
void set_interp_mutation(bool on);
}  // namespace testing

}  // namespace sea
