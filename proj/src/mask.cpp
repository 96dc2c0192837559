#include "sea/mask.hpp"

#include <algorithm>
#include <numeric>

#include "sea/workcounter.hpp"

namespace sea {

int64_t CompressedMask::count() const {
  int64_t n = 0;
  for (uint8_t b : bits) n += b;
  return n;
}

int64_t compress_k(int64_t k, int64_t k_len, int64_t t_len) {
  if (k < 1 || k_len < 1 || t_len < 1)
    throw ConfigError("compress_k: k, K, T must all be >= 1");
  // round(k*K/T) half away from zero, in exact integer arithmetic
  int64_t rounded = (2 * k * k_len + t_len) / (2 * t_len);
  return std::max<int64_t>(1, rounded);
}

namespace {

// Marks the `budget` largest entries of the flat index range
// [group_begin, group_end) of vals, using stride to walk the group when it
// is not contiguous. Ties go to the lowest index.
void mark_topk(const std::vector<double>& vals,
               const std::vector<int64_t>& group_idx, int64_t budget,
               std::vector<uint8_t>& bits) {
  int64_t n = static_cast<int64_t>(group_idx.size());
  int64_t b = std::min(budget, n);
  if (b <= 0) return;
  std::vector<int64_t> order(group_idx);
  auto cmp = [&](int64_t a, int64_t c) {
    if (vals[a] != vals[c]) return vals[a] > vals[c];
    return a < c;
  };
  std::nth_element(order.begin(), order.begin() + (b - 1), order.end(), cmp);
  for (int64_t i = 0; i < b; ++i) bits[order[i]] = 1;
}

}  // namespace

CompressedMask grouped_topk(const Tensor& a_hat, TopKMode mode,
                            int64_t k_hat) {
  if (a_hat.ndim() != 3)
    throw ShapeError("grouped_topk: expected [H,T,K], got " +
                     shape_str(a_hat.shape()));
  if (k_hat < 1) throw ConfigError("grouped_topk: k_hat must be >= 1");
  int64_t h_count = a_hat.dim(0), t_len = a_hat.dim(1), k_len = a_hat.dim(2);
  const auto& vals = a_hat.data();

  CompressedMask out;
  out.heads = h_count;
  out.t_len = t_len;
  out.k_len = k_len;
  out.bits.assign(vals.size(), 0);

  std::vector<int64_t> idx;
  switch (mode) {
    case TopKMode::PerQuery:
      idx.resize(k_len);
      for (int64_t h = 0; h < h_count; ++h)
        for (int64_t t = 0; t < t_len; ++t) {
          std::iota(idx.begin(), idx.end(), (h * t_len + t) * k_len);
          mark_topk(vals, idx, k_hat, out.bits);
        }
      break;
    case TopKMode::PerHead:
      idx.resize(t_len * k_len);
      for (int64_t h = 0; h < h_count; ++h) {
        std::iota(idx.begin(), idx.end(), h * t_len * k_len);
        mark_topk(vals, idx, t_len * k_hat, out.bits);
      }
      break;
    case TopKMode::PerBatch:
      idx.resize(h_count * t_len * k_len);
      std::iota(idx.begin(), idx.end(), 0);
      mark_topk(vals, idx, h_count * t_len * k_hat, out.bits);
      break;
    case TopKMode::CausalPerBatch:
      // group the (H,K) slice of each time step
      idx.resize(h_count * k_len);
      for (int64_t t = 0; t < t_len; ++t) {
        int64_t p = 0;
        for (int64_t h = 0; h < h_count; ++h)
          for (int64_t j = 0; j < k_len; ++j)
            idx[p++] = (h * t_len + t) * k_len + j;
        mark_topk(vals, idx, h_count * k_hat, out.bits);
      }
      break;
  }
  return out;
}

namespace {
bool g_interp_mutation = false;
}

namespace testing {
void set_interp_mutation(bool on) { g_interp_mutation = on; }
}  // namespace testing

FlatCsrMatrix interpolate_mask(const CompressedMask& m_hat, int64_t t_len,
                               int64_t k, bool causal) {
  if (t_len != m_hat.t_len)
    throw ShapeError("interpolate_mask: T mismatch with compressed mask");
  if (k < 1) throw ConfigError("interpolate_mask: k must be >= 1");
  int64_t h_count = m_hat.heads, k_len = m_hat.k_len;

  FlatCsrMatrix out;
  out.n_rows = t_len;
  out.n_cols = h_count * t_len;
  out.head_count = h_count;
  out.group_tag = causal ? TopKMode::CausalPerBatch : TopKMode::PerQuery;
  out.row_offsets.assign(t_len + 1, 0);

  auto& wc = WorkCounter::instance();
  std::vector<int64_t> cols;  // per logical row scratch
  for (int64_t t = 0; t < t_len; ++t) {
    int64_t width = causal ? t + 1 : t_len;
    int64_t dup_cap = std::min<int64_t>(k, ceil_div(width, k_len));
    for (int64_t h = 0; h < h_count; ++h) {
      cols.clear();
      for (int64_t j = 0; j < k_len; ++j) {
        if (!m_hat.at(h, t, j)) continue;
        wc.add_touches(1);
        int64_t b0 = (j * width) / k_len;
        int64_t b1 = std::max(b0 + 1, ((j + 1) * width) / k_len);
        int64_t block = b1 - b0;
        int64_t p = std::min(dup_cap, block);
        for (int64_t i = 0; i < p; ++i) {
          int64_t c = b0 + (i * block) / p;
          if (g_interp_mutation) c = std::min(c + 1, width - 1);
          if (c > t && causal) continue;  // clip past the diagonal
          cols.push_back(c);
        }
      }
      // emissions arrive sorted (blocks are ordered); merge collisions and
      // keep at most k columns per logical row
      std::sort(cols.begin(), cols.end());
      cols.erase(std::unique(cols.begin(), cols.end()), cols.end());
      if (static_cast<int64_t>(cols.size()) > k) cols.resize(k);
      for (int64_t c : cols) out.col_indices.push_back(h * t_len + c);
      wc.add_nnz(cols.size());
      wc.add_touches(cols.size());
    }
    out.row_offsets[t + 1] = static_cast<int64_t>(out.col_indices.size());
  }
  return out;
}

}  // namespace sea
