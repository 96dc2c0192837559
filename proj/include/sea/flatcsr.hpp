#pragma once

#include <string>

#include "sea/tensor.hpp"

namespace sea {

// Grouping used by top-k selection. causal-per-batch selects within each
// time step's (head, key) slice so no information crosses time.
enum class TopKMode { PerQuery, PerHead, PerBatch, CausalPerBatch };

const char* topk_mode_name(TopKMode mode);

// CSR-style sparse matrix over the flattened attention layout: one row per
// query position, columns are (head, key) pairs flattened as h*T + key.
// Column indices are strictly ascending within a row, so each head occupies
// a contiguous segment. Binary masks carry no values array; kernels treat
// missing values as 1.
struct FlatCsrMatrix {
  int64_t n_rows = 0;
  int64_t n_cols = 0;
  int64_t head_count = 1;
  std::vector<int64_t> row_offsets;  // length n_rows + 1
  std::vector<int64_t> col_indices;  // length nnz
  std::vector<double> values;        // length nnz, or empty for binary
  TopKMode group_tag = TopKMode::PerQuery;

  int64_t nnz() const { return static_cast<int64_t>(col_indices.size()); }
  bool has_values() const { return !values.empty(); }
  int64_t key_extent() const { return n_cols / head_count; }

  // Throws StructError on any structural violation.
  void validate() const;

  // One text line per row: "row, col:value col:value ...".
  std::string debug_dump() const;
};

// values[e] = q[h,row] . k[h,key] / sqrt(d) on exactly the mask pattern.
FlatCsrMatrix sparse_masked_qk(const Tensor& q, const Tensor& k,
                               const FlatCsrMatrix& mask);

// Softmax over the stored values of each (row, head) segment; heads are
// independent attention matrices, so normalization never crosses the
// head boundary inside a flat row. Empty segments stay empty.
FlatCsrMatrix sparse_row_softmax(const FlatCsrMatrix& s);

// Multiplies every stored value in logical row t by s_prob[t]. s_prob may
// be [T] (broadcast over heads) or [H,T] (per head).
FlatCsrMatrix scale_rows(const FlatCsrMatrix& p, const Tensor& s_prob);

// C[h,t,:] = sum_e values[e] * V[h, key(e), :]. Work is O(nnz * d).
Tensor spmm(const FlatCsrMatrix& a, const Tensor& v);

// Zero-filled [H,T,T] tensor with stored entries placed back.
Tensor densify(const FlatCsrMatrix& a);

// Full-pattern sparsification of a dense [H,T,T] tensor (every coordinate
// stored, zeros included); inverse of densify on the stored pattern.
FlatCsrMatrix sparsify_full(const Tensor& dense, TopKMode tag);

}  // namespace sea
