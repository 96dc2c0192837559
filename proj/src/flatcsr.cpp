#include "sea/flatcsr.hpp"

#include <cmath>
#include <sstream>

#include "sea/workcounter.hpp"

namespace sea {

const char* topk_mode_name(TopKMode mode) {
  switch (mode) {
    case TopKMode::PerQuery: return "per-query";
    case TopKMode::PerHead: return "per-head";
    case TopKMode::PerBatch: return "per-batch";
    case TopKMode::CausalPerBatch: return "causal-per-batch";
  }
  return "?";
}

void FlatCsrMatrix::validate() const {
  if (n_rows < 0 || n_cols < 0 || head_count < 1)
    throw StructError("flatcsr: bad extents");
  if (n_cols % head_count != 0)
    throw StructError("flatcsr: n_cols not divisible by head_count");
  if (static_cast<int64_t>(row_offsets.size()) != n_rows + 1)
    throw StructError("flatcsr: row_offsets length must be n_rows+1");
  if (row_offsets.front() != 0)
    throw StructError("flatcsr: row_offsets[0] must be 0");
  if (row_offsets.back() != nnz())
    throw StructError("flatcsr: row_offsets back must equal nnz");
  for (int64_t r = 0; r < n_rows; ++r) {
    if (row_offsets[r] > row_offsets[r + 1])
      throw StructError("flatcsr: row_offsets decrease at row " +
                        std::to_string(r));
    for (int64_t e = row_offsets[r]; e < row_offsets[r + 1]; ++e) {
      if (col_indices[e] < 0 || col_indices[e] >= n_cols)
        throw StructError("flatcsr: column out of range at row " +
                          std::to_string(r));
      if (e > row_offsets[r] && col_indices[e] <= col_indices[e - 1])
        throw StructError("flatcsr: columns not strictly ascending in row " +
                          std::to_string(r));
    }
  }
  if (has_values()) {
    if (static_cast<int64_t>(values.size()) != nnz())
      throw StructError("flatcsr: values length must equal nnz");
    for (double v : values)
      if (!std::isfinite(v)) throw StructError("flatcsr: non-finite value");
  }
}

std::string FlatCsrMatrix::debug_dump() const {
  std::ostringstream os;
  for (int64_t r = 0; r < n_rows; ++r) {
    os << r << ',';
    for (int64_t e = row_offsets[r]; e < row_offsets[r + 1]; ++e)
      os << ' ' << col_indices[e] << ':' << (has_values() ? values[e] : 1.0);
    os << '\n';
  }
  return os.str();
}

namespace {

void check_qkv_extents(const Tensor& x, const FlatCsrMatrix& m,
                       const char* what) {
  if (x.ndim() != 3)
    throw StructError(std::string(what) + ": tensor must be [H,T,d], got " +
                      shape_str(x.shape()));
  if (x.dim(0) != m.head_count)
    throw StructError(std::string(what) + ": head count mismatch");
  if (x.dim(1) != m.key_extent())
    throw StructError(std::string(what) + ": key extent mismatch");
}

}  // namespace

FlatCsrMatrix sparse_masked_qk(const Tensor& q, const Tensor& k,
                               const FlatCsrMatrix& mask) {
  check_qkv_extents(q, mask, "sparse_masked_qk(Q)");
  check_qkv_extents(k, mask, "sparse_masked_qk(K)");
  if (q.dim(1) != mask.n_rows)
    throw StructError("sparse_masked_qk: Q rows do not match mask rows");
  if (q.dim(2) != k.dim(2))
    throw StructError("sparse_masked_qk: Q and K disagree on d");
  int64_t d = q.dim(2);
  int64_t t_keys = mask.key_extent();
  double scale = 1.0 / std::sqrt(static_cast<double>(d));

  FlatCsrMatrix out = mask;
  out.values.assign(mask.nnz(), 0.0);
  const auto& qd = q.data();
  const auto& kd = k.data();
  for (int64_t r = 0; r < mask.n_rows; ++r)
    for (int64_t e = mask.row_offsets[r]; e < mask.row_offsets[r + 1]; ++e) {
      int64_t c = mask.col_indices[e];
      int64_t h = c / t_keys, key = c % t_keys;
      const double* qrow = &qd[(h * mask.n_rows + r) * d];
      const double* krow = &kd[(h * t_keys + key) * d];
      double dot = 0.0;
      for (int64_t i = 0; i < d; ++i) dot += qrow[i] * krow[i];
      out.values[e] = dot * scale;
    }
  auto& wc = WorkCounter::instance();
  wc.add_macs(static_cast<uint64_t>(mask.nnz()) * d);
  wc.add_touches(static_cast<uint64_t>(mask.nnz()) * (2 * d + 1));
  return out;
}

FlatCsrMatrix sparse_row_softmax(const FlatCsrMatrix& s) {
  if (!s.has_values())
    throw StructError("sparse_row_softmax: input has no values");
  int64_t t_keys = s.key_extent();
  FlatCsrMatrix out = s;
  for (int64_t r = 0; r < s.n_rows; ++r) {
    int64_t e = s.row_offsets[r];
    int64_t row_end = s.row_offsets[r + 1];
    while (e < row_end) {
      // contiguous head segment [e, seg_end)
      int64_t h = s.col_indices[e] / t_keys;
      int64_t seg_end = e;
      while (seg_end < row_end && s.col_indices[seg_end] / t_keys == h)
        ++seg_end;
      double mx = s.values[e];
      for (int64_t i = e + 1; i < seg_end; ++i)
        mx = std::max(mx, s.values[i]);
      double denom = 0.0;
      for (int64_t i = e; i < seg_end; ++i) {
        out.values[i] = std::exp(s.values[i] - mx);
        denom += out.values[i];
      }
      for (int64_t i = e; i < seg_end; ++i) out.values[i] /= denom;
      e = seg_end;
    }
  }
  auto& wc = WorkCounter::instance();
  wc.add_macs(static_cast<uint64_t>(s.nnz()) * 2);
  wc.add_touches(static_cast<uint64_t>(s.nnz()) * 4);
  return out;
}

FlatCsrMatrix scale_rows(const FlatCsrMatrix& p, const Tensor& s_prob) {
  bool per_head;
  if (s_prob.ndim() == 1 && s_prob.dim(0) == p.n_rows) {
    per_head = false;
  } else if (s_prob.ndim() == 2 && s_prob.dim(0) == p.head_count &&
             s_prob.dim(1) == p.n_rows) {
    per_head = true;
  } else {
    throw StructError("scale_rows: scale shape " + shape_str(s_prob.shape()) +
                      " does not match T=" + std::to_string(p.n_rows) +
                      " (or [H,T])");
  }
  int64_t t_keys = p.key_extent();
  FlatCsrMatrix out = p;
  if (!out.has_values()) out.values.assign(p.nnz(), 1.0);
  const auto& sd = s_prob.data();
  for (int64_t r = 0; r < p.n_rows; ++r)
    for (int64_t e = p.row_offsets[r]; e < p.row_offsets[r + 1]; ++e) {
      int64_t h = p.col_indices[e] / t_keys;
      out.values[e] *= per_head ? sd[h * p.n_rows + r] : sd[r];
    }
  auto& wc = WorkCounter::instance();
  wc.add_macs(static_cast<uint64_t>(p.nnz()));
  wc.add_touches(static_cast<uint64_t>(p.nnz()) * 2);
  return out;
}

Tensor spmm(const FlatCsrMatrix& a, const Tensor& v) {
  check_qkv_extents(v, a, "spmm(V)");
  int64_t d = v.dim(2);
  int64_t t_keys = a.key_extent();
  Tensor out = Tensor::zeros({a.head_count, a.n_rows, d});
  auto& od = out.mutable_data();
  const auto& vd = v.data();
  for (int64_t r = 0; r < a.n_rows; ++r)
    for (int64_t e = a.row_offsets[r]; e < a.row_offsets[r + 1]; ++e) {
      int64_t c = a.col_indices[e];
      int64_t h = c / t_keys, key = c % t_keys;
      double w = a.has_values() ? a.values[e] : 1.0;
      const double* vrow = &vd[(h * t_keys + key) * d];
      double* orow = &od[(h * a.n_rows + r) * d];
      for (int64_t i = 0; i < d; ++i) orow[i] += w * vrow[i];
    }
  auto& wc = WorkCounter::instance();
  wc.add_macs(static_cast<uint64_t>(a.nnz()) * d);
  wc.add_touches(static_cast<uint64_t>(a.nnz()) * (2 * d + 1));
  return out;
}

Tensor densify(const FlatCsrMatrix& a) {
  int64_t t_keys = a.key_extent();
  Tensor out = Tensor::zeros({a.head_count, a.n_rows, t_keys});
  auto& od = out.mutable_data();
  for (int64_t r = 0; r < a.n_rows; ++r)
    for (int64_t e = a.row_offsets[r]; e < a.row_offsets[r + 1]; ++e) {
      int64_t c = a.col_indices[e];
      int64_t h = c / t_keys, key = c % t_keys;
      od[(h * a.n_rows + r) * t_keys + key] = a.has_values() ? a.values[e] : 1.0;
    }
  return out;
}

FlatCsrMatrix sparsify_full(const Tensor& dense, TopKMode tag) {
  if (dense.ndim() != 3)
    throw StructError("sparsify_full: expected [H,T,T'], got " +
                      shape_str(dense.shape()));
  int64_t h_count = dense.dim(0), rows = dense.dim(1), keys = dense.dim(2);
  FlatCsrMatrix out;
  out.n_rows = rows;
  out.n_cols = h_count * keys;
  out.head_count = h_count;
  out.group_tag = tag;
  out.row_offsets.assign(rows + 1, 0);
  out.col_indices.reserve(dense.numel());
  out.values.reserve(dense.numel());
  for (int64_t r = 0; r < rows; ++r) {
    for (int64_t h = 0; h < h_count; ++h)
      for (int64_t key = 0; key < keys; ++key) {
        out.col_indices.push_back(h * keys + key);
        out.values.push_back(dense.data()[(h * rows + r) * keys + key]);
      }
    out.row_offsets[r + 1] = static_cast<int64_t>(out.col_indices.size());
  }
  return out;
}

}  // namespace sea
