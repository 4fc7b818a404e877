#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <utility>
#include <vector>

#include "translob/autodiff.hpp"
#include "translob/rng.hpp"
#include "translob/tensor.hpp"

namespace translob {

namespace detail {

// C[m,n] += A[m,k] * B[k,n]
inline void matmul_acc(const double* a, const double* b, double* c, int m, int k, int n) {
  for (int i = 0; i < m; ++i) {
    const double* arow = a + static_cast<std::size_t>(i) * k;
    double* crow = c + static_cast<std::size_t>(i) * n;
    for (int p = 0; p < k; ++p) {
      const double av = arow[p];
      if (av == 0.0) continue;
      const double* brow = b + static_cast<std::size_t>(p) * n;
      for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

// C[k,n] += A[m,k]^T * B[m,n]
inline void matmul_at_b_acc(const double* a, const double* b, double* c, int m, int k, int n) {
  for (int i = 0; i < m; ++i) {
    const double* arow = a + static_cast<std::size_t>(i) * k;
    const double* brow = b + static_cast<std::size_t>(i) * n;
    for (int p = 0; p < k; ++p) {
      const double av = arow[p];
      if (av == 0.0) continue;
      double* crow = c + static_cast<std::size_t>(p) * n;
      for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

// C[m,k] += A[m,n] * B[k,n]^T
inline void matmul_a_bt_acc(const double* a, const double* b, double* c, int m, int k, int n) {
  for (int i = 0; i < m; ++i) {
    const double* arow = a + static_cast<std::size_t>(i) * n;
    double* crow = c + static_cast<std::size_t>(i) * k;
    for (int p = 0; p < k; ++p) {
      const double* brow = b + static_cast<std::size_t>(p) * n;
      double acc = 0.0;
      for (int j = 0; j < n; ++j) acc += arow[j] * brow[j];
      crow[p] += acc;
    }
  }
}

inline void require_rank2(const Tensor& t, const char* what) {
  if (t.rank() != 2) throw ShapeError(std::string(what) + ": expected rank-2, got " + shape_str(t.shape));
}

}  // namespace detail

/// y = x W, optionally + b broadcast over rows. x:[N,in], W:[in,out], b:[out].
inline Var affine(Var x, Var w, std::optional<Var> b = std::nullopt) {
  const Tensor& xv = x.value();
  const Tensor& wv = w.value();
  detail::require_rank2(xv, "affine x");
  detail::require_rank2(wv, "affine W");
  if (xv.shape[1] != wv.shape[0])
    throw ShapeError("affine: inner dimensions disagree, x " + shape_str(xv.shape) + " vs W " +
                     shape_str(wv.shape));
  const int n = xv.shape[0], in = xv.shape[1], out = wv.shape[1];
  if (b && b->value().shape != std::vector<int>{out})
    throw ShapeError("affine: bias shape " + shape_str(b->value().shape) + ", want [" +
                     std::to_string(out) + "]");
  require_finite(xv, "affine x");
  require_finite(wv, "affine W");

  Tensor y({n, out});
  detail::matmul_acc(xv.ptr(), wv.ptr(), y.ptr(), n, in, out);
  if (b) {
    const double* bp = b->value().ptr();
    for (int i = 0; i < n; ++i) {
      double* row = y.ptr() + static_cast<std::size_t>(i) * out;
      for (int j = 0; j < out; ++j) row[j] += bp[j];
    }
  }
  Tape* tp = x.tape;
  Var yv = tp->alloc(std::move(y));
  const int xid = x.id, wid = w.id, yid = yv.id;
  const int bid = b ? b->id : -1;
  tp->record([tp, xid, wid, bid, yid, n, in, out] {
    const Tensor& gy = tp->grad_of(yid);
    detail::matmul_a_bt_acc(gy.ptr(), tp->value_of(wid).ptr(), tp->grad_of(xid).ptr(), n, in, out);
    detail::matmul_at_b_acc(tp->value_of(xid).ptr(), gy.ptr(), tp->grad_of(wid).ptr(), n, in, out);
    if (bid >= 0) {
      double* gb = tp->grad_of(bid).ptr();
      for (int i = 0; i < n; ++i) {
        const double* row = gy.ptr() + static_cast<std::size_t>(i) * out;
        for (int j = 0; j < out; ++j) gb[j] += row[j];
      }
    }
  });
  return yv;
}

/// Elementwise max(0, x). Subgradient at 0 is 0.
inline Var relu(Var x) {
  const Tensor& xv = x.value();
  require_finite(xv, "relu x");
  Tensor y(xv.shape);
  for (std::int64_t i = 0; i < xv.numel(); ++i) y.data[i] = xv.data[i] > 0.0 ? xv.data[i] : 0.0;
  Tape* tp = x.tape;
  Var yv = tp->alloc(std::move(y));
  const int xid = x.id, yid = yv.id;
  tp->record([tp, xid, yid] {
    const Tensor& gy = tp->grad_of(yid);
    const Tensor& xval = tp->value_of(xid);
    Tensor& gx = tp->grad_of(xid);
    for (std::int64_t i = 0; i < gy.numel(); ++i)
      if (xval.data[i] > 0.0) gx.data[i] += gy.data[i];
  });
  return yv;
}

inline Var add(Var a, Var b) {
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  if (!av.same_shape(bv))
    throw ShapeError("add: shapes " + shape_str(av.shape) + " vs " + shape_str(bv.shape));
  Tensor y(av.shape);
  for (std::int64_t i = 0; i < av.numel(); ++i) y.data[i] = av.data[i] + bv.data[i];
  Tape* tp = a.tape;
  Var yv = tp->alloc(std::move(y));
  const int aid = a.id, bid = b.id, yid = yv.id;
  tp->record([tp, aid, bid, yid] {
    const Tensor& gy = tp->grad_of(yid);
    Tensor& ga = tp->grad_of(aid);
    Tensor& gb = tp->grad_of(bid);
    for (std::int64_t i = 0; i < gy.numel(); ++i) {
      ga.data[i] += gy.data[i];
      gb.data[i] += gy.data[i];
    }
  });
  return yv;
}

inline Var scale(Var x, double c) {
  const Tensor& xv = x.value();
  Tensor y(xv.shape);
  for (std::int64_t i = 0; i < xv.numel(); ++i) y.data[i] = c * xv.data[i];
  Tape* tp = x.tape;
  Var yv = tp->alloc(std::move(y));
  const int xid = x.id, yid = yv.id;
  tp->record([tp, xid, yid, c] {
    const Tensor& gy = tp->grad_of(yid);
    Tensor& gx = tp->grad_of(xid);
    for (std::int64_t i = 0; i < gy.numel(); ++i) gx.data[i] += c * gy.data[i];
  });
  return yv;
}

inline Var square(Var x) {
  const Tensor& xv = x.value();
  Tensor y(xv.shape);
  for (std::int64_t i = 0; i < xv.numel(); ++i) y.data[i] = xv.data[i] * xv.data[i];
  Tape* tp = x.tape;
  Var yv = tp->alloc(std::move(y));
  const int xid = x.id, yid = yv.id;
  tp->record([tp, xid, yid] {
    const Tensor& gy = tp->grad_of(yid);
    const Tensor& xval = tp->value_of(xid);
    Tensor& gx = tp->grad_of(xid);
    for (std::int64_t i = 0; i < gy.numel(); ++i) gx.data[i] += 2.0 * xval.data[i] * gy.data[i];
  });
  return yv;
}

/// Scalar sum of all entries.
inline Var sum(Var x) {
  const Tensor& xv = x.value();
  double s = 0.0;
  for (double v : xv.data) s += v;
  Tape* tp = x.tape;
  Var yv = tp->alloc(Tensor({1}, {s}));
  const int xid = x.id, yid = yv.id;
  tp->record([tp, xid, yid] {
    const double g = tp->grad_of(yid).data[0];
    Tensor& gx = tp->grad_of(xid);
    for (std::int64_t i = 0; i < gx.numel(); ++i) gx.data[i] += g;
  });
  return yv;
}

/// Scalar sum of w .* x for a fixed weight tensor (projection to a scalar).
inline Var weighted_sum(Var x, Tensor weights) {
  const Tensor& xv = x.value();
  if (!xv.same_shape(weights)) throw ShapeError("weighted_sum: weight shape mismatch");
  double s = 0.0;
  for (std::int64_t i = 0; i < xv.numel(); ++i) s += weights.data[i] * xv.data[i];
  Tape* tp = x.tape;
  Var yv = tp->alloc(Tensor({1}, {s}));
  const int xid = x.id, yid = yv.id;
  tp->record([tp, xid, yid, w = std::move(weights)] {
    const double g = tp->grad_of(yid).data[0];
    Tensor& gx = tp->grad_of(xid);
    for (std::int64_t i = 0; i < gx.numel(); ++i) gx.data[i] += g * w.data[i];
  });
  return yv;
}

/// Causal dilated 1-d convolution over time.
/// x:[T,Cin], w:[k,Cin,Cout], b:[Cout]. Output length equals input length;
/// the input is implicitly left-padded with (k-1)*dilation zero rows, so
/// y[t] depends only on x[<= t].
inline Var conv1d_causal(Var x, Var w, Var b, int dilation) {
  if (dilation < 1) throw ValidationError("conv1d_causal: dilation must be >= 1");
  const Tensor& xv = x.value();
  const Tensor& wv = w.value();
  const Tensor& bv = b.value();
  detail::require_rank2(xv, "conv1d x");
  if (wv.rank() != 3) throw ShapeError("conv1d w: expected rank-3 [k,Cin,Cout], got " + shape_str(wv.shape));
  const int t_len = xv.shape[0], cin = xv.shape[1];
  const int k = wv.shape[0], cout = wv.shape[2];
  if (k < 1) throw ValidationError("conv1d_causal: kernel size must be >= 1");
  if (wv.shape[1] != cin)
    throw ShapeError("conv1d: w Cin " + std::to_string(wv.shape[1]) + " vs x Cin " + std::to_string(cin));
  if (bv.shape != std::vector<int>{cout}) throw ShapeError("conv1d: bias shape " + shape_str(bv.shape));
  require_finite(xv, "conv1d x");
  require_finite(wv, "conv1d w");

  Tensor y({t_len, cout});
  for (int t = 0; t < t_len; ++t) {
    double* yrow = y.ptr() + static_cast<std::size_t>(t) * cout;
    for (int co = 0; co < cout; ++co) yrow[co] = bv.data[co];
    for (int j = 0; j < k; ++j) {
      const int s = t - j * dilation;
      if (s < 0) continue;
      const double* xrow = xv.ptr() + static_cast<std::size_t>(s) * cin;
      const double* wj = wv.ptr() + static_cast<std::size_t>(j) * cin * cout;
      for (int ci = 0; ci < cin; ++ci) {
        const double xval = xrow[ci];
        if (xval == 0.0) continue;
        const double* wrow = wj + static_cast<std::size_t>(ci) * cout;
        for (int co = 0; co < cout; ++co) yrow[co] += xval * wrow[co];
      }
    }
  }
  Tape* tp = x.tape;
  Var yv = tp->alloc(std::move(y));
  const int xid = x.id, wid = w.id, bid = b.id, yid = yv.id;
  tp->record([tp, xid, wid, bid, yid, t_len, cin, k, cout, dilation] {
    const Tensor& gy = tp->grad_of(yid);
    const Tensor& xval = tp->value_of(xid);
    const Tensor& wval = tp->value_of(wid);
    Tensor& gx = tp->grad_of(xid);
    Tensor& gw = tp->grad_of(wid);
    Tensor& gb = tp->grad_of(bid);
    for (int t = 0; t < t_len; ++t) {
      const double* gyrow = gy.ptr() + static_cast<std::size_t>(t) * cout;
      for (int co = 0; co < cout; ++co) gb.data[co] += gyrow[co];
      for (int j = 0; j < k; ++j) {
        const int s = t - j * dilation;
        if (s < 0) continue;
        const double* xrow = xval.ptr() + static_cast<std::size_t>(s) * cin;
        const double* wj = wval.ptr() + static_cast<std::size_t>(j) * cin * cout;
        double* gxrow = gx.ptr() + static_cast<std::size_t>(s) * cin;
        double* gwj = gw.ptr() + static_cast<std::size_t>(j) * cin * cout;
        for (int ci = 0; ci < cin; ++ci) {
          const double* wrow = wj + static_cast<std::size_t>(ci) * cout;
          double* gwrow = gwj + static_cast<std::size_t>(ci) * cout;
          double acc = 0.0;
          const double xval_ci = xrow[ci];
          for (int co = 0; co < cout; ++co) {
            acc += wrow[co] * gyrow[co];
            gwrow[co] += xval_ci * gyrow[co];
          }
          gxrow[ci] += acc;
        }
      }
    }
  });
  return yv;
}

/// Row-wise layer normalization with learned gain and bias.
/// Variance uses the population convention (divide by d).
inline Var layer_norm(Var x, Var gain, Var bias, double eps = 1e-5) {
  const Tensor& xv = x.value();
  detail::require_rank2(xv, "layer_norm x");
  const int n = xv.shape[0], d = xv.shape[1];
  if (gain.value().shape != std::vector<int>{d} || bias.value().shape != std::vector<int>{d})
    throw ShapeError("layer_norm: gain/bias must be [" + std::to_string(d) + "]");
  require_finite(xv, "layer_norm x");

  Tensor y({n, d});
  Tensor xhat({n, d});
  std::vector<double> inv(n);
  const double* gp = gain.value().ptr();
  const double* bp = bias.value().ptr();
  for (int i = 0; i < n; ++i) {
    const double* row = xv.ptr() + static_cast<std::size_t>(i) * d;
    double mu = 0.0;
    for (int j = 0; j < d; ++j) mu += row[j];
    mu /= d;
    double var = 0.0;
    for (int j = 0; j < d; ++j) {
      const double c = row[j] - mu;
      var += c * c;
    }
    var /= d;
    const double iv = 1.0 / std::sqrt(var + eps);
    inv[i] = iv;
    double* xh = xhat.ptr() + static_cast<std::size_t>(i) * d;
    double* yrow = y.ptr() + static_cast<std::size_t>(i) * d;
    for (int j = 0; j < d; ++j) {
      xh[j] = (row[j] - mu) * iv;
      yrow[j] = gp[j] * xh[j] + bp[j];
    }
  }
  Tape* tp = x.tape;
  Var yv = tp->alloc(std::move(y));
  const int xid = x.id, gid = gain.id, bid = bias.id, yid = yv.id;
  tp->record([tp, xid, gid, bid, yid, n, d, xh = std::move(xhat), inv = std::move(inv)] {
    const Tensor& gy = tp->grad_of(yid);
    const double* gp = tp->value_of(gid).ptr();
    Tensor& gx = tp->grad_of(xid);
    Tensor& gg = tp->grad_of(gid);
    Tensor& gb = tp->grad_of(bid);
    for (int i = 0; i < n; ++i) {
      const double* gyrow = gy.ptr() + static_cast<std::size_t>(i) * d;
      const double* xhrow = xh.ptr() + static_cast<std::size_t>(i) * d;
      double* gxrow = gx.ptr() + static_cast<std::size_t>(i) * d;
      double sum1 = 0.0, sum2 = 0.0;
      for (int j = 0; j < d; ++j) {
        const double dxh = gyrow[j] * gp[j];
        sum1 += dxh;
        sum2 += dxh * xhrow[j];
        gg.data[j] += gyrow[j] * xhrow[j];
        gb.data[j] += gyrow[j];
      }
      const double iv = inv[i];
      for (int j = 0; j < d; ++j) {
        const double dxh = gyrow[j] * gp[j];
        gxrow[j] += iv * (dxh - sum1 / d - xhrow[j] * sum2 / d);
      }
    }
  });
  return yv;
}

struct AttentionResult {
  Var out;
  Tensor weights;  // [N,N], rows sum to 1, zero above the diagonal
};

/// Masked scaled dot-product attention over one head.
/// S = Q K^T * scale with the strictly-upper triangle masked out; rows are
/// softmaxed with max subtraction. The mask is structural: masked positions
/// never enter the softmax and carry exactly zero weight, so output row i
/// depends only on rows <= i of Q, K, V.
inline AttentionResult masked_scaled_attention(Var q, Var k, Var v, double scale_factor) {
  const Tensor& qv = q.value();
  const Tensor& kv = k.value();
  const Tensor& vv = v.value();
  detail::require_rank2(qv, "attention Q");
  if (!qv.same_shape(kv) || !qv.same_shape(vv))
    throw ShapeError("attention: Q,K,V must share shape, got " + shape_str(qv.shape) + " " +
                     shape_str(kv.shape) + " " + shape_str(vv.shape));
  require_finite(qv, "attention Q");
  require_finite(kv, "attention K");
  require_finite(vv, "attention V");
  const int n = qv.shape[0], dh = qv.shape[1];

  Tensor attn({n, n});
  Tensor out({n, dh});
  std::vector<double> scores(n);
  for (int i = 0; i < n; ++i) {
    const double* qrow = qv.ptr() + static_cast<std::size_t>(i) * dh;
    double mx = -std::numeric_limits<double>::infinity();
    for (int j = 0; j <= i; ++j) {
      const double* krow = kv.ptr() + static_cast<std::size_t>(j) * dh;
      double s = 0.0;
      for (int c = 0; c < dh; ++c) s += qrow[c] * krow[c];
      s *= scale_factor;
      scores[j] = s;
      mx = std::max(mx, s);
    }
    double z = 0.0;
    double* arow = attn.ptr() + static_cast<std::size_t>(i) * n;
    for (int j = 0; j <= i; ++j) {
      arow[j] = std::exp(scores[j] - mx);
      z += arow[j];
    }
    double* orow = out.ptr() + static_cast<std::size_t>(i) * dh;
    for (int j = 0; j <= i; ++j) {
      arow[j] /= z;
      const double* vrow = vv.ptr() + static_cast<std::size_t>(j) * dh;
      const double a = arow[j];
      for (int c = 0; c < dh; ++c) orow[c] += a * vrow[c];
    }
  }
  Tape* tp = q.tape;
  Var ov = tp->alloc(std::move(out));
  const int qid = q.id, kid = k.id, vid = v.id, oid = ov.id;
  Tensor weights_copy = attn;
  tp->record([tp, qid, kid, vid, oid, n, dh, scale_factor, attn = std::move(attn)] {
    const Tensor& gy = tp->grad_of(oid);
    const Tensor& qval = tp->value_of(qid);
    const Tensor& kval = tp->value_of(kid);
    const Tensor& vval = tp->value_of(vid);
    Tensor& gq = tp->grad_of(qid);
    Tensor& gk = tp->grad_of(kid);
    Tensor& gv = tp->grad_of(vid);
    std::vector<double> da(n);
    for (int i = 0; i < n; ++i) {
      const double* gyrow = gy.ptr() + static_cast<std::size_t>(i) * dh;
      const double* arow = attn.ptr() + static_cast<std::size_t>(i) * n;
      const double* qrow = qval.ptr() + static_cast<std::size_t>(i) * dh;
      double* gqrow = gq.ptr() + static_cast<std::size_t>(i) * dh;
      double csum = 0.0;
      for (int j = 0; j <= i; ++j) {
        const double* vrow = vval.ptr() + static_cast<std::size_t>(j) * dh;
        double dav = 0.0;
        for (int c = 0; c < dh; ++c) dav += gyrow[c] * vrow[c];
        da[j] = dav;
        csum += arow[j] * dav;
        // dV accumulation
        double* gvrow = gv.ptr() + static_cast<std::size_t>(j) * dh;
        const double a = arow[j];
        for (int c = 0; c < dh; ++c) gvrow[c] += a * gyrow[c];
      }
      for (int j = 0; j <= i; ++j) {
        const double ds = arow[j] * (da[j] - csum) * scale_factor;
        if (ds == 0.0) continue;
        const double* krow = kval.ptr() + static_cast<std::size_t>(j) * dh;
        double* gkrow = gk.ptr() + static_cast<std::size_t>(j) * dh;
        for (int c = 0; c < dh; ++c) {
          gqrow[c] += ds * krow[c];
          gkrow[c] += ds * qrow[c];
        }
      }
    }
  });
  return AttentionResult{ov, std::move(weights_copy)};
}

/// Column-wise concatenation of same-height matrices.
inline Var concat_cols(const std::vector<Var>& xs) {
  if (xs.empty()) throw ShapeError("concat_cols: empty input");
  const int n = xs[0].value().shape[0];
  int total = 0;
  for (const Var& x : xs) {
    detail::require_rank2(x.value(), "concat_cols input");
    if (x.value().shape[0] != n) throw ShapeError("concat_cols: row counts differ");
    total += x.value().shape[1];
  }
  Tensor y({n, total});
  int off = 0;
  for (const Var& x : xs) {
    const Tensor& xv = x.value();
    const int c = xv.shape[1];
    for (int i = 0; i < n; ++i)
      std::copy_n(xv.ptr() + static_cast<std::size_t>(i) * c, c,
                  y.ptr() + static_cast<std::size_t>(i) * total + off);
    off += c;
  }
  Tape* tp = xs[0].tape;
  Var yv = tp->alloc(std::move(y));
  std::vector<int> ids;
  std::vector<int> widths;
  for (const Var& x : xs) {
    ids.push_back(x.id);
    widths.push_back(x.value().shape[1]);
  }
  const int yid = yv.id;
  tp->record([tp, ids = std::move(ids), widths = std::move(widths), yid, n, total] {
    const Tensor& gy = tp->grad_of(yid);
    int off = 0;
    for (std::size_t s = 0; s < ids.size(); ++s) {
      Tensor& gx = tp->grad_of(ids[s]);
      const int c = widths[s];
      for (int i = 0; i < n; ++i) {
        const double* src = gy.ptr() + static_cast<std::size_t>(i) * total + off;
        double* dst = gx.ptr() + static_cast<std::size_t>(i) * c;
        for (int j = 0; j < c; ++j) dst[j] += src[j];
      }
      off += c;
    }
  });
  return yv;
}

/// Row-wise concatenation of same-width matrices.
inline Var concat_rows(const std::vector<Var>& xs) {
  if (xs.empty()) throw ShapeError("concat_rows: empty input");
  const int c = xs[0].value().shape[1];
  int total = 0;
  for (const Var& x : xs) {
    detail::require_rank2(x.value(), "concat_rows input");
    if (x.value().shape[1] != c) throw ShapeError("concat_rows: column counts differ");
    total += x.value().shape[0];
  }
  Tensor y({total, c});
  double* dst = y.ptr();
  for (const Var& x : xs) {
    const Tensor& xv = x.value();
    dst = std::copy(xv.data.begin(), xv.data.end(), dst);
  }
  Tape* tp = xs[0].tape;
  Var yv = tp->alloc(std::move(y));
  std::vector<int> ids;
  for (const Var& x : xs) ids.push_back(x.id);
  const int yid = yv.id;
  tp->record([tp, ids = std::move(ids), yid] {
    const Tensor& gy = tp->grad_of(yid);
    std::size_t off = 0;
    for (int id : ids) {
      Tensor& gx = tp->grad_of(id);
      for (std::int64_t i = 0; i < gx.numel(); ++i) gx.data[i] += gy.data[off + i];
      off += gx.data.size();
    }
  });
  return yv;
}

/// Reinterpret with a new shape of equal element count (row-major order kept).
inline Var reshape(Var x, std::vector<int> new_shape) {
  const Tensor& xv = x.value();
  Tensor y(std::move(new_shape), xv.data);
  Tape* tp = x.tape;
  Var yv = tp->alloc(std::move(y));
  const int xid = x.id, yid = yv.id;
  tp->record([tp, xid, yid] {
    const Tensor& gy = tp->grad_of(yid);
    Tensor& gx = tp->grad_of(xid);
    for (std::int64_t i = 0; i < gx.numel(); ++i) gx.data[i] += gy.data[i];
  });
  return yv;
}

/// Softmax over the last dimension, numerically stabilized by max subtraction.
inline Var softmax(Var x) {
  const Tensor& xv = x.value();
  if (xv.rank() < 1) throw ShapeError("softmax: rank must be >= 1");
  require_finite(xv, "softmax x");
  const int n = xv.shape.back();
  const std::int64_t rows = xv.numel() / n;
  Tensor y(xv.shape);
  for (std::int64_t r = 0; r < rows; ++r) {
    const double* row = xv.ptr() + r * n;
    double* yrow = y.ptr() + r * n;
    double mx = row[0];
    for (int j = 1; j < n; ++j) mx = std::max(mx, row[j]);
    double z = 0.0;
    for (int j = 0; j < n; ++j) {
      yrow[j] = std::exp(row[j] - mx);
      z += yrow[j];
    }
    for (int j = 0; j < n; ++j) yrow[j] /= z;
  }
  Tape* tp = x.tape;
  Var yv = tp->alloc(std::move(y));
  const int xid = x.id, yid = yv.id;
  tp->record([tp, xid, yid, n, rows] {
    const Tensor& gy = tp->grad_of(yid);
    const Tensor& yval = tp->value_of(yid);
    Tensor& gx = tp->grad_of(xid);
    for (std::int64_t r = 0; r < rows; ++r) {
      const double* gyrow = gy.ptr() + r * n;
      const double* yrow = yval.ptr() + r * n;
      double* gxrow = gx.ptr() + r * n;
      double dot = 0.0;
      for (int j = 0; j < n; ++j) dot += gyrow[j] * yrow[j];
      for (int j = 0; j < n; ++j) gxrow[j] += yrow[j] * (gyrow[j] - dot);
    }
  });
  return yv;
}

/// Inverted dropout: in training mode zeroes entries with probability `rate`
/// and scales survivors by 1/(1-rate); in eval mode it is the identity.
inline Var dropout(Var x, double rate, Rng& rng, bool training) {
  if (rate < 0.0 || rate >= 1.0) throw ValidationError("dropout: rate must be in [0,1)");
  const Tensor& xv = x.value();
  Tape* tp = x.tape;
  if (!training || rate == 0.0) {
    Var yv = tp->alloc(xv);
    const int xid = x.id, yid = yv.id;
    tp->record([tp, xid, yid] {
      const Tensor& gy = tp->grad_of(yid);
      Tensor& gx = tp->grad_of(xid);
      for (std::int64_t i = 0; i < gx.numel(); ++i) gx.data[i] += gy.data[i];
    });
    return yv;
  }
  const double keep_scale = 1.0 / (1.0 - rate);
  Tensor mask(xv.shape);
  for (std::int64_t i = 0; i < mask.numel(); ++i)
    mask.data[i] = rng.uniform() < rate ? 0.0 : keep_scale;
  Tensor y(xv.shape);
  for (std::int64_t i = 0; i < xv.numel(); ++i) y.data[i] = xv.data[i] * mask.data[i];
  Var yv = tp->alloc(std::move(y));
  const int xid = x.id, yid = yv.id;
  tp->record([tp, xid, yid, m = std::move(mask)] {
    const Tensor& gy = tp->grad_of(yid);
    Tensor& gx = tp->grad_of(xid);
    for (std::int64_t i = 0; i < gx.numel(); ++i) gx.data[i] += gy.data[i] * m.data[i];
  });
  return yv;
}

/// Mean categorical cross-entropy over a batch of post-softmax rows, plus an
/// L2 penalty lambda * sum(W^2) over the given params (the dense layer in
/// TransLOB). probs:[B,C]; labels in [0,C).
inline Var cross_entropy_loss(Var probs, const std::vector<int>& labels, double l2_lambda = 0.0,
                              const std::vector<Var>& l2_params = {}) {
  const Tensor& pv = probs.value();
  detail::require_rank2(pv, "cross_entropy probs");
  const int bsz = pv.shape[0], classes = pv.shape[1];
  if (static_cast<int>(labels.size()) != bsz)
    throw ShapeError("cross_entropy: " + std::to_string(labels.size()) + " labels for batch " +
                     std::to_string(bsz));
  for (int y : labels)
    if (y < 0 || y >= classes)
      throw ValidationError("cross_entropy: label " + std::to_string(y) + " out of range");
  // Guard against exact zeros from saturated softmax; realistic probabilities
  // are far above this floor.
  constexpr double kFloor = 1e-300;
  double loss = 0.0;
  for (int i = 0; i < bsz; ++i) loss -= std::log(std::max(pv.at(i, labels[i]), kFloor));
  loss /= bsz;
  for (const Var& w : l2_params) {
    const Tensor& wv = w.value();
    double sq = 0.0;
    for (double v : wv.data) sq += v * v;
    loss += l2_lambda * sq;
  }
  Tape* tp = probs.tape;
  Var lv = tp->alloc(Tensor({1}, {loss}));
  const int pid = probs.id, lid = lv.id;
  std::vector<int> wids;
  for (const Var& w : l2_params) wids.push_back(w.id);
  tp->record([tp, pid, lid, labels, bsz, l2_lambda, wids = std::move(wids), kFloor] {
    const double g = tp->grad_of(lid).data[0];
    const Tensor& pval = tp->value_of(pid);
    Tensor& gp = tp->grad_of(pid);
    for (int i = 0; i < bsz; ++i) {
      const double p = std::max(pval.at(i, labels[i]), kFloor);
      gp.at(i, labels[i]) -= g / (bsz * p);
    }
    for (int wid : wids) {
      const Tensor& wval = tp->value_of(wid);
      Tensor& gw = tp->grad_of(wid);
      for (std::int64_t j = 0; j < wval.numel(); ++j)
        gw.data[j] += g * 2.0 * l2_lambda * wval.data[j];
    }
  });
  return lv;
}

struct AttentionHeadVars {
  Var wq, wk, wv;
};

struct MultiHeadResult {
  Var out;
  std::vector<Tensor> head_weights;  // one [N,N] matrix per head
};

/// Masked multi-head self-attention: per head a, Q_a = X Wq_a, K_a = X Wk_a,
/// V_a = X Wv_a (no biases); heads concatenated and mixed by Wo [d,d].
inline MultiHeadResult multi_head_attention(Var x, const std::vector<AttentionHeadVars>& heads,
                                            Var wo, double scale_factor) {
  if (heads.empty()) throw ShapeError("multi_head_attention: no heads");
  std::vector<Var> outs;
  std::vector<Tensor> weights;
  outs.reserve(heads.size());
  for (const AttentionHeadVars& h : heads) {
    Var q = affine(x, h.wq);
    Var k = affine(x, h.wk);
    Var v = affine(x, h.wv);
    AttentionResult r = masked_scaled_attention(q, k, v, scale_factor);
    outs.push_back(r.out);
    weights.push_back(std::move(r.weights));
  }
  Var cat = heads.size() == 1 ? outs[0] : concat_cols(outs);
  Var mixed = affine(cat, wo);
  return MultiHeadResult{mixed, std::move(weights)};
}

}  // namespace translob
