#pragma once

#include <cmath>
#include <vector>

#include "handrec/tape.hpp"

// Differentiable primitives. Every op validates shapes, computes the forward
// value eagerly and records a backward closure on the tape when any input
// needs a gradient. Closures capture Var handles only; values live on the
// tape.
namespace handrec::ops {

inline void check_same(const Tensor& a, const Tensor& b, const char* who) {
  if (!a.same_shape(b))
    throw_invalid(std::string(who) + ": shape mismatch " + a.shape_str() +
                  " vs " + b.shape_str());
}

// ---------------------------------------------------------------------------
// elementwise
// ---------------------------------------------------------------------------

inline Var add(Tape& t, Var a, Var b) {
  const Tensor& A = t.val(a);
  const Tensor& B = t.val(b);
  check_same(A, B, "add");
  Tensor out = A;
  for (size_t i = 0; i < out.data.size(); ++i) out.data[i] += B.data[i];
  bool needs = t.needs_grad(a) || t.needs_grad(b);
  return t.record(std::move(out), needs, [a, b](Tape& t, Var self) {
    const Tensor& g = t.grad(self);
    if (t.needs_grad(a)) axpy(t.grad_acc(a), g);
    if (t.needs_grad(b)) axpy(t.grad_acc(b), g);
  });
}

inline Var sub(Tape& t, Var a, Var b) {
  const Tensor& A = t.val(a);
  const Tensor& B = t.val(b);
  check_same(A, B, "sub");
  Tensor out = A;
  for (size_t i = 0; i < out.data.size(); ++i) out.data[i] -= B.data[i];
  bool needs = t.needs_grad(a) || t.needs_grad(b);
  return t.record(std::move(out), needs, [a, b](Tape& t, Var self) {
    const Tensor& g = t.grad(self);
    if (t.needs_grad(a)) axpy(t.grad_acc(a), g);
    if (t.needs_grad(b)) axpy(t.grad_acc(b), g, -1.0);
  });
}

inline Var mul(Tape& t, Var a, Var b) {
  const Tensor& A = t.val(a);
  const Tensor& B = t.val(b);
  check_same(A, B, "mul");
  Tensor out = A;
  for (size_t i = 0; i < out.data.size(); ++i) out.data[i] *= B.data[i];
  bool needs = t.needs_grad(a) || t.needs_grad(b);
  return t.record(std::move(out), needs, [a, b](Tape& t, Var self) {
    const Tensor& g = t.grad(self);
    if (t.needs_grad(a)) {
      Tensor& ga = t.grad_acc(a);
      const Tensor& B = t.val(b);
      for (size_t i = 0; i < ga.data.size(); ++i)
        ga.data[i] += g.data[i] * B.data[i];
    }
    if (t.needs_grad(b)) {
      Tensor& gb = t.grad_acc(b);
      const Tensor& A = t.val(a);
      for (size_t i = 0; i < gb.data.size(); ++i)
        gb.data[i] += g.data[i] * A.data[i];
    }
  });
}

inline Var scale(Tape& t, Var a, Real c) {
  Tensor out = t.val(a);
  for (Real& v : out.data) v *= c;
  return t.record(std::move(out), t.needs_grad(a), [a, c](Tape& t, Var self) {
    axpy(t.grad_acc(a), t.grad(self), c);
  });
}

inline Var add_scalar(Tape& t, Var a, Real c) {
  Tensor out = t.val(a);
  for (Real& v : out.data) v += c;
  return t.record(std::move(out), t.needs_grad(a), [a](Tape& t, Var self) {
    axpy(t.grad_acc(a), t.grad(self));
  });
}

inline Var expv(Tape& t, Var a) {
  Tensor out = t.val(a);
  for (Real& v : out.data) v = std::exp(v);
  return t.record(std::move(out), t.needs_grad(a), [a](Tape& t, Var self) {
    const Tensor& g = t.grad(self);
    const Tensor& y = t.val(self);
    Tensor& ga = t.grad_acc(a);
    for (size_t i = 0; i < ga.data.size(); ++i)
      ga.data[i] += g.data[i] * y.data[i];
  });
}

inline Var relu(Tape& t, Var a) {
  Tensor out = t.val(a);
  for (Real& v : out.data) v = v > 0 ? v : 0;
  return t.record(std::move(out), t.needs_grad(a), [a](Tape& t, Var self) {
    const Tensor& g = t.grad(self);
    const Tensor& x = t.val(a);
    Tensor& ga = t.grad_acc(a);
    for (size_t i = 0; i < ga.data.size(); ++i)
      if (x.data[i] > 0) ga.data[i] += g.data[i];
  });
}

inline Var sigmoid(Tape& t, Var a) {
  Tensor out = t.val(a);
  for (Real& v : out.data) v = 1.0 / (1.0 + std::exp(-v));
  return t.record(std::move(out), t.needs_grad(a), [a](Tape& t, Var self) {
    const Tensor& g = t.grad(self);
    const Tensor& y = t.val(self);
    Tensor& ga = t.grad_acc(a);
    for (size_t i = 0; i < ga.data.size(); ++i)
      ga.data[i] += g.data[i] * y.data[i] * (1.0 - y.data[i]);
  });
}

// ---------------------------------------------------------------------------
// reductions / reshapes
// ---------------------------------------------------------------------------

inline Var sum(Tape& t, Var a) {
  Real s = 0;
  for (Real v : t.val(a).data) s += v;
  return t.record(Tensor::scalar(s), t.needs_grad(a), [a](Tape& t, Var self) {
    Real g = t.grad(self).data[0];
    Tensor& ga = t.grad_acc(a);
    for (Real& v : ga.data) v += g;
  });
}

inline Var mean(Tape& t, Var a) {
  int64_t n = t.val(a).numel();
  Real s = 0;
  for (Real v : t.val(a).data) s += v;
  return t.record(Tensor::scalar(s / Real(n)), t.needs_grad(a),
                  [a, n](Tape& t, Var self) {
                    Real g = t.grad(self).data[0] / Real(n);
                    Tensor& ga = t.grad_acc(a);
                    for (Real& v : ga.data) v += g;
                  });
}

inline Var reshape(Tape& t, Var a, std::vector<int> shape) {
  const Tensor& A = t.val(a);
  if (Tensor::numel_of(shape) != A.numel())
    throw_invalid("reshape: numel mismatch");
  Tensor out(std::move(shape), A.data);
  return t.record(std::move(out), t.needs_grad(a), [a](Tape& t, Var self) {
    const Tensor& g = t.grad(self);
    Tensor& ga = t.grad_acc(a);
    for (size_t i = 0; i < ga.data.size(); ++i) ga.data[i] += g.data[i];
  });
}

// Concatenate along axis 0 (matrix rows, grid channels).
inline Var concat0(Tape& t, Var a, Var b) {
  const Tensor& A = t.val(a);
  const Tensor& B = t.val(b);
  if (A.rank() != B.rank()) throw_invalid("concat0: rank mismatch");
  for (int i = 1; i < A.rank(); ++i)
    if (A.shape[size_t(i)] != B.shape[size_t(i)])
      throw_invalid("concat0: trailing shape mismatch");
  std::vector<int> shape = A.shape;
  shape[0] += B.shape[0];
  Tensor out(shape);
  std::copy(A.data.begin(), A.data.end(), out.data.begin());
  std::copy(B.data.begin(), B.data.end(), out.data.begin() + A.numel());
  bool needs = t.needs_grad(a) || t.needs_grad(b);
  return t.record(std::move(out), needs, [a, b](Tape& t, Var self) {
    const Tensor& g = t.grad(self);
    int64_t na = t.val(a).numel();
    if (t.needs_grad(a)) {
      Tensor& ga = t.grad_acc(a);
      for (int64_t i = 0; i < na; ++i) ga.data[size_t(i)] += g.data[size_t(i)];
    }
    if (t.needs_grad(b)) {
      Tensor& gb = t.grad_acc(b);
      for (size_t i = 0; i < gb.data.size(); ++i)
        gb.data[i] += g.data[i + size_t(na)];
    }
  });
}

// Rows [r0, r1) along axis 0.
inline Var slice0(Tape& t, Var a, int r0, int r1) {
  const Tensor& A = t.val(a);
  if (r0 < 0 || r1 > A.shape[0] || r0 >= r1) throw_invalid("slice0: bad range");
  int64_t stride = A.numel() / A.shape[0];
  std::vector<int> shape = A.shape;
  shape[0] = r1 - r0;
  Tensor out(shape);
  std::copy(A.data.begin() + r0 * stride, A.data.begin() + r1 * stride,
            out.data.begin());
  return t.record(std::move(out), t.needs_grad(a),
                  [a, r0, stride](Tape& t, Var self) {
                    const Tensor& g = t.grad(self);
                    Tensor& ga = t.grad_acc(a);
                    for (size_t i = 0; i < g.data.size(); ++i)
                      ga.data[size_t(r0 * stride) + i] += g.data[i];
                  });
}

// Columns [c0, c1) of a 2D matrix.
inline Var slice_cols(Tape& t, Var a, int c0, int c1) {
  const Tensor& A = t.val(a);
  if (A.rank() != 2) throw_invalid("slice_cols: needs 2D");
  if (c0 < 0 || c1 > A.shape[1] || c0 >= c1)
    throw_invalid("slice_cols: bad range");
  Tensor out({A.shape[0], c1 - c0});
  for (int i = 0; i < A.shape[0]; ++i)
    for (int j = c0; j < c1; ++j) out.at(i, j - c0) = A.at(i, j);
  return t.record(std::move(out), t.needs_grad(a),
                  [a, c0](Tape& t, Var self) {
                    const Tensor& g = t.grad(self);
                    Tensor& ga = t.grad_acc(a);
                    for (int i = 0; i < g.shape[0]; ++i)
                      for (int j = 0; j < g.shape[1]; ++j)
                        ga.at(i, j + c0) += g.at(i, j);
                  });
}

inline Var concat_cols(Tape& t, Var a, Var b) {
  const Tensor& A = t.val(a);
  const Tensor& B = t.val(b);
  if (A.rank() != 2 || B.rank() != 2 || A.shape[0] != B.shape[0])
    throw_invalid("concat_cols: shape mismatch");
  Tensor out({A.shape[0], A.shape[1] + B.shape[1]});
  for (int i = 0; i < A.shape[0]; ++i) {
    for (int j = 0; j < A.shape[1]; ++j) out.at(i, j) = A.at(i, j);
    for (int j = 0; j < B.shape[1]; ++j) out.at(i, A.shape[1] + j) = B.at(i, j);
  }
  bool needs = t.needs_grad(a) || t.needs_grad(b);
  return t.record(std::move(out), needs, [a, b](Tape& t, Var self) {
    const Tensor& g = t.grad(self);
    int ca = t.val(a).shape[1];
    if (t.needs_grad(a)) {
      Tensor& ga = t.grad_acc(a);
      for (int i = 0; i < ga.shape[0]; ++i)
        for (int j = 0; j < ca; ++j) ga.at(i, j) += g.at(i, j);
    }
    if (t.needs_grad(b)) {
      Tensor& gb = t.grad_acc(b);
      for (int i = 0; i < gb.shape[0]; ++i)
        for (int j = 0; j < gb.shape[1]; ++j) gb.at(i, j) += g.at(i, ca + j);
    }
  });
}

inline Var transpose2d(Tape& t, Var a) {
  const Tensor& A = t.val(a);
  if (A.rank() != 2) throw_invalid("transpose2d: needs 2D");
  Tensor out({A.shape[1], A.shape[0]});
  for (int i = 0; i < A.shape[0]; ++i)
    for (int j = 0; j < A.shape[1]; ++j) out.at(j, i) = A.at(i, j);
  return t.record(std::move(out), t.needs_grad(a), [a](Tape& t, Var self) {
    const Tensor& g = t.grad(self);
    Tensor& ga = t.grad_acc(a);
    for (int i = 0; i < ga.shape[0]; ++i)
      for (int j = 0; j < ga.shape[1]; ++j) ga.at(i, j) += g.at(j, i);
  });
}

// ---------------------------------------------------------------------------
// dense linear algebra
// ---------------------------------------------------------------------------

namespace detail {
inline void gemm(const Tensor& A, bool tA, const Tensor& B, bool tB,
                 Tensor& C, Real beta) {
  int m = tA ? A.shape[1] : A.shape[0];
  int k = tA ? A.shape[0] : A.shape[1];
  int kb = tB ? B.shape[1] : B.shape[0];
  int n = tB ? B.shape[0] : B.shape[1];
  if (k != kb) throw_invalid("matmul: inner dimension mismatch");
  if (beta == 0.0) {
    C = Tensor({m, n});
  } else {
    if (C.shape[0] != m || C.shape[1] != n) throw_invalid("gemm: bad C");
  }
  for (int i = 0; i < m; ++i) {
    Real* crow = &C.data[size_t(i) * n];
    for (int p = 0; p < k; ++p) {
      Real av = tA ? A.at(p, i) : A.at(i, p);
      if (av == 0.0) continue;
      const Real* brow;
      if (!tB) {
        brow = &B.data[size_t(p) * n];
        for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
      } else {
        for (int j = 0; j < n; ++j) crow[j] += av * B.at(j, p);
      }
    }
  }
}
}  // namespace detail

inline Var matmul(Tape& t, Var a, Var b, bool tA = false, bool tB = false) {
  const Tensor& A = t.val(a);
  const Tensor& B = t.val(b);
  if (A.rank() != 2 || B.rank() != 2) throw_invalid("matmul: needs 2D");
  Tensor out;
  detail::gemm(A, tA, B, tB, out, 0.0);
  bool needs = t.needs_grad(a) || t.needs_grad(b);
  return t.record(std::move(out), needs, [a, b, tA, tB](Tape& t, Var self) {
    const Tensor& g = t.grad(self);
    const Tensor& A = t.val(a);
    const Tensor& B = t.val(b);
    if (t.needs_grad(a)) {
      // dA = (tA ? op(B) g^T : g op(B)^T) arranged per flag case
      Tensor& ga = t.grad_acc(a);
      if (!tA)
        detail::gemm(g, false, B, !tB, ga, 1.0);
      else
        detail::gemm(B, tB, g, true, ga, 1.0);
    }
    if (t.needs_grad(b)) {
      Tensor& gb = t.grad_acc(b);
      if (!tB)
        detail::gemm(A, !tA, g, false, gb, 1.0);
      else
        detail::gemm(g, true, A, tA, gb, 1.0);
    }
  });
}

// bias added to every column; bias length = rows
inline Var add_col_bias(Tape& t, Var m, Var bias) {
  const Tensor& M = t.val(m);
  const Tensor& B = t.val(bias);
  if (M.rank() != 2 || B.numel() != M.shape[0])
    throw_invalid("add_col_bias: shape mismatch");
  Tensor out = M;
  for (int i = 0; i < M.shape[0]; ++i)
    for (int j = 0; j < M.shape[1]; ++j) out.at(i, j) += B.data[size_t(i)];
  bool needs = t.needs_grad(m) || t.needs_grad(bias);
  return t.record(std::move(out), needs, [m, bias](Tape& t, Var self) {
    const Tensor& g = t.grad(self);
    if (t.needs_grad(m)) axpy(t.grad_acc(m), g);
    if (t.needs_grad(bias)) {
      Tensor& gb = t.grad_acc(bias);
      for (int i = 0; i < g.shape[0]; ++i)
        for (int j = 0; j < g.shape[1]; ++j) gb.data[size_t(i)] += g.at(i, j);
    }
  });
}

// bias added to every row; bias length = cols
inline Var add_row_bias(Tape& t, Var m, Var bias) {
  const Tensor& M = t.val(m);
  const Tensor& B = t.val(bias);
  if (M.rank() != 2 || B.numel() != M.shape[1])
    throw_invalid("add_row_bias: shape mismatch");
  Tensor out = M;
  for (int i = 0; i < M.shape[0]; ++i)
    for (int j = 0; j < M.shape[1]; ++j) out.at(i, j) += B.data[size_t(j)];
  bool needs = t.needs_grad(m) || t.needs_grad(bias);
  return t.record(std::move(out), needs, [m, bias](Tape& t, Var self) {
    const Tensor& g = t.grad(self);
    if (t.needs_grad(m)) axpy(t.grad_acc(m), g);
    if (t.needs_grad(bias)) {
      Tensor& gb = t.grad_acc(bias);
      for (int i = 0; i < g.shape[0]; ++i)
        for (int j = 0; j < g.shape[1]; ++j) gb.data[size_t(j)] += g.at(i, j);
    }
  });
}

// Row-wise affine map: out = x * W + b, x is (n,k), W is (k,m), b is (m).
inline Var linear(Tape& t, Var x, Var w, Var b) {
  return add_row_bias(t, matmul(t, x, w), b);
}

inline Var mean_cols(Tape& t, Var m) {
  const Tensor& M = t.val(m);
  if (M.rank() != 2) throw_invalid("mean_cols: needs 2D");
  int rows = M.shape[0], cols = M.shape[1];
  Tensor out({rows});
  for (int i = 0; i < rows; ++i) {
    Real s = 0;
    for (int j = 0; j < cols; ++j) s += M.at(i, j);
    out.data[size_t(i)] = s / Real(cols);
  }
  return t.record(std::move(out), t.needs_grad(m),
                  [m, cols](Tape& t, Var self) {
                    const Tensor& g = t.grad(self);
                    Tensor& gm = t.grad_acc(m);
                    for (int i = 0; i < gm.shape[0]; ++i)
                      for (int j = 0; j < cols; ++j)
                        gm.at(i, j) += g.data[size_t(i)] / Real(cols);
                  });
}

// ---------------------------------------------------------------------------
// normalizations
// ---------------------------------------------------------------------------

// softmax across each row of a 2D matrix
inline Var softmax_rows(Tape& t, Var a) {
  const Tensor& A = t.val(a);
  if (A.rank() != 2 || A.shape[1] < 1) throw_invalid("softmax_rows: needs 2D");
  Tensor out = A;
  for (int i = 0; i < A.shape[0]; ++i) {
    Real mx = -std::numeric_limits<Real>::infinity();
    for (int j = 0; j < A.shape[1]; ++j) mx = std::max(mx, A.at(i, j));
    Real s = 0;
    for (int j = 0; j < A.shape[1]; ++j) {
      out.at(i, j) = std::exp(A.at(i, j) - mx);
      s += out.at(i, j);
    }
    for (int j = 0; j < A.shape[1]; ++j) out.at(i, j) /= s;
  }
  return t.record(std::move(out), t.needs_grad(a), [a](Tape& t, Var self) {
    const Tensor& g = t.grad(self);
    const Tensor& p = t.val(self);
    Tensor& ga = t.grad_acc(a);
    for (int i = 0; i < p.shape[0]; ++i) {
      Real dot = 0;
      for (int j = 0; j < p.shape[1]; ++j) dot += g.at(i, j) * p.at(i, j);
      for (int j = 0; j < p.shape[1]; ++j)
        ga.at(i, j) += p.at(i, j) * (g.at(i, j) - dot);
    }
  });
}

// Layer norm over each column (per-token over channels). gain/bias per row.
inline Var layer_norm_cols(Tape& t, Var x, Var gain, Var bias,
                           Real eps = 1e-5) {
  const Tensor& X = t.val(x);
  if (X.rank() != 2) throw_invalid("layer_norm_cols: needs 2D");
  if (eps <= 0) throw_invalid("layer_norm_cols: eps must be positive");
  int C = X.shape[0], J = X.shape[1];
  if (t.val(gain).numel() != C || t.val(bias).numel() != C)
    throw_invalid("layer_norm_cols: gain/bias length mismatch");
  Tensor out({C, J});
  const Tensor& G = t.val(gain);
  const Tensor& B = t.val(bias);
  for (int j = 0; j < J; ++j) {
    Real mu = 0;
    for (int i = 0; i < C; ++i) mu += X.at(i, j);
    mu /= C;
    Real var = 0;
    for (int i = 0; i < C; ++i) {
      Real d = X.at(i, j) - mu;
      var += d * d;
    }
    var /= C;
    Real inv = 1.0 / std::sqrt(var + eps);
    for (int i = 0; i < C; ++i)
      out.at(i, j) = (X.at(i, j) - mu) * inv * G.data[size_t(i)] +
                     B.data[size_t(i)];
  }
  bool needs = t.needs_grad(x) || t.needs_grad(gain) || t.needs_grad(bias);
  return t.record(std::move(out), needs,
                  [x, gain, bias, eps](Tape& t, Var self) {
    const Tensor& g = t.grad(self);
    const Tensor& X = t.val(x);
    const Tensor& G = t.val(gain);
    int C = X.shape[0], J = X.shape[1];
    for (int j = 0; j < J; ++j) {
      Real mu = 0;
      for (int i = 0; i < C; ++i) mu += X.at(i, j);
      mu /= C;
      Real var = 0;
      for (int i = 0; i < C; ++i) {
        Real d = X.at(i, j) - mu;
        var += d * d;
      }
      var /= C;
      Real inv = 1.0 / std::sqrt(var + eps);
      // ghat = dL/dy * gain; xhat = normalized x
      Real mean_gh = 0, mean_ghx = 0;
      std::vector<Real> gh(static_cast<size_t>(C)), xh(static_cast<size_t>(C));
      for (int i = 0; i < C; ++i) {
        xh[size_t(i)] = (X.at(i, j) - mu) * inv;
        gh[size_t(i)] = g.at(i, j) * G.data[size_t(i)];
        mean_gh += gh[size_t(i)];
        mean_ghx += gh[size_t(i)] * xh[size_t(i)];
      }
      mean_gh /= C;
      mean_ghx /= C;
      if (t.needs_grad(x)) {
        Tensor& gx = t.grad_acc(x);
        for (int i = 0; i < C; ++i)
          gx.at(i, j) +=
              inv * (gh[size_t(i)] - mean_gh - xh[size_t(i)] * mean_ghx);
      }
      if (t.needs_grad(gain)) {
        Tensor& gg = t.grad_acc(gain);
        for (int i = 0; i < C; ++i)
          gg.data[size_t(i)] += g.at(i, j) * xh[size_t(i)];
      }
      if (t.needs_grad(bias)) {
        Tensor& gb = t.grad_acc(bias);
        for (int i = 0; i < C; ++i) gb.data[size_t(i)] += g.at(i, j);
      }
    }
  });
}

// ---------------------------------------------------------------------------
// convolution / pooling / resize on (C,H,W) grids
// ---------------------------------------------------------------------------

inline Var conv2d(Tape& t, Var x, Var w, Var b, int stride, int pad) {
  const Tensor& X = t.val(x);
  const Tensor& W = t.val(w);
  if (X.rank() != 3 || W.rank() != 4)
    throw_invalid("conv2d: expects (C,H,W) input, (Co,Ci,kh,kw) kernel");
  int Ci = X.shape[0], H = X.shape[1], Wd = X.shape[2];
  int Co = W.shape[0], kh = W.shape[2], kw = W.shape[3];
  if (W.shape[1] != Ci) throw_invalid("conv2d: channel mismatch");
  if (kh % 2 == 0 || kw % 2 == 0)
    throw_invalid("conv2d: kernel spatial size must be odd");
  if (stride < 1) throw_invalid("conv2d: stride must be >= 1");
  if (H + 2 * pad < kh || Wd + 2 * pad < kw)
    throw_invalid("conv2d: kernel larger than padded input");
  int Ho = (H + 2 * pad - kh) / stride + 1;
  int Wo = (Wd + 2 * pad - kw) / stride + 1;
  if (Ho <= 0 || Wo <= 0) throw_invalid("conv2d: empty output");
  bool has_bias = b.valid();
  if (has_bias && t.val(b).numel() != Co)
    throw_invalid("conv2d: bias length mismatch");

  // valid output range for a kernel tap: 0 <= ox*stride + k - pad < extent
  auto tap_range = [](int k, int pad2, int stride2, int extent, int out_n,
                      int& lo, int& hi) {
    int off = k - pad2;
    lo = off < 0 ? (-off + stride2 - 1) / stride2 : 0;
    hi = std::min(out_n, off >= extent ? 0 : (extent - off - 1) / stride2 + 1);
  };

  Tensor out({Co, Ho, Wo});
  const bool pointwise = kh == 1 && kw == 1 && stride == 1 && pad == 0;
  if (pointwise) {
    // 1x1 path that skips zero input pixels (projected feature planes are
    // mostly empty); output fits in cache so the scattered writes are cheap
    const int64_t hw = int64_t(H) * Wd;
    for (int co = 0; co < Co; ++co) {
      Real bias = has_bias ? t.val(b).data[size_t(co)] : 0.0;
      for (int64_t p = 0; p < hw; ++p) out.data[size_t(co * hw + p)] = bias;
    }
    for (int ci = 0; ci < Ci; ++ci) {
      const Real* irow = &X.data[size_t(ci) * size_t(hw)];
      for (int64_t p = 0; p < hw; ++p) {
        Real v = irow[p];
        if (v == 0.0) continue;
        for (int co = 0; co < Co; ++co)
          out.data[size_t(co * hw + p)] += W.data[size_t(co) * Ci + ci] * v;
      }
    }
  } else {
  for (int co = 0; co < Co; ++co) {
    Real bias = has_bias ? t.val(b).data[size_t(co)] : 0.0;
    for (int oy = 0; oy < Ho; ++oy)
      for (int ox = 0; ox < Wo; ++ox) out.at(co, oy, ox) = bias;
    for (int ci = 0; ci < Ci; ++ci) {
      for (int ky = 0; ky < kh; ++ky) {
        int oy_lo, oy_hi;
        tap_range(ky, pad, stride, H, Ho, oy_lo, oy_hi);
        for (int kx = 0; kx < kw; ++kx) {
          Real wv = W.at(co, ci, ky, kx);
          if (wv == 0.0) continue;
          int ox_lo, ox_hi;
          tap_range(kx, pad, stride, Wd, Wo, ox_lo, ox_hi);
          for (int oy = oy_lo; oy < oy_hi; ++oy) {
            int iy = oy * stride + ky - pad;
            Real* orow = &out.data[(size_t(co) * Ho + oy) * Wo];
            const Real* irow = &X.data[(size_t(ci) * H + iy) * Wd + kx - pad];
            if (stride == 1) {
              for (int ox = ox_lo; ox < ox_hi; ++ox)
                orow[ox] += wv * irow[ox];
            } else {
              for (int ox = ox_lo; ox < ox_hi; ++ox)
                orow[ox] += wv * irow[ox * stride];
            }
          }
        }
      }
    }
  }
  }
  bool needs = t.needs_grad(x) || t.needs_grad(w) ||
               (has_bias && t.needs_grad(b));
  return t.record(std::move(out), needs,
                  [x, w, b, stride, pad, has_bias](Tape& t, Var self) {
    const Tensor& g = t.grad(self);
    const Tensor& X = t.val(x);
    const Tensor& W = t.val(w);
    int Ci = X.shape[0], H = X.shape[1], Wd = X.shape[2];
    int Co = W.shape[0], kh = W.shape[2], kw = W.shape[3];
    int Ho = g.shape[1], Wo = g.shape[2];
    if (has_bias && t.needs_grad(b)) {
      Tensor& gb = t.grad_acc(b);
      for (int co = 0; co < Co; ++co) {
        Real s = 0;
        for (int oy = 0; oy < Ho; ++oy)
          for (int ox = 0; ox < Wo; ++ox) s += g.at(co, oy, ox);
        gb.data[size_t(co)] += s;
      }
    }
    bool nx = t.needs_grad(x), nw = t.needs_grad(w);
    if (!nx && !nw) return;
    Tensor* gx = nx ? &t.grad_acc(x) : nullptr;
    Tensor* gw = nw ? &t.grad_acc(w) : nullptr;
    if (kh == 1 && kw == 1 && stride == 1 && pad == 0) {
      const int64_t hw = int64_t(H) * Wd;
      if (nw) {  // weight grads from the sparse input
        for (int ci = 0; ci < Ci; ++ci) {
          const Real* irow = &X.data[size_t(ci) * size_t(hw)];
          for (int64_t p = 0; p < hw; ++p) {
            Real v = irow[p];
            if (v == 0.0) continue;
            for (int co = 0; co < Co; ++co)
              gw->data[size_t(co) * Ci + ci] +=
                  g.data[size_t(co * hw + p)] * v;
          }
        }
      }
      if (nx) {
        for (int co = 0; co < Co; ++co) {
          const Real* grow = &g.data[size_t(co) * size_t(hw)];
          for (int ci = 0; ci < Ci; ++ci) {
            Real wv = W.data[size_t(co) * Ci + ci];
            if (wv == 0.0) continue;
            Real* gxrow = &gx->data[size_t(ci) * size_t(hw)];
            for (int64_t p = 0; p < hw; ++p) gxrow[p] += grow[p] * wv;
          }
        }
      }
      return;
    }
    auto tap_range = [](int k, int pad2, int stride2, int extent, int out_n,
                        int& lo, int& hi) {
      int off = k - pad2;
      lo = off < 0 ? (-off + stride2 - 1) / stride2 : 0;
      hi = std::min(out_n,
                    off >= extent ? 0 : (extent - off - 1) / stride2 + 1);
    };
    for (int co = 0; co < Co; ++co) {
      for (int ci = 0; ci < Ci; ++ci) {
        for (int ky = 0; ky < kh; ++ky) {
          int oy_lo, oy_hi;
          tap_range(ky, pad, stride, H, Ho, oy_lo, oy_hi);
          for (int kx = 0; kx < kw; ++kx) {
            Real wv = W.at(co, ci, ky, kx);
            int ox_lo, ox_hi;
            tap_range(kx, pad, stride, Wd, Wo, ox_lo, ox_hi);
            Real acc = 0;
            for (int oy = oy_lo; oy < oy_hi; ++oy) {
              int iy = oy * stride + ky - pad;
              const Real* grow = &g.data[(size_t(co) * Ho + oy) * Wo];
              const Real* irow =
                  &X.data[(size_t(ci) * H + iy) * Wd + kx - pad];
              Real* gxrow =
                  nx ? &gx->data[(size_t(ci) * H + iy) * Wd + kx - pad]
                     : nullptr;
              if (stride == 1) {
                if (nw)
                  for (int ox = ox_lo; ox < ox_hi; ++ox)
                    acc += grow[ox] * irow[ox];
                if (nx)
                  for (int ox = ox_lo; ox < ox_hi; ++ox)
                    gxrow[ox] += grow[ox] * wv;
              } else {
                for (int ox = ox_lo; ox < ox_hi; ++ox) {
                  if (nw) acc += grow[ox] * irow[ox * stride];
                  if (nx) gxrow[ox * stride] += grow[ox] * wv;
                }
              }
            }
            if (nw) gw->at(co, ci, ky, kx) += acc;
          }
        }
      }
    }
  });
}

inline Var global_avg_pool(Tape& t, Var x) {
  const Tensor& X = t.val(x);
  if (X.rank() != 3) throw_invalid("global_avg_pool: needs (C,H,W)");
  int C = X.shape[0];
  int64_t hw = int64_t(X.shape[1]) * X.shape[2];
  Tensor out({C});
  for (int c = 0; c < C; ++c) {
    Real s = 0;
    for (int64_t i = 0; i < hw; ++i) s += X.data[size_t(c * hw + i)];
    out.data[size_t(c)] = s / Real(hw);
  }
  return t.record(std::move(out), t.needs_grad(x), [x, hw](Tape& t, Var self) {
    const Tensor& g = t.grad(self);
    Tensor& gx = t.grad_acc(x);
    int C = gx.shape[0];
    for (int c = 0; c < C; ++c)
      for (int64_t i = 0; i < hw; ++i)
        gx.data[size_t(c * hw + i)] += g.data[size_t(c)] / Real(hw);
  });
}

// factor-k average pooling (H, W divisible by k)
inline Var avg_pool(Tape& t, Var x, int k) {
  const Tensor& X = t.val(x);
  if (X.rank() != 3) throw_invalid("avg_pool: needs (C,H,W)");
  int C = X.shape[0], H = X.shape[1], W = X.shape[2];
  if (H % k != 0 || W % k != 0) throw_invalid("avg_pool: size not divisible");
  int Ho = H / k, Wo = W / k;
  Tensor out({C, Ho, Wo});
  Real inv = 1.0 / Real(k * k);
  for (int c = 0; c < C; ++c)
    for (int oy = 0; oy < Ho; ++oy)
      for (int ox = 0; ox < Wo; ++ox) {
        Real s = 0;
        for (int dy = 0; dy < k; ++dy)
          for (int dx = 0; dx < k; ++dx)
            s += X.at(c, oy * k + dy, ox * k + dx);
        out.at(c, oy, ox) = s * inv;
      }
  return t.record(std::move(out), t.needs_grad(x), [x, k](Tape& t, Var self) {
    const Tensor& g = t.grad(self);
    Tensor& gx = t.grad_acc(x);
    Real inv = 1.0 / Real(k * k);
    int C = g.shape[0], Ho = g.shape[1], Wo = g.shape[2];
    for (int c = 0; c < C; ++c)
      for (int oy = 0; oy < Ho; ++oy)
        for (int ox = 0; ox < Wo; ++ox) {
          Real gv = g.at(c, oy, ox) * inv;
          for (int dy = 0; dy < k; ++dy)
            for (int dx = 0; dx < k; ++dx)
              gx.at(c, oy * k + dy, ox * k + dx) += gv;
        }
  });
}

// bilinear x2 upsampling, pixel centers at half-integers
inline Var upsample2(Tape& t, Var x) {
  const Tensor& X = t.val(x);
  if (X.rank() != 3) throw_invalid("upsample2: needs (C,H,W)");
  int C = X.shape[0], H = X.shape[1], W = X.shape[2];
  int Ho = H * 2, Wo = W * 2;
  auto src = [](int o, int n) {
    // source coordinate and the two taps with weights (align-corners=false)
    Real s = (o + 0.5) * 0.5 - 0.5;
    int i0 = int(std::floor(s));
    Real f = s - i0;
    int a = std::clamp(i0, 0, n - 1);
    int b = std::clamp(i0 + 1, 0, n - 1);
    return std::tuple<int, int, Real>(a, b, f);
  };
  Tensor out({C, Ho, Wo});
  for (int c = 0; c < C; ++c)
    for (int oy = 0; oy < Ho; ++oy) {
      auto [y0, y1, fy] = src(oy, H);
      for (int ox = 0; ox < Wo; ++ox) {
        auto [x0, x1, fx] = src(ox, W);
        out.at(c, oy, ox) = (1 - fy) * ((1 - fx) * X.at(c, y0, x0) +
                                        fx * X.at(c, y0, x1)) +
                            fy * ((1 - fx) * X.at(c, y1, x0) +
                                  fx * X.at(c, y1, x1));
      }
    }
  return t.record(std::move(out), t.needs_grad(x), [x](Tape& t, Var self) {
    const Tensor& g = t.grad(self);
    Tensor& gx = t.grad_acc(x);
    int C = gx.shape[0], H = gx.shape[1], W = gx.shape[2];
    auto src = [](int o, int n) {
      Real s = (o + 0.5) * 0.5 - 0.5;
      int i0 = int(std::floor(s));
      Real f = s - i0;
      int a = std::clamp(i0, 0, n - 1);
      int b = std::clamp(i0 + 1, 0, n - 1);
      return std::tuple<int, int, Real>(a, b, f);
    };
    for (int c = 0; c < C; ++c)
      for (int oy = 0; oy < 2 * H; ++oy) {
        auto [y0, y1, fy] = src(oy, H);
        for (int ox = 0; ox < 2 * W; ++ox) {
          auto [x0, x1, fx] = src(ox, W);
          Real gv = g.at(c, oy, ox);
          gx.at(c, y0, x0) += gv * (1 - fy) * (1 - fx);
          gx.at(c, y0, x1) += gv * (1 - fy) * fx;
          gx.at(c, y1, x0) += gv * fy * (1 - fx);
          gx.at(c, y1, x1) += gv * fy * fx;
        }
      }
  });
}

// per-channel multiply of a (C,H,W) grid by a (1,H,W) map
inline Var mul_planes(Tape& t, Var x, Var a) {
  const Tensor& X = t.val(x);
  const Tensor& A = t.val(a);
  if (X.rank() != 3 || A.rank() != 3 || A.shape[0] != 1 ||
      A.shape[1] != X.shape[1] || A.shape[2] != X.shape[2])
    throw_invalid("mul_planes: shape mismatch");
  Tensor out = X;
  int64_t hw = int64_t(X.shape[1]) * X.shape[2];
  for (int c = 0; c < X.shape[0]; ++c)
    for (int64_t i = 0; i < hw; ++i)
      out.data[size_t(c * hw + i)] *= A.data[size_t(i)];
  bool needs = t.needs_grad(x) || t.needs_grad(a);
  return t.record(std::move(out), needs, [x, a, hw](Tape& t, Var self) {
    const Tensor& g = t.grad(self);
    const Tensor& X = t.val(x);
    const Tensor& A = t.val(a);
    int C = X.shape[0];
    if (t.needs_grad(x)) {
      Tensor& gx = t.grad_acc(x);
      for (int c = 0; c < C; ++c)
        for (int64_t i = 0; i < hw; ++i)
          gx.data[size_t(c * hw + i)] +=
              g.data[size_t(c * hw + i)] * A.data[size_t(i)];
    }
    if (t.needs_grad(a)) {
      Tensor& ga = t.grad_acc(a);
      for (int c = 0; c < C; ++c)
        for (int64_t i = 0; i < hw; ++i)
          ga.data[size_t(i)] +=
              g.data[size_t(c * hw + i)] * X.data[size_t(c * hw + i)];
    }
  });
}

// ---------------------------------------------------------------------------
// bilinear sampling / splatting
// ---------------------------------------------------------------------------

// Reads a (C,J) matrix of per-point features from a (C,H,W) grid at J
// continuous (x,y) grid coordinates; integer coordinates hit pixel centers.
// Out-of-grid coordinates clamp to the border.
inline Var bilinear_sample(Tape& t, Var grid, Var coords) {
  const Tensor& G = t.val(grid);
  const Tensor& P = t.val(coords);
  if (G.rank() != 3 || P.rank() != 2 || P.shape[1] != 2)
    throw_invalid("bilinear_sample: expects (C,H,W) grid, (J,2) coords");
  int C = G.shape[0], H = G.shape[1], W = G.shape[2], J = P.shape[0];
  Tensor out({C, J});
  for (int j = 0; j < J; ++j) {
    Real xs = P.at(j, 0), ys = P.at(j, 1);
    int x0 = int(std::floor(xs)), y0 = int(std::floor(ys));
    Real fx = xs - x0, fy = ys - y0;
    int xa = std::clamp(x0, 0, W - 1), xb = std::clamp(x0 + 1, 0, W - 1);
    int ya = std::clamp(y0, 0, H - 1), yb = std::clamp(y0 + 1, 0, H - 1);
    for (int c = 0; c < C; ++c) {
      out.at(c, j) = (1 - fy) * ((1 - fx) * G.at(c, ya, xa) +
                                 fx * G.at(c, ya, xb)) +
                     fy * ((1 - fx) * G.at(c, yb, xa) + fx * G.at(c, yb, xb));
    }
  }
  bool needs = t.needs_grad(grid) || t.needs_grad(coords);
  return t.record(std::move(out), needs, [grid, coords](Tape& t, Var self) {
    const Tensor& g = t.grad(self);
    const Tensor& G = t.val(grid);
    const Tensor& P = t.val(coords);
    int C = G.shape[0], H = G.shape[1], W = G.shape[2], J = P.shape[0];
    Tensor* gg = t.needs_grad(grid) ? &t.grad_acc(grid) : nullptr;
    Tensor* gp = t.needs_grad(coords) ? &t.grad_acc(coords) : nullptr;
    for (int j = 0; j < J; ++j) {
      Real xs = P.at(j, 0), ys = P.at(j, 1);
      int x0 = int(std::floor(xs)), y0 = int(std::floor(ys));
      Real fx = xs - x0, fy = ys - y0;
      int xa = std::clamp(x0, 0, W - 1), xb = std::clamp(x0 + 1, 0, W - 1);
      int ya = std::clamp(y0, 0, H - 1), yb = std::clamp(y0 + 1, 0, H - 1);
      for (int c = 0; c < C; ++c) {
        Real gv = g.at(c, j);
        if (gg) {
          gg->at(c, ya, xa) += gv * (1 - fy) * (1 - fx);
          gg->at(c, ya, xb) += gv * (1 - fy) * fx;
          gg->at(c, yb, xa) += gv * fy * (1 - fx);
          gg->at(c, yb, xb) += gv * fy * fx;
        }
        if (gp) {
          Real dfx = (1 - fy) * (G.at(c, ya, xb) - G.at(c, ya, xa)) +
                     fy * (G.at(c, yb, xb) - G.at(c, yb, xa));
          Real dfy = (1 - fx) * (G.at(c, yb, xa) - G.at(c, ya, xa)) +
                     fx * (G.at(c, yb, xb) - G.at(c, ya, xb));
          gp->at(j, 0) += gv * dfx;
          gp->at(j, 1) += gv * dfy;
        }
      }
    }
  });
}

namespace detail {
struct SplatTap {
  int px, py;
  Real w, dwx, dwy;
};
// The four bilinear taps for a point, dropping taps that fall off the grid,
// so an off-grid point deposits only its in-bounds fraction.
inline int splat_taps(Real xs, Real ys, int H, int W, SplatTap taps[4]) {
  int x0 = int(std::floor(xs)), y0 = int(std::floor(ys));
  Real fx = xs - x0, fy = ys - y0;
  const Real wx[2] = {1 - fx, fx};
  const Real wy[2] = {1 - fy, fy};
  const Real dwx[2] = {-1, 1};
  const Real dwy[2] = {-1, 1};
  int n = 0;
  for (int by = 0; by < 2; ++by)
    for (int bx = 0; bx < 2; ++bx) {
      int px = x0 + bx, py = y0 + by;
      if (px < 0 || px >= W || py < 0 || py >= H) continue;
      taps[n++] = SplatTap{px, py, wx[bx] * wy[by], dwx[bx] * wy[by],
                           wx[bx] * dwy[by]};
    }
  return n;
}
}  // namespace detail

// Writes each point's feature column into its own C-channel plane at its
// (x,y) coordinate: output (J*C, H, W). Linear adjoint of bilinear_sample
// for in-grid coordinates.
inline Var splat_planes(Tape& t, Var feats, Var coords, int H, int W) {
  const Tensor& F = t.val(feats);
  const Tensor& P = t.val(coords);
  if (F.rank() != 2 || P.rank() != 2 || P.shape[1] != 2 ||
      F.shape[1] != P.shape[0])
    throw_invalid("splat_planes: expects (C,J) feats, (J,2) coords");
  int C = F.shape[0], J = F.shape[1];
  Tensor out({J * C, H, W});
  for (int j = 0; j < J; ++j) {
    detail::SplatTap taps[4];
    int n = detail::splat_taps(P.at(j, 0), P.at(j, 1), H, W, taps);
    for (int c = 0; c < C; ++c) {
      Real fv = F.at(c, j);
      for (int k = 0; k < n; ++k)
        out.at(j * C + c, taps[k].py, taps[k].px) += fv * taps[k].w;
    }
  }
  bool needs = t.needs_grad(feats) || t.needs_grad(coords);
  return t.record(std::move(out), needs,
                  [feats, coords, H, W](Tape& t, Var self) {
    const Tensor& g = t.grad(self);
    const Tensor& F = t.val(feats);
    const Tensor& P = t.val(coords);
    int C = F.shape[0], J = F.shape[1];
    Tensor* gf = t.needs_grad(feats) ? &t.grad_acc(feats) : nullptr;
    Tensor* gp = t.needs_grad(coords) ? &t.grad_acc(coords) : nullptr;
    for (int j = 0; j < J; ++j) {
      detail::SplatTap taps[4];
      int n = detail::splat_taps(P.at(j, 0), P.at(j, 1), H, W, taps);
      for (int c = 0; c < C; ++c) {
        Real fv = F.at(c, j);
        for (int k = 0; k < n; ++k) {
          Real gv = g.at(j * C + c, taps[k].py, taps[k].px);
          if (gf) gf->at(c, j) += gv * taps[k].w;
          if (gp) {
            gp->at(j, 0) += gv * fv * taps[k].dwx;
            gp->at(j, 1) += gv * fv * taps[k].dwy;
          }
        }
      }
    }
  });
}

// All points splat into one shared C-channel plane (features of coincident
// points add up).
inline Var splat_sum(Tape& t, Var feats, Var coords, int H, int W) {
  const Tensor& F = t.val(feats);
  const Tensor& P = t.val(coords);
  if (F.rank() != 2 || P.rank() != 2 || P.shape[1] != 2 ||
      F.shape[1] != P.shape[0])
    throw_invalid("splat_sum: expects (C,J) feats, (J,2) coords");
  int C = F.shape[0], J = F.shape[1];
  Tensor out({C, H, W});
  for (int j = 0; j < J; ++j) {
    detail::SplatTap taps[4];
    int n = detail::splat_taps(P.at(j, 0), P.at(j, 1), H, W, taps);
    for (int c = 0; c < C; ++c) {
      Real fv = F.at(c, j);
      for (int k = 0; k < n; ++k)
        out.at(c, taps[k].py, taps[k].px) += fv * taps[k].w;
    }
  }
  bool needs = t.needs_grad(feats) || t.needs_grad(coords);
  return t.record(std::move(out), needs,
                  [feats, coords, H, W](Tape& t, Var self) {
    const Tensor& g = t.grad(self);
    const Tensor& F = t.val(feats);
    const Tensor& P = t.val(coords);
    int C = F.shape[0], J = F.shape[1];
    Tensor* gf = t.needs_grad(feats) ? &t.grad_acc(feats) : nullptr;
    Tensor* gp = t.needs_grad(coords) ? &t.grad_acc(coords) : nullptr;
    for (int j = 0; j < J; ++j) {
      detail::SplatTap taps[4];
      int n = detail::splat_taps(P.at(j, 0), P.at(j, 1), H, W, taps);
      for (int c = 0; c < C; ++c) {
        Real fv = F.at(c, j);
        for (int k = 0; k < n; ++k) {
          Real gv = g.at(c, taps[k].py, taps[k].px);
          if (gf) gf->at(c, j) += gv * taps[k].w;
          if (gp) {
            gp->at(j, 0) += gv * fv * taps[k].dwx;
            gp->at(j, 1) += gv * fv * taps[k].dwy;
          }
        }
      }
    }
  });
}

// Fused multi-plane projection + 1x1 reduction: mathematically identical to
// splat_planes followed by a pointwise convolution, but the (J*C,H,W)
// intermediate is never materialized; each joint touches only its four
// bilinear taps in both passes.
inline Var splat_planes_reduce(Tape& t, Var feats, Var coords, Var w, Var b,
                               int H, int W) {
  const Tensor& F = t.val(feats);
  const Tensor& P = t.val(coords);
  const Tensor& Wt = t.val(w);
  if (F.rank() != 2 || P.rank() != 2 || P.shape[1] != 2 ||
      F.shape[1] != P.shape[0])
    throw_invalid("splat_planes_reduce: expects (C,J) feats, (J,2) coords");
  int C = F.shape[0], J = F.shape[1];
  if (Wt.rank() != 4 || Wt.shape[1] != J * C || Wt.shape[2] != 1 ||
      Wt.shape[3] != 1)
    throw_invalid("splat_planes_reduce: weight must be (D, J*C, 1, 1)");
  int D = Wt.shape[0];
  if (t.val(b).numel() != D)
    throw_invalid("splat_planes_reduce: bias length mismatch");
  const int64_t hw = int64_t(H) * W;

  Tensor out({D, H, W});
  for (int d = 0; d < D; ++d) {
    Real bias = t.val(b).data[size_t(d)];
    for (int64_t p = 0; p < hw; ++p) out.data[size_t(d * hw + p)] = bias;
  }
  for (int j = 0; j < J; ++j) {
    detail::SplatTap taps[4];
    int n = detail::splat_taps(P.at(j, 0), P.at(j, 1), H, W, taps);
    for (int c = 0; c < C; ++c) {
      Real v = F.at(c, j);
      if (v == 0.0) continue;
      const size_t wcol = size_t(j) * size_t(C) + size_t(c);
      for (int k = 0; k < n; ++k) {
        Real tap_v = v * taps[k].w;
        int64_t p = int64_t(taps[k].py) * W + taps[k].px;
        for (int d = 0; d < D; ++d)
          out.data[size_t(d * hw + p)] +=
              Wt.data[size_t(d) * size_t(J * C) + wcol] * tap_v;
      }
    }
  }
  bool needs = t.needs_grad(feats) || t.needs_grad(coords) ||
               t.needs_grad(w) || t.needs_grad(b);
  return t.record(std::move(out), needs,
                  [feats, coords, w, b, H, W](Tape& t, Var self) {
    const Tensor& g = t.grad(self);
    const Tensor& F = t.val(feats);
    const Tensor& P = t.val(coords);
    const Tensor& Wt = t.val(w);
    int C = F.shape[0], J = P.shape[0], D = Wt.shape[0];
    const int64_t hw = int64_t(H) * W;
    Tensor* gf = t.needs_grad(feats) ? &t.grad_acc(feats) : nullptr;
    Tensor* gp = t.needs_grad(coords) ? &t.grad_acc(coords) : nullptr;
    Tensor* gw = t.needs_grad(w) ? &t.grad_acc(w) : nullptr;
    if (t.needs_grad(b)) {
      Tensor& gb = t.grad_acc(b);
      for (int d = 0; d < D; ++d) {
        Real s = 0;
        for (int64_t p = 0; p < hw; ++p) s += g.data[size_t(d * hw + p)];
        gb.data[size_t(d)] += s;
      }
    }
    std::vector<Real> gcache(size_t(4) * size_t(D));
    for (int j = 0; j < J; ++j) {
      detail::SplatTap taps[4];
      int n = detail::splat_taps(P.at(j, 0), P.at(j, 1), H, W, taps);
      for (int k = 0; k < n; ++k) {
        int64_t p = int64_t(taps[k].py) * W + taps[k].px;
        for (int d = 0; d < D; ++d)
          gcache[size_t(k) * size_t(D) + size_t(d)] =
              g.data[size_t(d * hw + p)];
      }
      for (int c = 0; c < C; ++c) {
        Real v = F.at(c, j);
        const size_t wcol = size_t(j) * size_t(C) + size_t(c);
        Real dfeat = 0, dx = 0, dy = 0;
        for (int k = 0; k < n; ++k) {
          const Real* gk = &gcache[size_t(k) * size_t(D)];
          Real dot = 0;
          for (int d = 0; d < D; ++d)
            dot += gk[d] * Wt.data[size_t(d) * size_t(J * C) + wcol];
          dfeat += dot * taps[k].w;
          dx += dot * v * taps[k].dwx;
          dy += dot * v * taps[k].dwy;
          if (gw && v != 0.0) {
            Real tap_v = v * taps[k].w;
            for (int d = 0; d < D; ++d)
              gw->data[size_t(d) * size_t(J * C) + wcol] += gk[d] * tap_v;
          }
        }
        if (gf) gf->at(c, j) += dfeat;
        if (gp) {
          gp->at(j, 0) += dx;
          gp->at(j, 1) += dy;
        }
      }
    }
  });
}

// One Gaussian position heatmap per point (peak 1 at the point): (J, H, W).
inline Var gaussian_planes(Tape& t, Var coords, int H, int W, Real sigma) {
  const Tensor& P = t.val(coords);
  if (P.rank() != 2 || P.shape[1] != 2)
    throw_invalid("gaussian_planes: expects (J,2) coords");
  int J = P.shape[0];
  Real inv2s2 = 1.0 / (2.0 * sigma * sigma);
  Tensor out({J, H, W});
  for (int j = 0; j < J; ++j) {
    Real xs = P.at(j, 0), ys = P.at(j, 1);
    for (int y = 0; y < H; ++y)
      for (int x = 0; x < W; ++x) {
        Real dx = x - xs, dy = y - ys;
        out.at(j, y, x) = std::exp(-(dx * dx + dy * dy) * inv2s2);
      }
  }
  return t.record(std::move(out), t.needs_grad(coords),
                  [coords, H, W, inv2s2](Tape& t, Var self) {
    const Tensor& g = t.grad(self);
    const Tensor& v = t.val(self);
    const Tensor& P = t.val(coords);
    Tensor& gp = t.grad_acc(coords);
    int J = P.shape[0];
    for (int j = 0; j < J; ++j) {
      Real xs = P.at(j, 0), ys = P.at(j, 1);
      Real sx = 0, sy = 0;
      for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) {
          Real gv = g.at(j, y, x) * v.at(j, y, x);
          sx += gv * 2.0 * (x - xs) * inv2s2;
          sy += gv * 2.0 * (y - ys) * inv2s2;
        }
      gp.at(j, 0) += sx;
      gp.at(j, 1) += sy;
    }
  });
}

// ---------------------------------------------------------------------------
// rotation / projection
// ---------------------------------------------------------------------------

namespace detail {
// sin(t)/t and (1-cos(t))/t^2 with series fallbacks below the switch point.
inline void rot_coeffs(Real th, Real& A, Real& B) {
  if (th < 1e-6) {
    Real t2 = th * th;
    A = 1.0 - t2 / 6.0;
    B = 0.5 - t2 / 24.0;
  } else {
    A = std::sin(th) / th;
    B = (1.0 - std::cos(th)) / (th * th);
  }
}
// d(A)/dθ / θ and d(B)/dθ / θ (both finite at 0)
inline void rot_coeff_rates(Real th, Real& dA, Real& dB) {
  if (th < 1e-4) {
    Real t2 = th * th;
    dA = -1.0 / 3.0 + t2 / 30.0;
    dB = -1.0 / 12.0 + t2 / 180.0;
  } else {
    Real s = std::sin(th), c = std::cos(th);
    dA = (th * c - s) / (th * th * th);
    dB = (th * s - 2.0 * (1.0 - c)) / (th * th * th * th);
  }
}
inline void cross_mat(const Real w[3], Real W[9]) {
  W[0] = 0;     W[1] = -w[2]; W[2] = w[1];
  W[3] = w[2];  W[4] = 0;     W[5] = -w[0];
  W[6] = -w[1]; W[7] = w[0];  W[8] = 0;
}
inline void mat3_mul(const Real a[9], const Real b[9], Real c[9]) {
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) {
      Real s = 0;
      for (int k = 0; k < 3; ++k) s += a[i * 3 + k] * b[k * 3 + j];
      c[i * 3 + j] = s;
    }
}
}  // namespace detail

// Axis-angle (3,) -> rotation matrix (3,3), exact series switch near zero.
inline Var rodrigues(Tape& t, Var aa) {
  const Tensor& A3 = t.val(aa);
  if (A3.numel() != 3) throw_invalid("rodrigues: expects 3-vector");
  Real w[3] = {A3.data[0], A3.data[1], A3.data[2]};
  Real th = std::sqrt(w[0] * w[0] + w[1] * w[1] + w[2] * w[2]);
  Real A, B;
  detail::rot_coeffs(th, A, B);
  Real W[9], W2[9];
  detail::cross_mat(w, W);
  detail::mat3_mul(W, W, W2);
  Tensor out({3, 3});
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j)
      out.at(i, j) = (i == j ? 1.0 : 0.0) + A * W[i * 3 + j] +
                     B * W2[i * 3 + j];
  return t.record(std::move(out), t.needs_grad(aa), [aa](Tape& t, Var self) {
    const Tensor& g = t.grad(self);
    const Tensor& A3 = t.val(aa);
    Real w[3] = {A3.data[0], A3.data[1], A3.data[2]};
    Real th = std::sqrt(w[0] * w[0] + w[1] * w[1] + w[2] * w[2]);
    Real A, B, dA, dB;
    detail::rot_coeffs(th, A, B);
    detail::rot_coeff_rates(th, dA, dB);
    Real W[9], W2[9];
    detail::cross_mat(w, W);
    detail::mat3_mul(W, W, W2);
    Real sA = 0, sB = 0;  // <g, W>, <g, W^2>
    for (int i = 0; i < 9; ++i) {
      sA += g.data[size_t(i)] * W[i];
      sB += g.data[size_t(i)] * W2[i];
    }
    Tensor& ga = t.grad_acc(aa);
    for (int k = 0; k < 3; ++k) {
      Real e[3] = {0, 0, 0};
      e[k] = 1;
      Real Ek[9], EkW[9], WEk[9];
      detail::cross_mat(e, Ek);
      detail::mat3_mul(Ek, W, EkW);
      detail::mat3_mul(W, Ek, WEk);
      Real cA = 0, cB = 0;
      for (int i = 0; i < 9; ++i) {
        cA += g.data[size_t(i)] * Ek[i];
        cB += g.data[size_t(i)] * (EkW[i] + WEk[i]);
      }
      // dθ/dw_k = w_k/θ folded into the rate terms (finite at θ=0)
      ga.data[size_t(k)] += A * cA + B * cB + w[k] * (dA * sA + dB * sB);
    }
  });
}

// Linear blend skinning: verts (V,3) in rest pose, per-joint global
// rotations Rg (K,3,3), rest joints (K,3), posed joints (K,3), dense
// weights (V,K). out_v = sum_k w_vk * (Rg_k (x_v - jrest_k) + jposed_k).
inline Var lbs_blend(Tape& t, Var Rg, Var jrest, Var jposed, Var verts,
                     const Tensor& weights) {
  const Tensor& R = t.val(Rg);
  const Tensor& Jr = t.val(jrest);
  const Tensor& Jp = t.val(jposed);
  const Tensor& X = t.val(verts);
  int K = R.shape[0], V = X.shape[0];
  if (R.rank() != 3 || R.shape[1] != 3 || R.shape[2] != 3 ||
      Jr.shape[0] != K || Jp.shape[0] != K || X.shape[1] != 3 ||
      weights.shape[0] != V || weights.shape[1] != K)
    throw_invalid("lbs_blend: shape mismatch");
  Tensor out({V, 3});
  // affine form per joint: x -> R x + (jposed - R jrest); at rest this is
  // exactly the identity, so the rest pose reproduces the template bitwise
  std::vector<Real> tk(size_t(K) * 3);
  for (int k = 0; k < K; ++k)
    for (int i = 0; i < 3; ++i)
      tk[size_t(k) * 3 + size_t(i)] =
          Jp.at(k, i) - (R.at(k, i, 0) * Jr.at(k, 0) +
                         R.at(k, i, 1) * Jr.at(k, 1) +
                         R.at(k, i, 2) * Jr.at(k, 2));
  for (int v = 0; v < V; ++v) {
    Real o[3] = {0, 0, 0};
    for (int k = 0; k < K; ++k) {
      Real w = weights.at(v, k);
      if (w == 0.0) continue;
      for (int i = 0; i < 3; ++i)
        o[i] += w * (R.at(k, i, 0) * X.at(v, 0) + R.at(k, i, 1) * X.at(v, 1) +
                     R.at(k, i, 2) * X.at(v, 2) + tk[size_t(k) * 3 + size_t(i)]);
    }
    for (int i = 0; i < 3; ++i) out.at(v, i) = o[i];
  }
  bool needs = t.needs_grad(Rg) || t.needs_grad(jrest) ||
               t.needs_grad(jposed) || t.needs_grad(verts);
  return t.record(std::move(out), needs,
                  [Rg, jrest, jposed, verts, &weights](Tape& t, Var self) {
    const Tensor& g = t.grad(self);
    const Tensor& R = t.val(Rg);
    const Tensor& Jr = t.val(jrest);
    const Tensor& X = t.val(verts);
    int K = R.shape[0], V = X.shape[0];
    Tensor* gR = t.needs_grad(Rg) ? &t.grad_acc(Rg) : nullptr;
    Tensor* gJr = t.needs_grad(jrest) ? &t.grad_acc(jrest) : nullptr;
    Tensor* gJp = t.needs_grad(jposed) ? &t.grad_acc(jposed) : nullptr;
    Tensor* gX = t.needs_grad(verts) ? &t.grad_acc(verts) : nullptr;
    for (int v = 0; v < V; ++v) {
      Real gv[3] = {g.at(v, 0), g.at(v, 1), g.at(v, 2)};
      for (int k = 0; k < K; ++k) {
        Real w = weights.at(v, k);
        if (w == 0.0) continue;
        Real d[3] = {X.at(v, 0) - Jr.at(k, 0), X.at(v, 1) - Jr.at(k, 1),
                     X.at(v, 2) - Jr.at(k, 2)};
        // R^T g, reused for both verts and rest-joint grads
        Real rtg[3];
        for (int i = 0; i < 3; ++i)
          rtg[i] = R.at(k, 0, i) * gv[0] + R.at(k, 1, i) * gv[1] +
                   R.at(k, 2, i) * gv[2];
        for (int i = 0; i < 3; ++i) {
          if (gJp) gJp->at(k, i) += w * gv[i];
          if (gX) gX->at(v, i) += w * rtg[i];
          if (gJr) gJr->at(k, i) -= w * rtg[i];
          if (gR)
            for (int j = 0; j < 3; ++j) gR->at(k, i, j) += w * gv[i] * d[j];
        }
      }
    }
  });
}

// Weak-perspective projection: (n,3) points + camera (s,tx,ty) -> (n,2).
inline Var project_points(Tape& t, Var xyz, Var cam) {
  const Tensor& X = t.val(xyz);
  const Tensor& C = t.val(cam);
  if (X.rank() != 2 || X.shape[1] != 3 || C.numel() != 3)
    throw_invalid("project_points: expects (n,3) points, (s,tx,ty) camera");
  Real s = C.data[0], tx = C.data[1], ty = C.data[2];
  if (!(s > 0)) throw_invalid("project_points: scale must be positive");
  int n = X.shape[0];
  Tensor out({n, 2});
  for (int i = 0; i < n; ++i) {
    out.at(i, 0) = s * X.at(i, 0) + tx;
    out.at(i, 1) = s * X.at(i, 1) + ty;
  }
  bool needs = t.needs_grad(xyz) || t.needs_grad(cam);
  return t.record(std::move(out), needs, [xyz, cam](Tape& t, Var self) {
    const Tensor& g = t.grad(self);
    const Tensor& X = t.val(xyz);
    Real s = t.val(cam).data[0];
    int n = X.shape[0];
    if (t.needs_grad(xyz)) {
      Tensor& gx = t.grad_acc(xyz);
      for (int i = 0; i < n; ++i) {
        gx.at(i, 0) += s * g.at(i, 0);
        gx.at(i, 1) += s * g.at(i, 1);
      }
    }
    if (t.needs_grad(cam)) {
      Tensor& gc = t.grad_acc(cam);
      for (int i = 0; i < n; ++i) {
        gc.data[0] += g.at(i, 0) * X.at(i, 0) + g.at(i, 1) * X.at(i, 1);
        gc.data[1] += g.at(i, 0);
        gc.data[2] += g.at(i, 1);
      }
    }
  });
}

// translate every row of (n,3) by a 3-vector
inline Var add_row_vec(Tape& t, Var pts, Var vec) {
  const Tensor& X = t.val(pts);
  const Tensor& V3 = t.val(vec);
  if (X.rank() != 2 || V3.numel() != X.shape[1])
    throw_invalid("add_row_vec: shape mismatch");
  Tensor out = X;
  int n = X.shape[0], d = X.shape[1];
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < d; ++j) out.at(i, j) += V3.data[size_t(j)];
  bool needs = t.needs_grad(pts) || t.needs_grad(vec);
  return t.record(std::move(out), needs, [pts, vec](Tape& t, Var self) {
    const Tensor& g = t.grad(self);
    if (t.needs_grad(pts)) axpy(t.grad_acc(pts), g);
    if (t.needs_grad(vec)) {
      Tensor& gv = t.grad_acc(vec);
      for (int i = 0; i < g.shape[0]; ++i)
        for (int j = 0; j < g.shape[1]; ++j) gv.data[size_t(j)] += g.at(i, j);
    }
  });
}

}  // namespace handrec::ops
