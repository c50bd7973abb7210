#pragma once

#include "handrec/hand_model.hpp"
#include "handrec/ops.hpp"

// Training objectives: smooth-L1 joint/mesh/offset terms, mesh smoothness
// (normal + edge-length consistency), and pixel-wise auxiliary MSE terms.
namespace handrec {

// Elementwise 0.5 x^2 / beta for |x| < beta, |x| - beta/2 otherwise;
// mean-reduced.
inline Var smooth_l1(Tape& t, Var pred, const Tensor& gt, Real beta = 1.0) {
  const Tensor& P = t.val(pred);
  if (!P.same_shape(gt))
    throw_invalid("smooth_l1: shape mismatch " + P.shape_str() + " vs " +
                  Tensor(gt.shape).shape_str());
  int64_t n = P.numel();
  Real acc = 0;
  for (int64_t i = 0; i < n; ++i) {
    Real d = P.data[size_t(i)] - gt.data[size_t(i)];
    Real a = std::abs(d);
    acc += (a < beta) ? 0.5 * d * d / beta : a - 0.5 * beta;
  }
  Tensor gt_copy = gt;
  return t.record(Tensor::scalar(acc / Real(n)), t.needs_grad(pred),
                  [pred, gt_copy = std::move(gt_copy), beta, n](Tape& t,
                                                                Var self) {
    Real g = t.grad(self).data[0] / Real(n);
    const Tensor& P = t.val(pred);
    Tensor& gp = t.grad_acc(pred);
    for (int64_t i = 0; i < n; ++i) {
      Real d = P.data[size_t(i)] - gt_copy.data[size_t(i)];
      Real slope = (std::abs(d) < beta) ? d / beta : (d > 0 ? 1.0 : -1.0);
      gp.data[size_t(i)] += g * slope;
    }
  });
}

// mean squared error against a fixed target
inline Var mse(Tape& t, Var pred, const Tensor& gt) {
  const Tensor& P = t.val(pred);
  if (!P.same_shape(gt)) throw_invalid("mse: shape mismatch");
  int64_t n = P.numel();
  Real acc = 0;
  for (int64_t i = 0; i < n; ++i) {
    Real d = P.data[size_t(i)] - gt.data[size_t(i)];
    acc += d * d;
  }
  Tensor gt_copy = gt;
  return t.record(Tensor::scalar(acc / Real(n)), t.needs_grad(pred),
                  [pred, gt_copy = std::move(gt_copy), n](Tape& t, Var self) {
    Real g = t.grad(self).data[0] / Real(n);
    const Tensor& P = t.val(pred);
    Tensor& gp = t.grad_acc(pred);
    for (int64_t i = 0; i < n; ++i)
      gp.data[size_t(i)] += g * 2.0 * (P.data[size_t(i)] - gt_copy.data[size_t(i)]);
  });
}

// ---------------------------------------------------------------------------
// mesh smoothness terms against a fixed ground-truth mesh
// ---------------------------------------------------------------------------

// Precomputed per-face-edge reference data. The normal term for each edge is
// evaluated as a fused scalar triple product chosen so that a prediction
// bitwise equal to the ground truth cancels exactly to 0.0.
struct MeshLossRef {
  struct EdgeRef {
    int vi, vj;          // predicted edge = v[vj] - v[vi]
    Real u[3], v[3];     // raw = sign * dot(u, cross(e, v))
    Real sign;
    Real dvec[3];        // d raw / d e  (= sign * v x u)
    Real inv_norm;       // 1 / ||gt face normal|| for this edge's form
    Real gt_len;         // ||gt edge||
    bool valid;
  };
  std::vector<EdgeRef> edges;
  int degenerate_faces = 0;

  MeshLossRef() = default;
  MeshLossRef(const Tensor& gt_verts,
              const std::vector<std::array<int, 3>>& faces) {
    auto vert = [&](int i, Real out[3]) {
      out[0] = gt_verts.at(i, 0);
      out[1] = gt_verts.at(i, 1);
      out[2] = gt_verts.at(i, 2);
    };
    auto subv = [](const Real a[3], const Real b[3], Real o[3]) {
      o[0] = a[0] - b[0];
      o[1] = a[1] - b[1];
      o[2] = a[2] - b[2];
    };
    auto crossv = [](const Real a[3], const Real b[3], Real o[3]) {
      o[0] = a[1] * b[2] - a[2] * b[1];
      o[1] = a[2] * b[0] - a[0] * b[2];
      o[2] = a[0] * b[1] - a[1] * b[0];
    };
    auto normv = [](const Real a[3]) {
      return std::sqrt(a[0] * a[0] + a[1] * a[1] + a[2] * a[2]);
    };
    for (const auto& f : faces) {
      Real A[3], B[3], C[3], g1[3], g2[3], g3[3];
      vert(f[0], A);
      vert(f[1], B);
      vert(f[2], C);
      subv(B, A, g1);
      subv(C, A, g2);
      subv(C, B, g3);
      Real n12[3], n13[3];
      crossv(g1, g2, n12);
      crossv(g1, g3, n13);
      Real N12 = normv(n12), N13 = normv(n13);
      bool valid = N12 > 1e-12 && N13 > 1e-12;
      if (!valid) ++degenerate_faces;
      // (edge, u, v, sign, cross-for-grad, norm)
      struct Def {
        int vi, vj;
        const Real *u, *v;
        Real sign;
        Real N;
      } defs[3] = {
          {f[0], f[1], g2, g1, +1.0, N12},
          {f[0], f[2], g1, g2, -1.0, N12},
          {f[1], f[2], g1, g3, -1.0, N13},
      };
      for (const Def& d : defs) {
        EdgeRef e;
        e.vi = d.vi;
        e.vj = d.vj;
        for (int c = 0; c < 3; ++c) {
          e.u[c] = d.u[c];
          e.v[c] = d.v[c];
        }
        e.sign = d.sign;
        Real vxu[3];
        crossv(e.v, e.u, vxu);
        for (int c = 0; c < 3; ++c) e.dvec[c] = d.sign * vxu[c];
        e.inv_norm = valid ? 1.0 / d.N : 0.0;
        // gt edge length computed with the exact expression the predicted
        // edge uses, so pred == gt cancels bitwise
        Real ge[3] = {gt_verts.at(d.vj, 0) - gt_verts.at(d.vi, 0),
                      gt_verts.at(d.vj, 1) - gt_verts.at(d.vi, 1),
                      gt_verts.at(d.vj, 2) - gt_verts.at(d.vi, 2)};
        e.gt_len = normv(ge);
        e.valid = valid;
        edges.push_back(e);
      }
    }
  }
};

namespace loss_detail {
// a*b - c*d with both products rounded to memory first: when (a,b) == (c,d)
// bitwise the difference is exactly zero even under FMA contraction
inline Real product_diff(Real a, Real b, Real c, Real d) {
  volatile Real ab = a * b;
  volatile Real cd = c * d;
  return ab - cd;
}
}  // namespace loss_detail

// sum_f sum_{edges of f} | <e_pred / ||e_pred||, n_gt / ||n_gt||> |
// Degenerate ground-truth faces are skipped (counted in the reference).
inline Var normal_consistency_t(Tape& t, Var pred_verts,
                                const MeshLossRef& ref) {
  const Tensor& P = t.val(pred_verts);
  Real acc = 0;
  for (const auto& e : ref.edges) {
    if (!e.valid) continue;
    Real ev[3] = {P.at(e.vj, 0) - P.at(e.vi, 0), P.at(e.vj, 1) - P.at(e.vi, 1),
                  P.at(e.vj, 2) - P.at(e.vi, 2)};
    Real cx = loss_detail::product_diff(ev[1], e.v[2], ev[2], e.v[1]);
    Real cy = loss_detail::product_diff(ev[2], e.v[0], ev[0], e.v[2]);
    Real cz = loss_detail::product_diff(ev[0], e.v[1], ev[1], e.v[0]);
    Real raw = e.sign * (e.u[0] * cx + e.u[1] * cy + e.u[2] * cz);
    Real len = std::sqrt(ev[0] * ev[0] + ev[1] * ev[1] + ev[2] * ev[2]);
    if (len < 1e-15) continue;
    acc += std::abs(raw) / len * e.inv_norm;
  }
  return t.record(Tensor::scalar(acc), t.needs_grad(pred_verts),
                  [pred_verts, &ref](Tape& t, Var self) {
    Real g = t.grad(self).data[0];
    const Tensor& P = t.val(pred_verts);
    Tensor& gp = t.grad_acc(pred_verts);
    for (const auto& e : ref.edges) {
      if (!e.valid) continue;
      Real ev[3] = {P.at(e.vj, 0) - P.at(e.vi, 0),
                    P.at(e.vj, 1) - P.at(e.vi, 1),
                    P.at(e.vj, 2) - P.at(e.vi, 2)};
      Real cx = ev[1] * e.v[2] - ev[2] * e.v[1];
      Real cy = ev[2] * e.v[0] - ev[0] * e.v[2];
      Real cz = ev[0] * e.v[1] - ev[1] * e.v[0];
      Real raw = e.sign * (e.u[0] * cx + e.u[1] * cy + e.u[2] * cz);
      Real len2 = ev[0] * ev[0] + ev[1] * ev[1] + ev[2] * ev[2];
      Real len = std::sqrt(len2);
      if (len < 1e-15) continue;
      Real sgn = raw > 0 ? 1.0 : (raw < 0 ? -1.0 : 0.0);
      Real k1 = g * e.inv_norm;
      for (int c = 0; c < 3; ++c) {
        Real de = sgn * e.dvec[c] / len - std::abs(raw) * ev[c] / (len2 * len);
        gp.at(e.vj, c) += k1 * de;
        gp.at(e.vi, c) -= k1 * de;
      }
    }
  });
}

// sum_f sum_{edges of f} | ||e_pred|| - ||e_gt|| |
inline Var edge_length_consistency_t(Tape& t, Var pred_verts,
                                     const MeshLossRef& ref) {
  const Tensor& P = t.val(pred_verts);
  Real acc = 0;
  for (const auto& e : ref.edges) {
    Real ev[3] = {P.at(e.vj, 0) - P.at(e.vi, 0), P.at(e.vj, 1) - P.at(e.vi, 1),
                  P.at(e.vj, 2) - P.at(e.vi, 2)};
    Real len = std::sqrt(ev[0] * ev[0] + ev[1] * ev[1] + ev[2] * ev[2]);
    acc += std::abs(len - e.gt_len);
  }
  return t.record(Tensor::scalar(acc), t.needs_grad(pred_verts),
                  [pred_verts, &ref](Tape& t, Var self) {
    Real g = t.grad(self).data[0];
    const Tensor& P = t.val(pred_verts);
    Tensor& gp = t.grad_acc(pred_verts);
    for (const auto& e : ref.edges) {
      Real ev[3] = {P.at(e.vj, 0) - P.at(e.vi, 0),
                    P.at(e.vj, 1) - P.at(e.vi, 1),
                    P.at(e.vj, 2) - P.at(e.vi, 2)};
      Real len = std::sqrt(ev[0] * ev[0] + ev[1] * ev[1] + ev[2] * ev[2]);
      if (len < 1e-15) continue;
      Real sgn = (len > e.gt_len) ? 1.0 : (len < e.gt_len ? -1.0 : 0.0);
      for (int c = 0; c < 3; ++c) {
        Real de = g * sgn * ev[c] / len;
        gp.at(e.vj, c) += de;
        gp.at(e.vi, c) -= de;
      }
    }
  });
}

// plain-value wrappers
struct MeshLossValue {
  Real value = 0;
  int degenerate_faces = 0;
};

inline MeshLossValue normal_consistency(const Tensor& pred_verts,
                                        const Tensor& gt_verts,
                                        const std::vector<std::array<int, 3>>&
                                            faces) {
  MeshLossRef ref(gt_verts, faces);
  Tape t;
  Var v = normal_consistency_t(t, t.input(pred_verts, false), ref);
  return {t.val(v).data[0], ref.degenerate_faces};
}

inline Real edge_length_consistency(const Tensor& pred_verts,
                                    const Tensor& gt_verts,
                                    const std::vector<std::array<int, 3>>&
                                        faces) {
  MeshLossRef ref(gt_verts, faces);
  Tape t;
  Var v = edge_length_consistency_t(t, t.input(pred_verts, false), ref);
  return t.val(v).data[0];
}

// ---------------------------------------------------------------------------
// aggregate loss over a model output
// ---------------------------------------------------------------------------

struct HandGroundTruth {
  Tensor joints3d;  // (21,3) root-relative meters
  Tensor joints2d;  // (21,2) image pixels
  Tensor verts3d;   // (V,3) root-relative meters
  Tensor verts2d;   // (V,2) image pixels
  Tensor camera;    // (3) s,tx,ty
};

struct GroundTruthSample {
  HandGroundTruth left, right;
  Tensor offset;  // (3) meters
  Tensor seg;     // (2,H,W)
  Tensor corr;    // (3,H,W)
};

// Default weights put every term on a comparable footing. The smoothness
// terms are sums over all face edges of both hands and every stage (a few
// thousand O(1) entries), so their weights carry the 1/(edge count) scale;
// at 0.1 / 1.0 they drown the pose supervision entirely. The 3D terms are
// upweighted against the 2D ones so depth cannot hide behind the camera
// scale ambiguity.
struct LossWeights {
  Real joint3d = 5.0, joint2d = 1.0;
  Real mesh3d = 5.0, mesh2d = 1.0;
  Real offset = 1.0;
  Real normal = 1e-5, edge = 1e-3;
  Real seg = 1.0, corr = 1.0;
};

struct LossReport {
  Real joint3d = 0, joint2d = 0, mesh3d = 0, mesh2d = 0;
  Real offset = 0, normal = 0, edge = 0, seg = 0, corr = 0;
  Real total = 0;
  int degenerate_faces = 0;
};

// Per-stage losses for one hand, already root-relative / pixel-space.
// 2D terms are normalized by the image size so beta=1 behaves uniformly.
struct StageHandVars {
  Var joints3d;  // (21,3)
  Var joints2d;  // (21,2) image pixels
  Var verts3d;   // (V,3)
  Var verts2d;   // (V,2)
};

inline Tensor normalize_2d(const Tensor& px, Real image_size) {
  Tensor out = px;
  for (Real& v : out.data) v /= image_size;
  return out;
}

}  // namespace handrec
