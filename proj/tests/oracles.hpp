#pragma once

// Independent brute-force reimplementations of the evaluation metrics.
// Deliberately naive: no bucketing, no shared helpers with the library
// implementations they check.

#include <vector>

#include "handrec/metrics.hpp"

namespace oracle {

using handrec::EvalConfig;
using handrec::Real;
using handrec::Tensor;

inline Real naive_bone_sum(const Tensor& joints) {
  Real total = 0;
  for (auto [a, b] : handrec::skeleton_bones()) {
    Real dx = joints.at(a, 0) - joints.at(b, 0);
    Real dy = joints.at(a, 1) - joints.at(b, 1);
    Real dz = joints.at(a, 2) - joints.at(b, 2);
    total += std::sqrt(dx * dx + dy * dy + dz * dz);
  }
  return total;
}

inline Real naive_mpjpe(const Tensor& pl, const Tensor& pr, const Tensor& gl,
                        const Tensor& gr, const EvalConfig& cfg) {
  Real sum = 0;
  int count = 0;
  int root = cfg.root == EvalConfig::Root::wrist ? 0
                                                 : handrec::middle_mcp_index();
  const Tensor* preds[2] = {&pl, &pr};
  const Tensor* gts[2] = {&gl, &gr};
  for (int h = 0; h < 2; ++h) {
    Real ratio = 1.0;
    if (cfg.scale_by_gt_bone)
      ratio = naive_bone_sum(*gts[h]) / naive_bone_sum(*preds[h]);
    for (int j = 0; j < 21; ++j) {
      Real d2 = 0;
      for (int c = 0; c < 3; ++c) {
        Real p = (preds[h]->at(j, c) - preds[h]->at(root, c)) * ratio;
        Real g = gts[h]->at(j, c) - gts[h]->at(root, c);
        d2 += (p - g) * (p - g);
      }
      sum += std::sqrt(d2) * 1000.0;
      ++count;
    }
  }
  return sum / count;
}

inline Real naive_mpvpe(const Tensor& pvl, const Tensor& pvr,
                        const Tensor& gvl, const Tensor& gvr,
                        const Tensor& pjl, const Tensor& pjr,
                        const Tensor& gjl, const Tensor& gjr,
                        const EvalConfig& cfg) {
  Real sum = 0;
  int64_t count = 0;
  int root = cfg.root == EvalConfig::Root::wrist ? 0
                                                 : handrec::middle_mcp_index();
  const Tensor* pv[2] = {&pvl, &pvr};
  const Tensor* gv[2] = {&gvl, &gvr};
  const Tensor* pj[2] = {&pjl, &pjr};
  const Tensor* gj[2] = {&gjl, &gjr};
  for (int h = 0; h < 2; ++h) {
    Real ratio = 1.0;
    if (cfg.scale_by_gt_bone)
      ratio = naive_bone_sum(*gj[h]) / naive_bone_sum(*pj[h]);
    for (int i = 0; i < pv[h]->shape[0]; ++i) {
      Real d2 = 0;
      for (int c = 0; c < 3; ++c) {
        Real p = (pv[h]->at(i, c) - pj[h]->at(root, c)) * ratio;
        Real g = gv[h]->at(i, c) - gj[h]->at(root, c);
        d2 += (p - g) * (p - g);
      }
      sum += std::sqrt(d2) * 1000.0;
      ++count;
    }
  }
  return sum / Real(count);
}

inline Real naive_mrrpe(const Tensor& po, const Tensor& go) {
  Real d2 = 0;
  for (int c = 0; c < 3; ++c) {
    Real d = po.data[size_t(c)] - go.data[size_t(c)];
    d2 += d * d;
  }
  return std::sqrt(d2) * 1000.0;
}

inline Real naive_miaa(const Tensor& pred2d, const Tensor& gt3d, Real s,
                       Real tx, Real ty) {
  Real sum = 0;
  for (int i = 0; i < pred2d.shape[0]; ++i) {
    Real gx = s * gt3d.at(i, 0) + tx;
    Real gy = s * gt3d.at(i, 1) + ty;
    Real dx = pred2d.at(i, 0) - gx;
    Real dy = pred2d.at(i, 1) - gy;
    sum += std::sqrt(dx * dx + dy * dy);
  }
  return sum / pred2d.shape[0];
}

inline std::pair<std::vector<Real>, Real> naive_pck_auc(
    std::vector<Real> errs, Real max_mm, int steps) {
  std::vector<Real> pck;
  for (int i = 0; i < steps; ++i) {
    Real tau = max_mm * Real(i) / (steps - 1);
    int ok = 0;
    for (Real e : errs)
      if (e <= tau) ++ok;
    pck.push_back(errs.empty() ? 0.0 : Real(ok) / Real(errs.size()));
  }
  Real integral = 0;
  for (int i = 0; i + 1 < steps; ++i)
    integral += 0.5 * (pck[size_t(i)] + pck[size_t(i + 1)]) * max_mm /
                (steps - 1);
  return {pck, integral / max_mm};
}

// ---------------------------------------------------------------------------
// naive interpenetration volume: per voxel center, every triangle tested,
// plane-equation intersection; same component/jitter semantics as specified
// ---------------------------------------------------------------------------

struct NaiveMesh {
  const Tensor* verts;
  const std::vector<std::array<int, 3>>* faces;
  std::vector<int> comp;
  int comp_count = 0;
};

inline NaiveMesh naive_components(const Tensor& v,
                                  const std::vector<std::array<int, 3>>& f) {
  NaiveMesh m{&v, &f, {}, 0};
  int V = v.shape[0];
  std::vector<int> label(static_cast<size_t>(V), -1);
  // flood labels through face connectivity, the slow way
  std::vector<int> vert_comp(static_cast<size_t>(V), -1);
  int next = 0;
  bool changed = true;
  for (const auto& face : f)
    for (int k : face)
      if (vert_comp[size_t(k)] < 0) vert_comp[size_t(k)] = next++;
  while (changed) {
    changed = false;
    for (const auto& face : f) {
      int mn = std::min({vert_comp[size_t(face[0])], vert_comp[size_t(face[1])],
                         vert_comp[size_t(face[2])]});
      for (int k : face)
        if (vert_comp[size_t(k)] != mn) {
          vert_comp[size_t(k)] = mn;
          changed = true;
        }
    }
  }
  std::map<int, int> remap;
  for (const auto& face : f) {
    int c = vert_comp[size_t(face[0])];
    if (!remap.count(c)) remap[c] = int(remap.size());
    m.comp.push_back(remap[c]);
  }
  m.comp_count = int(remap.size());
  (void)label;
  return m;
}

// crossing list for a +x ray; false on grazing
inline bool naive_ray(const NaiveMesh& m, Real ry, Real rz,
                      std::vector<std::pair<Real, int>>& hits) {
  hits.clear();
  const Tensor& V = *m.verts;
  for (size_t fi = 0; fi < m.faces->size(); ++fi) {
    const auto& f = (*m.faces)[fi];
    Real ay = V.at(f[0], 1), az = V.at(f[0], 2);
    Real by = V.at(f[1], 1), bz = V.at(f[1], 2);
    Real cy = V.at(f[2], 1), cz = V.at(f[2], 2);
    Real e0 = (by - ay) * (rz - az) - (bz - az) * (ry - ay);
    Real e1 = (cy - by) * (rz - bz) - (cz - bz) * (ry - by);
    Real e2 = (ay - cy) * (rz - cz) - (az - cz) * (ry - cy);
    Real scale = std::max({std::abs(ay - ry), std::abs(by - ry),
                           std::abs(cy - ry), std::abs(az - rz),
                           std::abs(bz - rz), std::abs(cz - rz), Real(1e-9)});
    Real tol = 1e-12 * scale * scale;
    bool pos = e0 > tol && e1 > tol && e2 > tol;
    bool neg = e0 < -tol && e1 < -tol && e2 < -tol;
    if (!pos && !neg) {
      bool clearly_out = (e0 > tol || e1 > tol || e2 > tol) &&
                         (e0 < -tol || e1 < -tol || e2 < -tol);
      if (clearly_out) continue;
      return false;
    }
    // plane-equation intersection (different route than the implementation)
    Real ax = V.at(f[0], 0);
    Real ux = V.at(f[1], 0) - ax, uy = by - ay, uz = bz - az;
    Real vx = V.at(f[2], 0) - ax, vy = cy - ay, vz = cz - az;
    Real nx = uy * vz - uz * vy;
    Real ny = uz * vx - ux * vz;
    Real nz = ux * vy - uy * vx;
    Real x = ax - (ny * (ry - ay) + nz * (rz - az)) / nx;
    hits.push_back({x, m.comp[fi]});
  }
  return true;
}

inline bool naive_inside(const NaiveMesh& m, Real px, Real py, Real pz) {
  std::vector<std::pair<Real, int>> hits;
  bool have = false;
  std::vector<int> parity;
  for (int attempt = 0; attempt < 4; ++attempt) {
    Real jy = py + attempt * 1e-7;
    Real jz = pz + attempt * 0.7533e-7;
    if (!naive_ray(m, jy, jz, hits)) continue;
    std::vector<int> par(static_cast<size_t>(m.comp_count), 0);
    for (auto& [x, comp] : hits)
      if (x > px) par[size_t(comp)] ^= 1;
    if (!have) {
      parity = par;
      have = true;
      if (attempt == 0) break;
    } else if (par != parity) {
      handrec::throw_numeric("naive IV: parity inconsistent");
    }
  }
  if (!have) handrec::throw_numeric("naive IV: grazing persists");
  for (int v : parity)
    if (v) return true;
  return false;
}

inline Real naive_iv(const Tensor& va,
                     const std::vector<std::array<int, 3>>& fa,
                     const Tensor& vb,
                     const std::vector<std::array<int, 3>>& fb,
                     Real voxel_cm) {
  Real voxel = voxel_cm / 100.0;
  Real lo[3] = {1e300, 1e300, 1e300}, hi[3] = {-1e300, -1e300, -1e300};
  for (const Tensor* v : {&va, &vb})
    for (int i = 0; i < v->shape[0]; ++i)
      for (int c = 0; c < 3; ++c) {
        lo[c] = std::min(lo[c], v->at(i, c));
        hi[c] = std::max(hi[c], v->at(i, c));
      }
  Real anchor[3];
  int n[3];
  for (int c = 0; c < 3; ++c) {
    anchor[c] = lo[c] - voxel;
    n[c] = int(std::ceil((hi[c] - lo[c]) / voxel)) + 2;
  }
  NaiveMesh ma = naive_components(va, fa);
  NaiveMesh mb = naive_components(vb, fb);
  int64_t count = 0;
  for (int iz = 0; iz < n[2]; ++iz)
    for (int iy = 0; iy < n[1]; ++iy)
      for (int ix = 0; ix < n[0]; ++ix) {
        Real px = anchor[0] + (ix + 0.5) * voxel;
        Real py = anchor[1] + (iy + 0.5) * voxel;
        Real pz = anchor[2] + (iz + 0.5) * voxel;
        if (naive_inside(ma, px, py, pz) && naive_inside(mb, px, py, pz))
          ++count;
      }
  return Real(count) * voxel_cm * voxel_cm * voxel_cm;
}

}  // namespace oracle
