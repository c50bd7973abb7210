#pragma once

#include <fstream>

#include <json.hpp>

#include "handrec/camera.hpp"
#include "handrec/hand_model.hpp"

// Evaluation metrics: root-aligned (optionally bone-length-rescaled) joint
// and vertex errors, relative-root error, 2D alignment accuracy, PCK/AUC,
// and voxelized interpenetration volume.
namespace handrec {

struct EvalConfig {
  enum class Root { wrist, middle_mcp };
  Root root = Root::wrist;
  bool scale_by_gt_bone = true;
  Real pck_max_mm = 50.0;
  int pck_steps = 51;
  Real iv_voxel_cm = 0.5;

  void validate() const {
    if (pck_steps < 2) throw_config("eval: pck_steps must be >= 2");
    if (iv_voxel_cm <= 0) throw_config("eval: iv voxel must be positive");
  }
  int root_joint() const {
    return root == Root::wrist ? 0 : middle_mcp_index();
  }
};

namespace metric_detail {

inline Real bone_length_sum(const Tensor& joints) {
  Real total = 0;
  for (auto [a, b] : skeleton_bones()) {
    Real s = 0;
    for (int c = 0; c < 3; ++c) {
      Real d = joints.at(a, c) - joints.at(b, c);
      s += d * d;
    }
    total += std::sqrt(s);
  }
  return total;
}

// root-align and optionally rescale a point set using the joint solution
inline Tensor align_points(const Tensor& pts, const Tensor& joints, int root,
                           Real scale) {
  Tensor out = pts;
  for (int i = 0; i < out.shape[0]; ++i)
    for (int c = 0; c < 3; ++c)
      out.at(i, c) = (pts.at(i, c) - joints.at(root, c)) * scale;
  return out;
}

inline Real gt_scale_ratio(const Tensor& pred_joints, const Tensor& gt_joints,
                           const EvalConfig& cfg) {
  if (!cfg.scale_by_gt_bone) return 1.0;
  Real pred = bone_length_sum(pred_joints);
  Real gt = bone_length_sum(gt_joints);
  if (pred <= 0)
    throw_numeric("metrics: zero predicted bone length, cannot rescale");
  return gt / pred;
}

inline Real point_dist_mm(const Tensor& a, const Tensor& b, int i) {
  Real s = 0;
  for (int c = 0; c < 3; ++c) {
    Real d = a.at(i, c) - b.at(i, c);
    s += d * d;
  }
  return std::sqrt(s) * 1000.0;
}

}  // namespace metric_detail

struct JointsPair {
  Tensor left, right;  // (21,3), meters, any shared frame per hand
};
struct VertsPair {
  Tensor left, right;  // (V,3)
};

// Mean per-joint position error (mm) over both hands after root alignment;
// optionally appends the 42 per-joint errors for PCK pooling.
inline Real mpjpe(const JointsPair& pred, const JointsPair& gt,
                  const EvalConfig& cfg,
                  std::vector<Real>* per_joint_mm = nullptr) {
  using namespace metric_detail;
  if (pred.left.shape[0] != kReportedJoints ||
      pred.right.shape[0] != kReportedJoints)
    throw_invalid("mpjpe: expected 21 joints per hand");
  Real total = 0;
  int n = 0;
  for (int h = 0; h < 2; ++h) {
    const Tensor& pj = h == 0 ? pred.left : pred.right;
    const Tensor& gj = h == 0 ? gt.left : gt.right;
    Real ratio = gt_scale_ratio(pj, gj, cfg);
    Tensor pa = align_points(pj, pj, cfg.root_joint(), ratio);
    Tensor ga = align_points(gj, gj, cfg.root_joint(), 1.0);
    for (int j = 0; j < kReportedJoints; ++j) {
      Real e = point_dist_mm(pa, ga, j);
      total += e;
      ++n;
      if (per_joint_mm) per_joint_mm->push_back(e);
    }
  }
  return total / n;
}

// Mean per-vertex position error (mm); root and scale come from the joint
// solution of the same hand.
inline Real mpvpe(const VertsPair& pred_verts, const VertsPair& gt_verts,
                  const JointsPair& pred_joints, const JointsPair& gt_joints,
                  const EvalConfig& cfg) {
  using namespace metric_detail;
  Real total = 0;
  int64_t n = 0;
  for (int h = 0; h < 2; ++h) {
    const Tensor& pv = h == 0 ? pred_verts.left : pred_verts.right;
    const Tensor& gv = h == 0 ? gt_verts.left : gt_verts.right;
    const Tensor& pj = h == 0 ? pred_joints.left : pred_joints.right;
    const Tensor& gj = h == 0 ? gt_joints.left : gt_joints.right;
    if (pv.shape[0] != gv.shape[0])
      throw_invalid("mpvpe: vertex count mismatch");
    Real ratio = gt_scale_ratio(pj, gj, cfg);
    Tensor pa = align_points(pv, pj, cfg.root_joint(), ratio);
    Tensor ga = align_points(gv, gj, cfg.root_joint(), 1.0);
    for (int i = 0; i < pv.shape[0]; ++i) {
      total += point_dist_mm(pa, ga, i);
      ++n;
    }
  }
  return total / Real(n);
}

// Error of the predicted inter-hand root translation (mm).
inline Real mrrpe(const Tensor& pred_offset, const Tensor& gt_offset) {
  Real s = 0;
  for (int c = 0; c < 3; ++c) {
    Real d = pred_offset.data[size_t(c)] - gt_offset.data[size_t(c)];
    s += d * d;
  }
  return std::sqrt(s) * 1000.0;
}

inline Real mrrpe(const TwoHandState& pred, const TwoHandState& gt) {
  Tensor po({3}), go({3});
  for (int c = 0; c < 3; ++c) {
    po.data[size_t(c)] = pred.left.joints.at(0, c) - pred.right.joints.at(0, c);
    go.data[size_t(c)] = gt.left.joints.at(0, c) - gt.right.joints.at(0, c);
  }
  return mrrpe(po, go);
}

// Mesh-image alignment accuracy: mean pixel distance between the predicted
// 2D vertices and the projected ground-truth vertices. No alignment.
inline Real miaa(const Tensor& pred_verts2d, const Tensor& gt_verts3d,
                 const WeakPerspectiveCam& gt_cam) {
  if (pred_verts2d.shape[0] != gt_verts3d.shape[0])
    throw_invalid("miaa: vertex count mismatch");
  Tensor gt2d = project(gt_verts3d, gt_cam);
  Real total = 0;
  for (int i = 0; i < pred_verts2d.shape[0]; ++i) {
    Real dx = pred_verts2d.at(i, 0) - gt2d.at(i, 0);
    Real dy = pred_verts2d.at(i, 1) - gt2d.at(i, 1);
    total += std::sqrt(dx * dx + dy * dy);
  }
  return total / pred_verts2d.shape[0];
}

struct PckCurve {
  std::vector<Real> thresholds_mm;
  std::vector<Real> values;
  Real auc = 0;
};

// PCK over a uniform threshold grid on [0, max]; AUC by the trapezoid rule
// normalized by the range.
inline PckCurve pck_auc(const std::vector<Real>& per_joint_errors_mm,
                        const EvalConfig& cfg) {
  cfg.validate();
  for (Real e : per_joint_errors_mm)
    if (e < 0) throw_invalid("pck: negative error");
  PckCurve out;
  for (int i = 0; i < cfg.pck_steps; ++i) {
    Real tau = cfg.pck_max_mm * Real(i) / (cfg.pck_steps - 1);
    int ok = 0;
    for (Real e : per_joint_errors_mm)
      if (e <= tau) ++ok;
    out.thresholds_mm.push_back(tau);
    out.values.push_back(per_joint_errors_mm.empty()
                             ? 0.0
                             : Real(ok) / Real(per_joint_errors_mm.size()));
  }
  Real integral = 0;
  for (int i = 0; i + 1 < cfg.pck_steps; ++i)
    integral += 0.5 * (out.values[size_t(i)] + out.values[size_t(i) + 1]) *
                (out.thresholds_mm[size_t(i) + 1] -
                 out.thresholds_mm[size_t(i)]);
  out.auc = integral / cfg.pck_max_mm;
  return out;
}

// ---------------------------------------------------------------------------
// interpenetration volume via voxel-center parity rays
// ---------------------------------------------------------------------------

namespace metric_detail {

// Closed-component decomposition; parity is counted per component so that
// overlapping closed parts (fingers inside the palm) union correctly.
struct ParityMesh {
  const Tensor* verts;
  const std::vector<std::array<int, 3>>* faces;
  std::vector<int> comp;  // per face
  int comp_count = 0;

  ParityMesh(const Tensor& v, const std::vector<std::array<int, 3>>& f)
      : verts(&v), faces(&f) {
    int V = v.shape[0];
    std::vector<int> uf(static_cast<size_t>(V));
    for (int i = 0; i < V; ++i) uf[size_t(i)] = i;
    std::function<int(int)> find = [&](int x) {
      while (uf[size_t(x)] != x) x = uf[size_t(x)] = uf[size_t(uf[size_t(x)])];
      return x;
    };
    for (const auto& face : f) {
      uf[size_t(find(face[0]))] = find(face[1]);
      uf[size_t(find(face[1]))] = find(face[2]);
    }
    std::map<int, int> remap;
    comp.reserve(f.size());
    for (const auto& face : f) {
      int root = find(face[0]);
      auto it = remap.find(root);
      if (it == remap.end()) it = remap.emplace(root, int(remap.size())).first;
      comp.push_back(it->second);
    }
    comp_count = int(remap.size());
  }
};

struct RayHit {
  Real x;
  int comp;
};

// Crossings of the +x ray at (y,z) with all triangles. Returns false when a
// grazing contact (edge/vertex within tolerance) makes parity ambiguous.
inline bool ray_crossings(const ParityMesh& mesh, Real ry, Real rz,
                          const std::vector<int>& candidates,
                          std::vector<RayHit>& hits) {
  hits.clear();
  const Tensor& V = *mesh.verts;
  for (int fi : candidates) {
    const auto& f = (*mesh.faces)[size_t(fi)];
    Real ay = V.at(f[0], 1), az = V.at(f[0], 2);
    Real by = V.at(f[1], 1), bz = V.at(f[1], 2);
    Real cy = V.at(f[2], 1), cz = V.at(f[2], 2);
    // 2D edge functions in the (y,z) plane
    Real e0 = (by - ay) * (rz - az) - (bz - az) * (ry - ay);
    Real e1 = (cy - by) * (rz - bz) - (cz - bz) * (ry - by);
    Real e2 = (ay - cy) * (rz - cz) - (az - cz) * (ry - cy);
    Real scale = std::max({std::abs(ay - ry), std::abs(by - ry),
                           std::abs(cy - ry), std::abs(az - rz),
                           std::abs(bz - rz), std::abs(cz - rz), Real(1e-9)});
    Real tol = 1e-12 * scale * scale;
    bool pos = e0 > tol && e1 > tol && e2 > tol;
    bool neg = e0 < -tol && e1 < -tol && e2 < -tol;
    if (pos || neg) {
      Real area = e0 + e1 + e2;
      Real w0 = e1 / area, w1 = e2 / area, w2 = e0 / area;
      Real x = w0 * V.at(f[0], 0) + w1 * V.at(f[1], 0) + w2 * V.at(f[2], 0);
      hits.push_back({x, mesh.comp[size_t(fi)]});
      continue;
    }
    // near an edge or vertex: grazing when not clearly outside
    bool clearly_out = (e0 > tol || e1 > tol || e2 > tol) &&
                       (e0 < -tol || e1 < -tol || e2 < -tol);
    if (!clearly_out) return false;
  }
  return true;
}

}  // namespace metric_detail

// Interior volume common to both meshes: both are voxelized on one grid
// anchored one voxel below the union of their bounding boxes; a voxel
// counts when its center lies inside both interiors (parity per closed
// component, +x rays, 1e-7 jitter retry on grazing). Returns cm^3.
inline Real interpenetration_volume(const HandMesh& left,
                                    const HandMesh& right, Real voxel_cm) {
  using namespace metric_detail;
  if (voxel_cm <= 0) throw_invalid("interpenetration_volume: bad voxel size");
  if (!left.faces || !right.faces)
    throw_invalid("interpenetration_volume: meshes need faces");
  for (const HandMesh* m : {&left, &right}) {
    MeshAudit a = audit_mesh(m->vertices, *m->faces);
    if (!a.closed || !a.consistent_winding)
      throw_numeric(
          "interpenetration_volume: mesh is not watertight (open or "
          "inconsistent edges)");
  }
  const Real voxel = voxel_cm / 100.0;  // meters

  Real lo[3], hi[3];
  for (int c = 0; c < 3; ++c) {
    lo[c] = std::numeric_limits<Real>::infinity();
    hi[c] = -lo[c];
  }
  for (const Tensor* v : {&left.vertices, &right.vertices})
    for (int i = 0; i < v->shape[0]; ++i)
      for (int c = 0; c < 3; ++c) {
        lo[c] = std::min(lo[c], v->at(i, c));
        hi[c] = std::max(hi[c], v->at(i, c));
      }
  if (!(lo[0] <= hi[0])) return 0.0;  // an empty mesh intersects nothing
  Real anchor[3];
  int n[3];
  for (int c = 0; c < 3; ++c) {
    anchor[c] = lo[c] - voxel;
    n[c] = int(std::ceil((hi[c] - lo[c]) / voxel)) + 2;
  }

  ParityMesh meshes[2] = {{left.vertices, *left.faces},
                          {right.vertices, *right.faces}};

  // bucket triangles by the grid columns their (y,z) bounds cover
  auto column_of = [&](Real y, Real z, int& iy, int& iz) {
    iy = int(std::floor((y - anchor[1]) / voxel));
    iz = int(std::floor((z - anchor[2]) / voxel));
  };
  std::vector<std::vector<int>> buckets[2];
  for (int m = 0; m < 2; ++m) {
    buckets[m].assign(size_t(n[1]) * size_t(n[2]), {});
    const Tensor& V = *meshes[m].verts;
    const auto& F = *meshes[m].faces;
    for (int fi = 0; fi < int(F.size()); ++fi) {
      Real ylo = 1e300, yhi = -1e300, zlo = 1e300, zhi = -1e300;
      for (int k = 0; k < 3; ++k) {
        ylo = std::min(ylo, V.at(F[size_t(fi)][size_t(k)], 1));
        yhi = std::max(yhi, V.at(F[size_t(fi)][size_t(k)], 1));
        zlo = std::min(zlo, V.at(F[size_t(fi)][size_t(k)], 2));
        zhi = std::max(zhi, V.at(F[size_t(fi)][size_t(k)], 2));
      }
      int y0, z0, y1, z1;
      column_of(ylo, zlo, y0, z0);
      column_of(yhi, zhi, y1, z1);
      for (int iy = std::max(0, y0); iy <= std::min(n[1] - 1, y1); ++iy)
        for (int iz = std::max(0, z0); iz <= std::min(n[2] - 1, z1); ++iz)
          buckets[m][size_t(iy) * size_t(n[2]) + size_t(iz)].push_back(fi);
    }
  }

  int64_t inside_both = 0;
  std::vector<RayHit> hits;
  std::vector<uint8_t> inside[2];
  for (int m = 0; m < 2; ++m) inside[m].assign(size_t(n[0]), 0);
  std::vector<int> parity;
  for (int iy = 0; iy < n[1]; ++iy) {
    for (int iz = 0; iz < n[2]; ++iz) {
      Real ry = anchor[1] + (iy + 0.5) * voxel;
      Real rz = anchor[2] + (iz + 0.5) * voxel;
      for (int m = 0; m < 2; ++m) {
        std::fill(inside[m].begin(), inside[m].end(), 0);
        const auto& cand = buckets[m][size_t(iy) * size_t(n[2]) + size_t(iz)];
        if (cand.empty()) continue;
        // jitter schedule: attempt 0 unjittered, then 1e-7-scale retries
        bool solved = false;
        std::vector<RayHit> agreed;
        bool have_result = false;
        int clean = 0;
        for (int attempt = 0; attempt < 4 && !solved; ++attempt) {
          Real jy = ry + attempt * 1e-7;
          Real jz = rz + attempt * 0.7533e-7;
          if (!ray_crossings(meshes[m], jy, jz, cand, hits)) continue;
          if (attempt == 0) {
            agreed = hits;
            have_result = true;
            solved = true;
            break;
          }
          // jittered retries must agree with each other on classification
          if (!have_result) {
            agreed = hits;
            have_result = true;
            ++clean;
          } else {
            ++clean;
            // compare per-center classification below by keeping both? a
            // cheap consistent check: same per-component crossing parity
            std::vector<int> pa(size_t(meshes[m].comp_count), 0),
                pb(size_t(meshes[m].comp_count), 0);
            for (const RayHit& h : agreed) pa[size_t(h.comp)] ^= 1;
            for (const RayHit& h : hits) pb[size_t(h.comp)] ^= 1;
            if (pa != pb)
              throw_numeric(
                  "interpenetration_volume: parity inconsistent across "
                  "jittered rays (mesh not watertight)");
          }
          if (clean >= 3) solved = true;
        }
        if (!have_result)
          throw_numeric(
              "interpenetration_volume: grazing rays persist (mesh not "
              "watertight)");
        // classify every voxel center in this column
        parity.assign(size_t(meshes[m].comp_count), 0);
        std::sort(agreed.begin(), agreed.end(),
                  [](const RayHit& a, const RayHit& b) { return a.x > b.x; });
        size_t next = 0;
        for (int ix = n[0] - 1; ix >= 0; --ix) {
          Real cx = anchor[0] + (ix + 0.5) * voxel;
          while (next < agreed.size() && agreed[next].x > cx) {
            parity[size_t(agreed[next].comp)] ^= 1;
            ++next;
          }
          uint8_t in = 0;
          for (int v : parity)
            if (v) in = 1;
          inside[m][size_t(ix)] = in;
        }
      }
      for (int ix = 0; ix < n[0]; ++ix)
        if (inside[0][size_t(ix)] && inside[1][size_t(ix)]) ++inside_both;
    }
  }
  return Real(inside_both) * voxel_cm * voxel_cm * voxel_cm;
}

// ---------------------------------------------------------------------------
// prediction/ground-truth exchange records and curve output
// ---------------------------------------------------------------------------

struct HandRecord {
  Tensor joints3d;  // (21,3) m
  Tensor verts3d;   // (V,3) m
  Tensor camera;    // (s,tx,ty)
};

struct PredictionRecord {
  int id = 0;
  HandRecord left, right;
  Tensor offset{std::vector<int>{3}};
};

namespace metric_detail {

inline nlohmann::json mat_json(const Tensor& t) {
  nlohmann::json rows = nlohmann::json::array();
  if (t.rank() == 1) {
    for (Real v : t.data) rows.push_back(v);
    return rows;
  }
  for (int i = 0; i < t.shape[0]; ++i) {
    nlohmann::json row = nlohmann::json::array();
    for (int j = 0; j < t.shape[1]; ++j) row.push_back(t.at(i, j));
    rows.push_back(row);
  }
  return rows;
}

inline Tensor mat_from_json(const nlohmann::json& j) {
  if (j.empty()) return Tensor({0});
  if (!j[0].is_array()) {
    Tensor t({int(j.size())});
    for (size_t i = 0; i < j.size(); ++i) t.data[i] = j[i].get<Real>();
    return t;
  }
  Tensor t({int(j.size()), int(j[0].size())});
  for (size_t i = 0; i < j.size(); ++i)
    for (size_t k = 0; k < j[i].size(); ++k)
      t.at(int(i), int(k)) = j[i][k].get<Real>();
  return t;
}

}  // namespace metric_detail

inline void write_prediction_records(const std::string& path,
                                     const std::vector<PredictionRecord>& rs) {
  std::ofstream out(path);
  if (!out) throw_data("cannot write " + path);
  for (const PredictionRecord& r : rs) {
    nlohmann::json j = {
        {"id", r.id},
        {"offset", metric_detail::mat_json(r.offset)},
        {"left",
         {{"joints3d", metric_detail::mat_json(r.left.joints3d)},
          {"verts3d", metric_detail::mat_json(r.left.verts3d)},
          {"camera", metric_detail::mat_json(r.left.camera)}}},
        {"right",
         {{"joints3d", metric_detail::mat_json(r.right.joints3d)},
          {"verts3d", metric_detail::mat_json(r.right.verts3d)},
          {"camera", metric_detail::mat_json(r.right.camera)}}}};
    out << j.dump() << "\n";
  }
}

inline std::vector<PredictionRecord> read_prediction_records(
    const std::string& path) {
  std::ifstream in(path);
  if (!in) throw_data("cannot read " + path);
  std::vector<PredictionRecord> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    nlohmann::json j = nlohmann::json::parse(line);
    PredictionRecord r;
    r.id = j.at("id").get<int>();
    r.offset = metric_detail::mat_from_json(j.at("offset"));
    for (int h = 0; h < 2; ++h) {
      const nlohmann::json& hj = j.at(h == 0 ? "left" : "right");
      HandRecord& hr = h == 0 ? r.left : r.right;
      hr.joints3d = metric_detail::mat_from_json(hj.at("joints3d"));
      hr.verts3d = metric_detail::mat_from_json(hj.at("verts3d"));
      hr.camera = metric_detail::mat_from_json(hj.at("camera"));
    }
    out.push_back(std::move(r));
  }
  return out;
}

inline void write_pck_csv(const std::string& path, const PckCurve& curve) {
  std::ofstream out(path);
  if (!out) throw_data("cannot write " + path);
  out << "threshold_mm,pck\n";
  char buf[64];
  for (size_t i = 0; i < curve.thresholds_mm.size(); ++i) {
    std::snprintf(buf, sizeof buf, "%.17g,%.17g\n", curve.thresholds_mm[i],
                  curve.values[i]);
    out << buf;
  }
}

struct EvalReport {
  Real mpjpe_mm = 0, mpvpe_mm = 0, mrrpe_mm = 0, miaa_px = 0;
  Real auc = 0, iv_cm3 = 0;
  PckCurve pck;
  std::vector<Real> stage_mpjpe_mm;  // one row per estimate stage
  int samples = 0;
};

}  // namespace handrec
