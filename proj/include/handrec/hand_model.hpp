#pragma once

#include <array>
#include <cstdio>
#include <fstream>
#include <map>
#include <vector>

#include "handrec/ops.hpp"

// Procedural parametric hand: a closed palm surface plus five closed finger
// tubes, skinned to a 16-joint skeleton with 21 reported joints (wrist, 15
// phalange joints, 5 fingertip marker vertices) and 10 shape directions.
namespace handrec {

constexpr int kSkinJoints = 16;    // wrist + (mcp,pip,dip) x 5
constexpr int kReportedJoints = 21;
constexpr int kShapeDims = 10;
constexpr int kFingers = 5;

inline int mcp_index(int finger) { return 1 + 3 * finger; }
inline int pip_index(int finger) { return 2 + 3 * finger; }
inline int dip_index(int finger) { return 3 + 3 * finger; }
inline int tip_index(int finger) { return 16 + finger; }
// middle-finger MCP, used by the optional MCP-aligned evaluation mode
inline int middle_mcp_index() { return mcp_index(2); }

struct HandTemplate {
  Handed handedness = Handed::left;
  Tensor vertices;                          // (V,3) rest pose, meters
  std::vector<std::array<int, 3>> faces;    // closed, outward winding
  Tensor skinning_weights;                  // (V,16), rows sum to 1
  Tensor joint_regressor;                   // (16,V)
  Tensor joint_regressor21;                 // (21,V); tips are one-hot rows
  Tensor shape_basis;                       // (10,V,3), zero-mean modes
  std::array<int, kFingers> fingertip_vertex{};
  std::array<int, kSkinJoints> parent16{};  // -1 for the wrist
  std::array<int, kReportedJoints> parent21{};
  Tensor rest_joints16;                     // (16,3)
  Tensor rest_joints21;                     // (21,3)
  Tensor aabb_min, aabb_max;                // (3), rest-pose bounds

  int vertex_count() const { return vertices.shape[0]; }
  int face_count() const { return int(faces.size()); }
};

struct HandParams {
  Tensor pose{std::vector<int>{kSkinJoints, 3}};  // axis-angle, radians
  Tensor shape{std::vector<int>{kShapeDims}};
  Tensor camera = Tensor::from({3}, {1.0, 0.0, 0.0});  // (s, tx, ty)
};

struct HandMesh {
  Tensor vertices;  // (V,3)
  Tensor joints;    // (21,3)
  const std::vector<std::array<int, 3>>* faces = nullptr;
};

// Both hands in one frame: right root-relative at the origin, left shifted
// by the inter-hand offset.
struct TwoHandState {
  HandMesh left, right;
  Tensor offset{std::vector<int>{3}};
};

// 20 bones of the 21-joint skeleton (used for bone-length rescaling).
inline const std::vector<std::pair<int, int>>& skeleton_bones() {
  static const std::vector<std::pair<int, int>> bones = [] {
    std::vector<std::pair<int, int>> b;
    for (int f = 0; f < kFingers; ++f) {
      b.push_back({0, mcp_index(f)});
      b.push_back({mcp_index(f), pip_index(f)});
      b.push_back({pip_index(f), dip_index(f)});
      b.push_back({dip_index(f), tip_index(f)});
    }
    return b;
  }();
  return bones;
}

// ---------------------------------------------------------------------------
// template construction
// ---------------------------------------------------------------------------

namespace hand_detail {

struct Vec3 {
  Real x = 0, y = 0, z = 0;
  Vec3 operator+(Vec3 o) const { return {x + o.x, y + o.y, z + o.z}; }
  Vec3 operator-(Vec3 o) const { return {x - o.x, y - o.y, z - o.z}; }
  Vec3 operator*(Real s) const { return {x * s, y * s, z * s}; }
};
inline Real dot(Vec3 a, Vec3 b) { return a.x * b.x + a.y * b.y + a.z * b.z; }
inline Vec3 cross(Vec3 a, Vec3 b) {
  return {a.y * b.z - a.z * b.y, a.z * b.x - a.x * b.z,
          a.x * b.y - a.y * b.x};
}
inline Real norm(Vec3 a) { return std::sqrt(dot(a, a)); }
inline Vec3 normalize(Vec3 a) {
  Real n = norm(a);
  return {a.x / n, a.y / n, a.z / n};
}

struct FingerSpec {
  Vec3 mcp, dir;
  Real len_prox, len_mid, len_dist;
  Real radius;
};

enum class RingRole { base, collar, mcp, prox_mid, pip, mid_mid, dip, dist_mid };

}  // namespace hand_detail

struct MeshAudit {
  bool closed = false;            // every undirected edge in exactly 2 faces
  bool consistent_winding = false;  // the two incidences are opposite
  bool oriented_outward = false;  // positive signed volume per component
  bool euler_ok = false;          // V - E + F == 2 per component
  int components = 0;
  int64_t vertices = 0, edges = 0, triangles = 0;
  bool watertight() const {
    return closed && consistent_winding && oriented_outward && euler_ok;
  }
};

inline MeshAudit audit_mesh(const Tensor& verts,
                            const std::vector<std::array<int, 3>>& faces) {
  MeshAudit a;
  a.vertices = verts.shape[0];
  a.triangles = int64_t(faces.size());
  std::map<std::pair<int, int>, std::pair<int, int>> edges;  // count, dirsum
  for (const auto& f : faces) {
    for (int e = 0; e < 3; ++e) {
      int i = f[size_t(e)], j = f[size_t((e + 1) % 3)];
      auto key = std::minmax(i, j);
      auto& ent = edges[{key.first, key.second}];
      ent.first += 1;
      ent.second += (i < j) ? 1 : -1;
    }
  }
  a.edges = int64_t(edges.size());
  a.closed = true;
  a.consistent_winding = true;
  for (auto& [k, v] : edges) {
    if (v.first != 2) a.closed = false;
    if (v.second != 0) a.consistent_winding = false;
  }

  // connected components over vertices used by faces
  int V = verts.shape[0];
  std::vector<int> uf(static_cast<size_t>(V));
  for (int i = 0; i < V; ++i) uf[size_t(i)] = i;
  std::function<int(int)> find = [&](int x) {
    while (uf[size_t(x)] != x) x = uf[size_t(x)] = uf[size_t(uf[size_t(x)])];
    return x;
  };
  for (const auto& f : faces) {
    uf[size_t(find(f[0]))] = find(f[1]);
    uf[size_t(find(f[1]))] = find(f[2]);
  }
  std::map<int, std::array<int64_t, 3>> comp;  // V,F placeholder for euler
  std::vector<bool> used(size_t(V), false);
  for (const auto& f : faces)
    for (int idx : f) used[size_t(idx)] = true;
  for (int i = 0; i < V; ++i)
    if (used[size_t(i)]) comp[find(i)][0]++;
  for (const auto& f : faces) comp[find(f[0])][1]++;
  std::map<int, int64_t> comp_edges;
  for (auto& [k, v] : edges) comp_edges[find(k.first)]++;
  a.components = int(comp.size());
  a.euler_ok = true;
  for (auto& [root, ve] : comp) {
    int64_t E = comp_edges[root];
    if (ve[0] - E + ve[1] != 2) a.euler_ok = false;
  }

  // outward orientation: signed volume of each component is positive
  std::map<int, Real> vol;
  for (const auto& f : faces) {
    hand_detail::Vec3 p[3];
    for (int k = 0; k < 3; ++k)
      p[k] = {verts.at(f[size_t(k)], 0), verts.at(f[size_t(k)], 1),
              verts.at(f[size_t(k)], 2)};
    vol[find(f[0])] +=
        dot(p[0], hand_detail::cross(p[1], p[2])) / 6.0;
  }
  a.oriented_outward = true;
  for (auto& [k, v] : vol)
    if (!(v > 0)) a.oriented_outward = false;
  return a;
}

// Builds the canonical hand. `vertex_budget` controls tessellation; the
// default of 402 is met exactly, other budgets are approached from below.
inline HandTemplate build_template(uint64_t seed, int vertex_budget = 402,
                                   Handed handed = Handed::left) {
  using namespace hand_detail;
  if (vertex_budget < 200)
    throw_invalid("build_template: vertex budget too small to close the "
                  "surface (need >= 200)");

  // tessellation: V = 40*rings + 10*palm_rows + 12
  int best_r = 3, best_p = 4, best_v = -1;
  for (int r = 3; r <= 9; ++r)
    for (int p = 4; p <= 16; ++p) {
      int v = 40 * r + 10 * p + 12;
      if (v <= vertex_budget && (v > best_v || (v == best_v && r > best_r))) {
        best_v = v;
        best_r = r;
        best_p = p;
      }
    }
  const int rings = best_r, palm_rows = best_p, ring_n = 8, palm_n = 10;

  Rng rng(derive_seed(seed, 0x4a4d));
  auto jitter = [&](Real base) { return base * rng.uniform(0.96, 1.04); };

  // proportions (meters), fingers along +y, thumb on +x, palm normal +z
  const Real palm_ax = jitter(0.042), palm_ay = jitter(0.048),
             palm_az = jitter(0.015);
  FingerSpec fingers[kFingers] = {
      {{0.040, 0.038, 0.000}, {0.62, 0.74, 0.10}, jitter(0.034), jitter(0.028),
       jitter(0.024), jitter(0.0105)},
      {{0.028, 0.085, 0.000}, {0.08, 0.99, 0.02}, jitter(0.040), jitter(0.024),
       jitter(0.020), jitter(0.0080)},
      {{0.009, 0.090, 0.000}, {0.00, 1.00, 0.00}, jitter(0.044), jitter(0.027),
       jitter(0.021), jitter(0.0082)},
      {{-0.010, 0.087, 0.000}, {-0.05, 0.99, 0.01}, jitter(0.040),
       jitter(0.025), jitter(0.020), jitter(0.0078)},
      {{-0.028, 0.080, 0.000}, {-0.12, 0.98, 0.02}, jitter(0.031),
       jitter(0.019), jitter(0.016), jitter(0.0068)},
  };
  for (auto& f : fingers) f.dir = normalize(f.dir);

  HandTemplate T;
  T.handedness = Handed::left;
  std::vector<Vec3> verts;
  std::vector<std::array<int, 3>> faces;
  // per-vertex skinning assignment: up to two (joint, weight) entries
  struct Skin {
    int j0 = 0, j1 = -1;
    Real w0 = 1, w1 = 0;
  };
  std::vector<Skin> skin;
  struct VMeta {  // shape-mode metadata
    int finger = -1;       // -1 palm
    Real arc = 0;          // distance along the chain from the MCP
    Vec3 radial{0, 0, 0};  // offset from the ring center / palm axis
  };
  std::vector<VMeta> meta;

  Tensor reg16({kSkinJoints, 0});  // resized later
  std::vector<std::vector<std::pair<int, Real>>> reg_rows(kSkinJoints);

  // --- palm: lat-long ellipsoid, poles on the y axis, bottom pole at the
  // origin (the wrist)
  const Vec3 palm_c{0, palm_ay, 0};
  int pole_bottom = int(verts.size());
  verts.push_back({0, 0, 0});
  skin.push_back({});
  meta.push_back({-1, 0, {0, 0, 0}});
  std::vector<std::vector<int>> palm_ring_idx;
  for (int r = 1; r <= palm_rows; ++r) {
    Real theta = M_PI * Real(r) / (palm_rows + 1);  // from the bottom pole
    std::vector<int> ring;
    for (int k = 0; k < palm_n; ++k) {
      Real phi = 2 * M_PI * k / palm_n;
      Vec3 p{palm_ax * std::sin(theta) * std::cos(phi),
             palm_ay - palm_ay * std::cos(theta),
             palm_az * std::sin(theta) * std::sin(phi)};
      ring.push_back(int(verts.size()));
      verts.push_back(p);
      skin.push_back({});
      meta.push_back({-1, 0, p - palm_c});
    }
    palm_ring_idx.push_back(ring);
  }
  int pole_top = int(verts.size());
  verts.push_back({0, 2 * palm_ay, 0});
  skin.push_back({});
  meta.push_back({-1, 0, Vec3{0, 2 * palm_ay, 0} - palm_c});

  auto tri = [&](int a, int b, int c) { faces.push_back({a, b, c}); };
  for (int k = 0; k < palm_n; ++k) {
    int k1 = (k + 1) % palm_n;
    tri(pole_bottom, palm_ring_idx[0][size_t(k1)], palm_ring_idx[0][size_t(k)]);
  }
  for (size_t r = 0; r + 1 < palm_ring_idx.size(); ++r)
    for (int k = 0; k < palm_n; ++k) {
      int k1 = (k + 1) % palm_n;
      int a = palm_ring_idx[r][size_t(k)], b = palm_ring_idx[r][size_t(k1)];
      int c = palm_ring_idx[r + 1][size_t(k1)],
          d = palm_ring_idx[r + 1][size_t(k)];
      tri(a, b, c);
      tri(a, c, d);
    }
  for (int k = 0; k < palm_n; ++k) {
    int k1 = (k + 1) % palm_n;
    tri(pole_top, palm_ring_idx.back()[size_t(k)],
        palm_ring_idx.back()[size_t(k1)]);
  }
  reg_rows[0].push_back({pole_bottom, 1.0});  // wrist is the bottom pole

  // --- fingers: stacked rings closed by two cone caps
  using hand_detail::RingRole;
  for (int f = 0; f < kFingers; ++f) {
    const FingerSpec& fs = fingers[f];
    Vec3 u = cross(fs.dir, Vec3{0, 0, 1});
    if (norm(u) < 1e-6) u = cross(fs.dir, Vec3{1, 0, 0});
    u = normalize(u);
    Vec3 v = cross(fs.dir, u);

    Vec3 p_mcp = fs.mcp;
    Vec3 p_pip = fs.mcp + fs.dir * fs.len_prox;
    Vec3 p_dip = p_pip + fs.dir * fs.len_mid;
    Vec3 p_tip = p_dip + fs.dir * fs.len_dist;

    struct RingDef {
      RingRole role;
      Vec3 center;
      Real rad;
      Real arc;  // along-chain coordinate from the MCP
    };
    std::vector<RingDef> defs;
    Real back = 0.015;
    defs.push_back({RingRole::mcp, p_mcp, fs.radius, 0});
    defs.push_back({RingRole::pip, p_pip, fs.radius * 0.92, fs.len_prox});
    defs.push_back(
        {RingRole::dip, p_dip, fs.radius * 0.82, fs.len_prox + fs.len_mid});
    if (rings >= 4)
      defs.push_back({RingRole::base, fs.mcp - fs.dir * back,
                      fs.radius * 0.95, -back});
    if (rings >= 5)
      defs.push_back({RingRole::prox_mid, fs.mcp + fs.dir * (fs.len_prox / 2),
                      fs.radius * 0.96, fs.len_prox / 2});
    if (rings >= 6)
      defs.push_back({RingRole::mid_mid, p_pip + fs.dir * (fs.len_mid / 2),
                      fs.radius * 0.87, fs.len_prox + fs.len_mid / 2});
    if (rings >= 7)
      defs.push_back({RingRole::dist_mid, p_dip + fs.dir * (fs.len_dist / 2),
                      fs.radius * 0.72,
                      fs.len_prox + fs.len_mid + fs.len_dist / 2});
    if (rings >= 8)
      defs.push_back({RingRole::collar, fs.mcp - fs.dir * (back / 2),
                      fs.radius, -back / 2});
    if (rings >= 9)
      defs.push_back({RingRole::prox_mid,
                      fs.mcp + fs.dir * (fs.len_prox * 0.75),
                      fs.radius * 0.94, fs.len_prox * 0.75});
    std::sort(defs.begin(), defs.end(),
              [](const RingDef& a, const RingDef& b) { return a.arc < b.arc; });

    int jm = mcp_index(f), jp = pip_index(f), jd = dip_index(f);
    auto ring_skin = [&](RingRole role) -> Skin {
      switch (role) {
        case RingRole::base:
        case RingRole::collar: return {0, -1, 1, 0};
        case RingRole::mcp: return {0, jm, 0.5, 0.5};
        case RingRole::prox_mid: return {jm, -1, 1, 0};
        case RingRole::pip: return {jm, jp, 0.5, 0.5};
        case RingRole::mid_mid: return {jp, -1, 1, 0};
        case RingRole::dip: return {jp, jd, 0.5, 0.5};
        case RingRole::dist_mid: return {jd, -1, 1, 0};
      }
      return {};
    };

    std::vector<std::vector<int>> ring_idx;
    for (const RingDef& rd : defs) {
      std::vector<int> ring;
      for (int k = 0; k < ring_n; ++k) {
        Real phi = 2 * M_PI * k / ring_n;
        Vec3 off = u * (rd.rad * std::cos(phi)) + v * (rd.rad * std::sin(phi));
        ring.push_back(int(verts.size()));
        verts.push_back(rd.center + off);
        skin.push_back(ring_skin(rd.role));
        meta.push_back({f, std::max<Real>(rd.arc, 0.0), off});
      }
      ring_idx.push_back(ring);
      int jrow = rd.role == RingRole::mcp   ? jm
                 : rd.role == RingRole::pip ? jp
                 : rd.role == RingRole::dip ? jd
                                            : -1;
      if (jrow >= 0)
        for (int idx : ring) reg_rows[size_t(jrow)].push_back({idx, 1.0 / ring_n});
    }

    Vec3 base_center = defs.front().center;
    int apex_base = int(verts.size());
    verts.push_back(base_center - fs.dir * (defs.front().rad * 0.9));
    skin.push_back(ring_skin(defs.front().role));
    meta.push_back({f, std::max<Real>(defs.front().arc, 0.0), {0, 0, 0}});
    int apex_tip = int(verts.size());
    verts.push_back(p_tip);
    skin.push_back({jd, -1, 1, 0});
    meta.push_back({f, fs.len_prox + fs.len_mid + fs.len_dist, {0, 0, 0}});
    T.fingertip_vertex[size_t(f)] = apex_tip;

    for (int k = 0; k < ring_n; ++k) {
      int k1 = (k + 1) % ring_n;
      tri(apex_base, ring_idx.front()[size_t(k1)], ring_idx.front()[size_t(k)]);
    }
    for (size_t r = 0; r + 1 < ring_idx.size(); ++r)
      for (int k = 0; k < ring_n; ++k) {
        int k1 = (k + 1) % ring_n;
        int a = ring_idx[r][size_t(k)], b = ring_idx[r][size_t(k1)];
        int c = ring_idx[r + 1][size_t(k1)], d = ring_idx[r + 1][size_t(k)];
        tri(a, b, c);
        tri(a, c, d);
      }
    for (int k = 0; k < ring_n; ++k) {
      int k1 = (k + 1) % ring_n;
      tri(apex_tip, ring_idx.back()[size_t(k)], ring_idx.back()[size_t(k1)]);
    }
  }

  const int V = int(verts.size());
  T.vertices = Tensor({V, 3});
  for (int i = 0; i < V; ++i) {
    T.vertices.at(i, 0) = verts[size_t(i)].x;
    T.vertices.at(i, 1) = verts[size_t(i)].y;
    T.vertices.at(i, 2) = verts[size_t(i)].z;
  }
  T.faces = std::move(faces);

  // fix outward orientation per connected component via signed volume
  {
    MeshAudit a = audit_mesh(T.vertices, T.faces);
    if (!a.oriented_outward) {
      // flip whole components with negative volume
      std::vector<int> uf(static_cast<size_t>(V));
      for (int i = 0; i < V; ++i) uf[size_t(i)] = i;
      std::function<int(int)> find = [&](int x) {
        while (uf[size_t(x)] != x)
          x = uf[size_t(x)] = uf[size_t(uf[size_t(x)])];
        return x;
      };
      for (const auto& f : T.faces) {
        uf[size_t(find(f[0]))] = find(f[1]);
        uf[size_t(find(f[1]))] = find(f[2]);
      }
      std::map<int, Real> vol;
      for (const auto& f : T.faces) {
        Vec3 p[3];
        for (int k = 0; k < 3; ++k)
          p[k] = verts[size_t(f[size_t(k)])];
        vol[find(f[0])] += dot(p[0], cross(p[1], p[2])) / 6.0;
      }
      for (auto& f : T.faces)
        if (vol[find(f[0])] < 0) std::swap(f[1], f[2]);
    }
  }

  // skinning weights
  T.skinning_weights = Tensor({V, kSkinJoints});
  for (int i = 0; i < V; ++i) {
    const Skin& s = skin[size_t(i)];
    T.skinning_weights.at(i, s.j0) += s.w0;
    if (s.j1 >= 0) T.skinning_weights.at(i, s.j1) += s.w1;
  }

  // regressor and declared rest skeleton
  T.joint_regressor = Tensor({kSkinJoints, V});
  for (int j = 0; j < kSkinJoints; ++j)
    for (auto& [idx, w] : reg_rows[size_t(j)])
      T.joint_regressor.at(j, idx) += w;
  T.rest_joints16 = Tensor({kSkinJoints, 3});
  for (int j = 0; j < kSkinJoints; ++j)
    for (int i = 0; i < V; ++i) {
      Real w = T.joint_regressor.at(j, i);
      if (w == 0.0) continue;
      for (int c = 0; c < 3; ++c)
        T.rest_joints16.at(j, c) += w * T.vertices.at(i, c);
    }

  T.joint_regressor21 = Tensor({kReportedJoints, V});
  for (int j = 0; j < kSkinJoints; ++j)
    for (int i = 0; i < V; ++i)
      T.joint_regressor21.at(j, i) = T.joint_regressor.at(j, i);
  for (int f = 0; f < kFingers; ++f)
    T.joint_regressor21.at(tip_index(f), T.fingertip_vertex[size_t(f)]) = 1.0;
  T.rest_joints21 = Tensor({kReportedJoints, 3});
  for (int j = 0; j < kReportedJoints; ++j)
    for (int i = 0; i < V; ++i) {
      Real w = T.joint_regressor21.at(j, i);
      if (w == 0.0) continue;
      for (int c = 0; c < 3; ++c)
        T.rest_joints21.at(j, c) += w * T.vertices.at(i, c);
    }

  // parents
  T.parent16[0] = -1;
  T.parent21[0] = -1;
  for (int f = 0; f < kFingers; ++f) {
    T.parent16[size_t(mcp_index(f))] = 0;
    T.parent16[size_t(pip_index(f))] = mcp_index(f);
    T.parent16[size_t(dip_index(f))] = pip_index(f);
    T.parent21[size_t(mcp_index(f))] = 0;
    T.parent21[size_t(pip_index(f))] = mcp_index(f);
    T.parent21[size_t(dip_index(f))] = pip_index(f);
    T.parent21[size_t(tip_index(f))] = dip_index(f);
  }

  // shape directions: bone length / thickness modes, zero-mean per mode
  T.shape_basis = Tensor({kShapeDims, V, 3});
  auto set_mode = [&](int b, int i, Vec3 d) {
    T.shape_basis.at(b, i, 0) = d.x;
    T.shape_basis.at(b, i, 1) = d.y;
    T.shape_basis.at(b, i, 2) = d.z;
  };
  Real palm_top = 2 * palm_ay;
  for (int i = 0; i < V; ++i) {
    const VMeta& m = meta[size_t(i)];
    Vec3 p = verts[size_t(i)];
    set_mode(0, i, p * 0.06);  // global scale
    if (m.finger >= 0)
      set_mode(1 + m.finger, i, fingers[size_t(m.finger)].dir * (0.15 * m.arc));
    set_mode(6, i, {0.08 * p.x, 0, 0});  // width / spread
    if (m.finger >= 0)
      set_mode(7, i, m.radial * 0.20);  // thickness
    else
      set_mode(7, i, {0, 0, 0.20 * p.z});
    if (m.finger >= 0) {
      Real beyond = std::max<Real>(
          0.0, m.arc - fingers[size_t(m.finger)].len_prox);
      set_mode(8, i, fingers[size_t(m.finger)].dir * (0.10 * beyond));
    }
    set_mode(9, i, {0, 0.08 * std::min(p.y, palm_top), 0});
  }
  for (int b = 0; b < kShapeDims; ++b)
    for (int c = 0; c < 3; ++c) {
      Real mean = 0;
      for (int i = 0; i < V; ++i) mean += T.shape_basis.at(b, i, c);
      mean /= V;
      for (int i = 0; i < V; ++i) T.shape_basis.at(b, i, c) -= mean;
    }

  T.aabb_min = Tensor({3});
  T.aabb_max = Tensor({3});
  for (int c = 0; c < 3; ++c) {
    Real lo = 1e9, hi = -1e9;
    for (int i = 0; i < V; ++i) {
      lo = std::min(lo, T.vertices.at(i, c));
      hi = std::max(hi, T.vertices.at(i, c));
    }
    T.aabb_min.data[size_t(c)] = lo;
    T.aabb_max.data[size_t(c)] = hi;
  }

  if (handed == Handed::right) {
    T.handedness = Handed::right;
    for (int i = 0; i < V; ++i) T.vertices.at(i, 0) *= -1;
    for (auto& f : T.faces) std::swap(f[1], f[2]);
    for (int j = 0; j < kSkinJoints; ++j) T.rest_joints16.at(j, 0) *= -1;
    for (int j = 0; j < kReportedJoints; ++j) T.rest_joints21.at(j, 0) *= -1;
    for (int b = 0; b < kShapeDims; ++b)
      for (int i = 0; i < V; ++i) T.shape_basis.at(b, i, 0) *= -1;
    std::swap(T.aabb_min.data[0], T.aabb_max.data[0]);
    T.aabb_min.data[0] *= -1;
    T.aabb_max.data[0] *= -1;
  }
  return T;
}

// ---------------------------------------------------------------------------
// LBS forward pass (tape ops; a fresh throwaway tape gives the plain version)
// ---------------------------------------------------------------------------

struct LbsVars {
  Var vertices;  // (V,3)
  Var joints21;  // (21,3)
};

namespace hand_detail {
inline Var row3(Tape& t, Var mat, int r) {  // (n,3) -> (1,3)
  return ops::slice0(t, mat, r, r + 1);
}
}  // namespace hand_detail

// Differentiable LBS: shape blend, forward kinematics through Rodrigues
// rotations, skinning-weighted rigid transforms, joint regression.
// The template must outlive the tape.
inline LbsVars lbs_forward_t(Tape& t, const HandTemplate& tmpl, Var pose,
                             Var shape) {
  using namespace ops;
  const Tensor& P = t.val(pose);
  const Tensor& S = t.val(shape);
  if (P.rank() != 2 || P.shape[0] != kSkinJoints || P.shape[1] != 3)
    throw_invalid("lbs_forward: pose must be (16,3)");
  if (S.numel() != kShapeDims)
    throw_invalid("lbs_forward: shape must have 10 coefficients");
  if (!P.all_finite() || !S.all_finite())
    throw_invalid("lbs_forward: non-finite parameters");

  int V = tmpl.vertex_count();
  Var verts0 = t.external(&tmpl.vertices, false);
  Var basis = t.external(&tmpl.shape_basis, false);
  Var reg16 = t.external(&tmpl.joint_regressor, false);
  Var reg21 = t.external(&tmpl.joint_regressor21, false);

  // shaped rest vertices: verts + sum_b beta_b * basis_b
  Var beta_row = reshape(t, shape, {1, kShapeDims});
  Var basis_mat = reshape(t, basis, {kShapeDims, V * 3});
  Var blend = reshape(t, matmul(t, beta_row, basis_mat), {V, 3});
  Var shaped = add(t, verts0, blend);

  Var jrest = matmul(t, reg16, shaped);  // (16,3)

  // forward kinematics
  std::vector<Var> rot_global(kSkinJoints), pos_global(kSkinJoints);
  for (int k = 0; k < kSkinJoints; ++k) {
    Var aa = reshape(t, hand_detail::row3(t, pose, k), {3});
    Var R = rodrigues(t, aa);
    int par = tmpl.parent16[size_t(k)];
    if (par < 0) {
      rot_global[size_t(k)] = R;
      pos_global[size_t(k)] = hand_detail::row3(t, jrest, k);
    } else {
      rot_global[size_t(k)] = matmul(t, rot_global[size_t(par)], R);
      Var d = sub(t, hand_detail::row3(t, jrest, k),
                  hand_detail::row3(t, jrest, par));
      Var moved = matmul(t, rot_global[size_t(par)], d, false, true);  // (3,1)
      pos_global[size_t(k)] =
          add(t, pos_global[size_t(par)], transpose2d(t, moved));
    }
  }
  Var rg = reshape(t, rot_global[0], {1, 3, 3});
  Var jp = pos_global[0];
  for (int k = 1; k < kSkinJoints; ++k) {
    rg = concat0(t, rg, reshape(t, rot_global[size_t(k)], {1, 3, 3}));
    jp = concat0(t, jp, pos_global[size_t(k)]);
  }

  LbsVars out;
  out.vertices = lbs_blend(t, rg, jrest, jp, shaped, tmpl.skinning_weights);
  out.joints21 = matmul(t, reg21, out.vertices);
  return out;
}

inline HandMesh lbs_forward(const HandTemplate& tmpl, const HandParams& p) {
  Tape t;
  Var pose = t.input(p.pose, false);
  Var shape = t.input(p.shape, false);
  LbsVars v = lbs_forward_t(t, tmpl, pose, shape);
  HandMesh m;
  m.vertices = t.val(v.vertices);
  m.joints = t.val(v.joints21);
  m.faces = &tmpl.faces;
  return m;
}

// 16 regressed joints + 5 fingertip markers, wrist first.
inline Tensor joints_21(const HandTemplate& tmpl, const Tensor& verts) {
  Tensor out({kReportedJoints, 3});
  for (int j = 0; j < kReportedJoints; ++j)
    for (int i = 0; i < tmpl.vertex_count(); ++i) {
      Real w = tmpl.joint_regressor21.at(j, i);
      if (w == 0.0) continue;
      for (int c = 0; c < 3; ++c) out.at(j, c) += w * verts.at(i, c);
    }
  return out;
}

inline Tensor joints_21(const HandMesh& mesh) { return mesh.joints; }

// Right hand stays root-relative at the origin; left is translated by the
// offset. Roots are the wrist joints.
inline TwoHandState compose_two_hands(const HandMesh& left,
                                      const HandMesh& right,
                                      const Tensor& offset) {
  if (offset.numel() != 3 || !offset.all_finite())
    throw_invalid("compose_two_hands: offset must be a finite 3-vector");
  TwoHandState st;
  st.offset = offset;
  auto shift = [](const HandMesh& m, const Real d[3]) {
    HandMesh out = m;
    for (int i = 0; i < out.vertices.shape[0]; ++i)
      for (int c = 0; c < 3; ++c) out.vertices.at(i, c) += d[c];
    for (int j = 0; j < out.joints.shape[0]; ++j)
      for (int c = 0; c < 3; ++c) out.joints.at(j, c) += d[c];
    return out;
  };
  Real dl[3], dr[3];
  for (int c = 0; c < 3; ++c) {
    dl[c] = offset.data[size_t(c)] - left.joints.at(0, c);
    dr[c] = -right.joints.at(0, c);
  }
  st.left = shift(left, dl);
  st.right = shift(right, dr);
  return st;
}

// ---------------------------------------------------------------------------
// pose limits (per-joint axis-angle bounds used by the scene sampler)
// ---------------------------------------------------------------------------

struct PoseLimits {
  Tensor lo{std::vector<int>{kSkinJoints, 3}};
  Tensor hi{std::vector<int>{kSkinJoints, 3}};
};

inline PoseLimits default_pose_limits(Handed handed = Handed::left) {
  PoseLimits L;
  auto set = [&](int j, Real lx, Real hx, Real ly, Real hy, Real lz, Real hz) {
    L.lo.at(j, 0) = lx;
    L.hi.at(j, 0) = hx;
    L.lo.at(j, 1) = ly;
    L.hi.at(j, 1) = hy;
    L.lo.at(j, 2) = lz;
    L.hi.at(j, 2) = hz;
  };
  set(0, -0.9, 0.9, -0.9, 0.9, -0.9, 0.9);  // global wrist rotation
  for (int f = 0; f < kFingers; ++f) {
    if (f == 0) {
      set(mcp_index(f), -1.0, 0.4, -0.4, 0.4, -0.7, 0.7);
      set(pip_index(f), -1.1, 0.1, -0.1, 0.1, -0.2, 0.2);
      set(dip_index(f), -1.0, 0.1, -0.05, 0.05, -0.05, 0.05);
    } else {
      set(mcp_index(f), -1.6, 0.25, -0.1, 0.1, -0.3, 0.3);
      set(pip_index(f), -1.8, 0.1, -0.05, 0.05, -0.05, 0.05);
      set(dip_index(f), -1.4, 0.1, -0.05, 0.05, -0.05, 0.05);
    }
  }
  if (handed == Handed::right) {
    // mirror conjugation: (wx,wy,wz) -> (wx,-wy,-wz)
    for (int j = 0; j < kSkinJoints; ++j)
      for (int c = 1; c < 3; ++c) {
        Real lo = L.lo.at(j, c), hi = L.hi.at(j, c);
        L.lo.at(j, c) = -hi;
        L.hi.at(j, c) = -lo;
      }
  }
  return L;
}

// ---------------------------------------------------------------------------
// OBJ export
// ---------------------------------------------------------------------------

inline void write_obj(const std::string& path, const Tensor& verts,
                      const std::vector<std::array<int, 3>>& faces) {
  std::ofstream out(path);
  if (!out) throw_data("write_obj: cannot open " + path);
  char buf[128];
  for (int i = 0; i < verts.shape[0]; ++i) {
    std::snprintf(buf, sizeof buf, "v %.6f %.6f %.6f\n", verts.at(i, 0),
                  verts.at(i, 1), verts.at(i, 2));
    out << buf;
  }
  for (const auto& f : faces)
    out << "f " << f[0] + 1 << " " << f[1] + 1 << " " << f[2] + 1 << "\n";
}

struct ObjData {
  Tensor vertices;
  std::vector<std::array<int, 3>> faces;
};

inline ObjData read_obj(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw_data("read_obj: cannot open " + path);
  std::vector<Real> vs;
  ObjData d;
  std::string tok;
  while (in >> tok) {
    if (tok == "v") {
      Real x, y, z;
      in >> x >> y >> z;
      vs.insert(vs.end(), {x, y, z});
    } else if (tok == "f") {
      int a, b, c;
      in >> a >> b >> c;
      d.faces.push_back({a - 1, b - 1, c - 1});
    } else {
      std::string skip;
      std::getline(in, skip);
    }
  }
  int count = int(vs.size() / 3);
  d.vertices = Tensor({count, 3}, std::move(vs));
  return d;
}

}  // namespace handrec
