#pragma once

#include "handrec/camera.hpp"
#include "handrec/hand_model.hpp"

// Z-buffer triangle rasterizer for the synthetic scene generator: produces
// the 3-channel geometric image (left mask, right mask, normalized inverse
// depth) plus ground-truth segmentation and dense-correspondence maps.
namespace handrec {

struct RasterOutput {
  Tensor image;  // (3,H,W): left mask, right mask, inverse depth in [0,1]
  Tensor seg;    // (2,H,W)
  Tensor corr;   // (3,H,W) canonical template coordinates in [-1,1]
};

// Per-vertex canonical coordinates of the rest template, each axis mapped to
// [-1,1] over the template's AABB. Mirror templates give x-negated values.
inline Tensor canonical_coords(const HandTemplate& tmpl) {
  Tensor out({tmpl.vertex_count(), 3});
  for (int c = 0; c < 3; ++c) {
    Real lo = tmpl.aabb_min.data[size_t(c)], hi = tmpl.aabb_max.data[size_t(c)];
    Real center = 0.5 * (lo + hi), half = 0.5 * (hi - lo);
    for (int i = 0; i < tmpl.vertex_count(); ++i)
      out.at(i, c) = (tmpl.vertices.at(i, c) - center) / half;
  }
  return out;
}

// Rasterizes a composed two-hand state. Pixels are covered when their center
// falls inside a projected triangle; the nearest surface (smallest camera z)
// wins. Each hand projects its root-relative vertices through its own
// camera; depth comes from the composed coordinates plus `z_offset`.
inline RasterOutput rasterize(const TwoHandState& state,
                              const WeakPerspectiveCam& cam_left,
                              const WeakPerspectiveCam& cam_right, int H,
                              int W, const Tensor* canon_left = nullptr,
                              const Tensor* canon_right = nullptr,
                              Real z_offset = 0.45) {
  RasterOutput out;
  out.image = Tensor({3, H, W});
  out.seg = Tensor({2, H, W});
  out.corr = Tensor({3, H, W});
  std::vector<Real> zbuf(size_t(H) * W,
                         std::numeric_limits<Real>::infinity());
  std::vector<int8_t> owner(size_t(H) * W, -1);

  for (int h = 0; h < 2; ++h) {
    const HandMesh& mesh = h == 0 ? state.left : state.right;
    const WeakPerspectiveCam& cam = h == 0 ? cam_left : cam_right;
    const Tensor* canon = h == 0 ? canon_left : canon_right;
    if (!mesh.faces) continue;
    int V = mesh.vertices.shape[0];
    std::vector<Real> px(static_cast<size_t>(V)), py(static_cast<size_t>(V)), pz(static_cast<size_t>(V));
    for (int i = 0; i < V; ++i) {
      Real x = mesh.vertices.at(i, 0), y = mesh.vertices.at(i, 1);
      if (h == 0) {  // left camera expects root-relative coordinates
        x -= state.offset.data[0];
        y -= state.offset.data[1];
      }
      px[size_t(i)] = cam.s * x + cam.tx;
      py[size_t(i)] = cam.s * y + cam.ty;
      pz[size_t(i)] = mesh.vertices.at(i, 2) + z_offset;
    }
    for (const auto& f : *mesh.faces) {
      Real ax = px[size_t(f[0])], ay = py[size_t(f[0])];
      Real bx = px[size_t(f[1])], by = py[size_t(f[1])];
      Real cx = px[size_t(f[2])], cy = py[size_t(f[2])];
      Real area = (bx - ax) * (cy - ay) - (by - ay) * (cx - ax);
      if (area == 0.0) continue;
      int x0 = std::max(0, int(std::floor(std::min({ax, bx, cx}) - 0.5)));
      int x1 = std::min(W - 1, int(std::ceil(std::max({ax, bx, cx}))));
      int y0 = std::max(0, int(std::floor(std::min({ay, by, cy}) - 0.5)));
      int y1 = std::min(H - 1, int(std::ceil(std::max({ay, by, cy}))));
      for (int y = y0; y <= y1; ++y) {
        Real qy = y + 0.5;
        for (int x = x0; x <= x1; ++x) {
          Real qx = x + 0.5;
          Real w0 = (bx - ax) * (qy - ay) - (by - ay) * (qx - ax);
          Real w1 = (cx - bx) * (qy - by) - (cy - by) * (qx - bx);
          Real w2 = (ax - cx) * (qy - cy) - (ay - cy) * (qx - cx);
          bool inside = area > 0 ? (w0 >= 0 && w1 >= 0 && w2 >= 0)
                                 : (w0 <= 0 && w1 <= 0 && w2 <= 0);
          if (!inside) continue;
          // barycentric weights: w1 is opposite vertex a, etc.
          Real ba = w1 / area, bb = w2 / area, bc = w0 / area;
          Real z = ba * pz[size_t(f[0])] + bb * pz[size_t(f[1])] +
                   bc * pz[size_t(f[2])];
          size_t idx = size_t(y) * W + size_t(x);
          if (z < zbuf[idx]) {
            zbuf[idx] = z;
            owner[idx] = int8_t(h);
            if (canon)
              for (int c = 0; c < 3; ++c)
                out.corr.at(c, y, x) = ba * canon->at(f[0], c) +
                                       bb * canon->at(f[1], c) +
                                       bc * canon->at(f[2], c);
          }
        }
      }
    }
  }

  // masks + normalized inverse depth over the covered support
  Real inv_min = std::numeric_limits<Real>::infinity(), inv_max = -inv_min;
  for (size_t i = 0; i < zbuf.size(); ++i) {
    if (owner[i] < 0) continue;
    Real inv = 1.0 / zbuf[i];
    inv_min = std::min(inv_min, inv);
    inv_max = std::max(inv_max, inv);
  }
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x) {
      size_t idx = size_t(y) * W + size_t(x);
      if (owner[idx] < 0) continue;
      out.image.at(owner[idx], y, x) = 1.0;
      out.seg.at(owner[idx], y, x) = 1.0;
      Real inv = 1.0 / zbuf[idx];
      Real norm = inv_max > inv_min ? (inv - inv_min) / (inv_max - inv_min)
                                    : 1.0;
      out.image.at(2, y, x) = norm;
    }
  return out;
}

}  // namespace handrec
