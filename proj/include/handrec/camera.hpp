#pragma once

#include "handrec/ops.hpp"

// Weak-perspective projection, joint-wise feature sampling, coordinate
// encoding and multi-plane feature projection.
namespace handrec {

struct WeakPerspectiveCam {
  Real s = 1.0;  // pixels per meter
  Real tx = 0.0, ty = 0.0;

  Tensor as_tensor() const { return Tensor::from({3}, {s, tx, ty}); }
  static WeakPerspectiveCam from_tensor(const Tensor& t) {
    return {t.data[0], t.data[1], t.data[2]};
  }
};

// (u,v) = (s*x + tx, s*y + ty); z discarded.
inline Tensor project(const Tensor& coords3d, const WeakPerspectiveCam& cam) {
  if (!(cam.s > 0)) throw_invalid("project: camera scale must be positive");
  Tape t;
  Var p = ops::project_points(t, t.input(coords3d, false),
                              t.input(cam.as_tensor(), false));
  return t.val(p);
}

inline Var project_t(Tape& t, Var coords3d, Var cam) {
  return ops::project_points(t, coords3d, cam);
}

// Image pixel coordinates -> feature-grid coordinates, align-corners-false
// (pixel centers at half-integers in continuous image space, at integers in
// grid sample space).
inline Var to_grid_coords_t(Tape& t, Var coords2d, Real image_size,
                            Real grid_size) {
  return ops::add_scalar(t, ops::scale(t, coords2d, grid_size / image_size),
                         -0.5);
}

inline Tensor to_grid_coords(const Tensor& coords2d, Real image_size,
                             Real grid_size) {
  Tensor out = coords2d;
  for (Real& v : out.data) v = v * (grid_size / image_size) - 0.5;
  return out;
}

// Joint-wise feature sampling: per-joint bilinear read from a (C,H,W) map at
// (J,2) grid coordinates; off-grid coordinates clamp to the border.
inline Tensor sample_joint_features(const Tensor& fmap,
                                    const Tensor& coords2d) {
  if (!fmap.all_finite())
    throw_invalid("sample_joint_features: non-finite feature map");
  Tape t;
  Var f = ops::bilinear_sample(t, t.input(fmap, false),
                               t.input(coords2d, false));
  return t.val(f);
}

inline Var sample_joint_features_t(Tape& t, Var fmap, Var coords2d) {
  return ops::bilinear_sample(t, fmap, coords2d);
}

// Learned affine embedding of 3D joint coordinates into joint feature
// channels: weight (C,3), bias (C), coords (J,3) -> features (C,J).
inline Var encode_coords_t(Tape& t, Var coords3d, Var weight, Var bias) {
  return ops::add_col_bias(t, ops::matmul(t, weight, coords3d, false, true),
                           bias);
}

inline Tensor encode_coords(const Tensor& coords3d, const Tensor& weight,
                            const Tensor& bias) {
  Tape t;
  Var f = encode_coords_t(t, t.input(coords3d, false),
                          t.input(weight, false), t.input(bias, false));
  return t.val(f);
}

struct JointFeatureSet {
  Tensor features;  // (C,J)
  Tensor coords3d;  // (J,3) meters
  Tensor coords2d;  // (J,2) pixels (image space)
  Handed hand = Handed::left;
};

// Multi-plane feature projecting: every joint feature is splatted into its
// own C-channel plane at its 2D grid coordinate; the 2J planes (left hand
// first, then right, fixed joint order) are concatenated channel-wise so
// features of different joints never mix. Coordinates are grid coordinates.
inline Var multi_plane_project_t(Tape& t, Var feats_left, Var feats_right,
                                 Var coords_left, Var coords_right, int H,
                                 int W) {
  if (H > 32 || W > 32)
    throw_invalid("multi_plane_project: target resolution capped at 32x32");
  Var feats = ops::concat_cols(t, feats_left, feats_right);
  Var coords = ops::concat0(t, coords_left, coords_right);
  return ops::splat_planes(t, feats, coords, H, W);
}

inline Tensor multi_plane_project(const JointFeatureSet& left,
                                  const JointFeatureSet& right, int H, int W,
                                  Real image_size) {
  Tape t;
  Var out = multi_plane_project_t(
      t, t.input(left.features, false), t.input(right.features, false),
      t.input(to_grid_coords(left.coords2d, image_size, Real(W)), false),
      t.input(to_grid_coords(right.coords2d, image_size, Real(W)), false), H,
      W);
  return t.val(out);
}

}  // namespace handrec
