#pragma once

#include "handrec/camera.hpp"
#include "handrec/hand_model.hpp"
#include "handrec/interaction.hpp"
#include "handrec/losses.hpp"
#include "handrec/metrics.hpp"
#include "handrec/synth.hpp"

// Fast invariant suite behind the `check` CLI subcommand: a curated subset
// of the mechanism guarantees, each reduced to a few seconds of work.
namespace handrec {

struct CheckResult {
  std::string name;
  bool ok;
  std::string detail;
};

inline std::vector<CheckResult> run_selfchecks() {
  std::vector<CheckResult> results;
  auto push = [&](std::string name, bool ok, std::string detail = "") {
    results.push_back({std::move(name), ok, std::move(detail)});
  };

  HandTemplate L = build_template(7, 402, Handed::left);
  HandTemplate R = build_template(7, 402, Handed::right);

  {
    MeshAudit a = audit_mesh(L.vertices, L.faces);
    MeshAudit b = audit_mesh(R.vertices, R.faces);
    push("template watertight and oriented", a.watertight() && b.watertight(),
         "components=" + std::to_string(a.components));
  }
  {
    HandParams rest;
    HandMesh m = lbs_forward(L, rest);
    push("rest pose reproduces template bitwise",
         bitwise_equal(m.vertices, L.vertices));
  }
  {
    Tensor j = joints_21(L, L.vertices);
    push("joint regressor matches declared skeleton",
         max_abs_diff(j, L.rest_joints21) < 1e-9);
  }
  {
    // finite-difference spot check through projection + sampling
    Rng rng(3);
    Tensor fmap = randn({3, 8, 8}, rng);
    Tensor coords({4, 2});
    for (int i = 0; i < 4; ++i) {
      coords.at(i, 0) = 1.3 + 1.1 * i;
      coords.at(i, 1) = 4.7 - 0.8 * i;
    }
    Tape t;
    Var f = t.input(fmap, true), c = t.input(coords, true);
    Var loss = ops::sum(
        t, ops::mul(t, ops::bilinear_sample(t, f, c),
                    ops::bilinear_sample(t, f, c)));
    t.backward(loss);
    Real worst = 0;
    Real h = 1e-5;
    for (int i = 0; i < 8; ++i) {
      Tensor fp = coords, fm = coords;
      fp.data[size_t(i)] += h;
      fm.data[size_t(i)] -= h;
      auto eval = [&](const Tensor& cc) {
        Tape t2;
        Var f2 = t2.input(fmap, false), c2 = t2.input(cc, false);
        Var s = ops::bilinear_sample(t2, f2, c2);
        return t2.val(ops::sum(t2, ops::mul(t2, s, s))).data[0];
      };
      Real fd = (eval(fp) - eval(fm)) / (2 * h);
      worst = std::max(worst, std::abs(fd - t.grad(c).data[size_t(i)]));
    }
    push("sampling gradients match finite differences", worst < 1e-4);
  }
  {
    // splat/sample adjoint identity on random interior points
    Rng rng(4);
    Real worst = 0;
    for (int rep = 0; rep < 5; ++rep) {
      Tensor f = randn({2, 3}, rng);
      Tensor g = randn({6, 5, 5}, rng);
      Tensor p({3, 2});
      for (int i = 0; i < 3; ++i) {
        p.at(i, 0) = rng.uniform(0.1, 3.9);
        p.at(i, 1) = rng.uniform(0.1, 3.9);
      }
      Tape t;
      Var sp = ops::splat_planes(t, t.input(f, false), t.input(p, false), 5,
                                 5);
      Real lhs = 0;
      for (size_t i = 0; i < g.data.size(); ++i)
        lhs += t.val(sp).data[i] * g.data[i];
      Real rhs = 0;
      for (int j = 0; j < 3; ++j) {
        Tensor gj({2, 5, 5});
        for (int c = 0; c < 2; ++c)
          for (int y = 0; y < 5; ++y)
            for (int x = 0; x < 5; ++x) gj.at(c, y, x) = g.at(j * 2 + c, y, x);
        Tensor pj({1, 2});
        pj.at(0, 0) = p.at(j, 0);
        pj.at(0, 1) = p.at(j, 1);
        Tensor fj = sample_joint_features(gj, pj);
        for (int c = 0; c < 2; ++c) rhs += f.at(c, j) * fj.at(c, 0);
      }
      worst = std::max(worst, std::abs(lhs - rhs));
    }
    push("splat is the adjoint of sample", worst < 1e-9);
  }
  {
    // two coincident joints stay recoverable from their own planes
    Tensor fl = Tensor::from({1, 1}, {3.0});
    Tensor fr = Tensor::from({1, 1}, {5.0});
    Tensor c = Tensor::from({1, 2}, {2.0, 2.0});
    Tape t;
    Var planes = ops::splat_planes(
        t, ops::concat_cols(t, t.input(fl, false), t.input(fr, false)),
        ops::concat0(t, t.input(c, false), t.input(c, false)), 4, 4);
    const Tensor& M = t.val(planes);
    push("multi-plane projection keeps joints separable",
         M.at(0, 2, 2) == 3.0 && M.at(1, 2, 2) == 5.0);
  }
  {
    Rng rng(5);
    Tensor x = randn({4, 9}, rng, 2.0);
    Tape t;
    Var sm = ops::softmax_rows(t, t.input(x, false));
    Real worst = 0;
    for (int i = 0; i < 4; ++i) {
      Real s = 0;
      for (int j = 0; j < 9; ++j) s += t.val(sm).at(i, j);
      worst = std::max(worst, std::abs(s - 1.0));
    }
    push("softmax rows sum to one", worst < 1e-9);
  }
  {
    SceneParams sp;
    SceneSample a = sample_scene(L, R, sp, 11, 0);
    SceneSample b = sample_scene(L, R, sp, 11, 0);
    push("scene generation is bit-deterministic",
         bitwise_equal(a.image, b.image) &&
             bitwise_equal(a.gt.left.joints3d, b.gt.left.joints3d));
    Tensor px = project(a.gt.left.joints3d,
                        WeakPerspectiveCam::from_tensor(a.gt.left.camera));
    push("generated 2D ground truth projects from 3D",
         max_abs_diff(px, a.gt.left.joints2d) < 1e-7);
  }
  {
    // 1 cm cubes at 0.5 cm voxels enclose exactly 1 cm^3
    Tensor verts({8, 3});
    int idx = 0;
    for (int x = 0; x < 2; ++x)
      for (int y = 0; y < 2; ++y)
        for (int z = 0; z < 2; ++z) {
          verts.at(idx, 0) = x * 0.01;
          verts.at(idx, 1) = y * 0.01;
          verts.at(idx, 2) = z * 0.01;
          ++idx;
        }
    std::vector<std::array<int, 3>> faces = {
        {0, 1, 3}, {0, 3, 2}, {4, 6, 7}, {4, 7, 5}, {0, 4, 5}, {0, 5, 1},
        {2, 3, 7}, {2, 7, 6}, {0, 2, 6}, {0, 6, 4}, {1, 5, 7}, {1, 7, 3}};
    HandMesh a{verts, Tensor({1, 3}), &faces};
    Real iv = interpenetration_volume(a, a, 0.5);
    push("unit-cube interpenetration volume is exact", iv == 1.0,
         "iv=" + std::to_string(iv));
  }
  {
    // mesh smoothness losses vanish exactly on identical meshes
    HandParams p;
    Rng rng(6);
    p.pose = randn({kSkinJoints, 3}, rng, 0.2);
    Tensor verts = lbs_forward(L, p).vertices;
    MeshLossValue nv = normal_consistency(verts, verts, L.faces);
    Real ev = edge_length_consistency(verts, verts, L.faces);
    push("smoothness losses are exactly zero at pred == gt",
         nv.value == 0.0 && ev == 0.0);
  }
  return results;
}

}  // namespace handrec
