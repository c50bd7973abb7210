#include <doctest.h>

#include "grad_suite.hpp"
#include "handrec/losses.hpp"

using namespace handrec;

TEST_SUITE_BEGIN("losses");

TEST_CASE("smooth l1 closed forms") {
  Tape t;
  Tensor gt({1});
  Var p0 = t.input(Tensor::scalar(0.0), false);
  CHECK(t.val(smooth_l1(t, p0, gt)).data[0] == 0.0);

  Var ph = t.input(Tensor::scalar(0.5), false);
  CHECK(t.val(smooth_l1(t, ph, gt)).data[0] == doctest::Approx(0.125).epsilon(1e-14));

  Var p2 = t.input(Tensor::scalar(2.0), false);
  CHECK(t.val(smooth_l1(t, p2, gt)).data[0] == doctest::Approx(1.5).epsilon(1e-14));
}

TEST_CASE("smooth l1 rejects shape mismatch") {
  Tape t;
  Var p = t.input(Tensor({2, 3}), false);
  CHECK_THROWS_AS(smooth_l1(t, p, Tensor({3, 2})), Error);
  CHECK_THROWS_AS(mse(t, p, Tensor({2, 2})), Error);
}

TEST_CASE("mse constant error and symmetry") {
  Rng rng(1);
  Tensor gt = randn({2, 4, 4}, rng);
  Tensor pred = gt;
  Real c = 0.37;
  for (Real& v : pred.data) v += c;
  Tape t;
  CHECK(t.val(mse(t, t.input(pred, false), gt)).data[0] ==
        doctest::Approx(c * c).epsilon(1e-14));
  // symmetric in pred/gt swap
  CHECK(t.val(mse(t, t.input(gt, false), pred)).data[0] ==
        t.val(mse(t, t.input(pred, false), gt)).data[0]);
  // exact maps -> exactly zero
  CHECK(t.val(mse(t, t.input(gt, false), gt)).data[0] == 0.0);
}

namespace {
const std::vector<std::array<int, 3>>& hand_faces() {
  static const HandTemplate& T = [] () -> const HandTemplate& {
    static HandTemplate t = build_template(7, 402);
    return t;
  }();
  return T.faces;
}
Tensor posed_hand(uint64_t seed, Real pose_sigma = 0.3) {
  static HandTemplate T = build_template(7, 402);
  Rng rng(seed);
  HandParams p;
  p.pose = randn({kSkinJoints, 3}, rng, pose_sigma);
  p.shape = randn({kShapeDims}, rng, 0.5);
  return lbs_forward(T, p).vertices;
}
}  // namespace

TEST_CASE("mesh smoothness losses are exactly zero for pred == gt") {
  Tensor verts = posed_hand(3);
  MeshLossValue nv = normal_consistency(verts, verts, hand_faces());
  CHECK(nv.value == 0.0);
  CHECK(nv.degenerate_faces == 0);
  CHECK(edge_length_consistency(verts, verts, hand_faces()) == 0.0);
}

TEST_CASE("normal consistency single-triangle worked example") {
  // gt triangle in the z=0 plane, predicted edge pointing straight up
  Tensor gt = Tensor::from({3, 3}, {0, 0, 0, 1, 0, 0, 0, 1, 0});
  std::vector<std::array<int, 3>> faces = {{0, 1, 2}};
  Tensor pred = gt;
  pred.at(1, 0) = 0;  // predicted edge 0->1 becomes (0,0,1)
  pred.at(1, 2) = 1;
  MeshLossValue v = normal_consistency(pred, gt, faces);
  // edge (0,1): unit edge (0,0,1) against unit normal (0,0,1) -> 1
  // edge (0,2): (0,1,0) in-plane -> 0
  // edge (1,2): (0,1,-1)/sqrt2 against (0,0,1) -> 1/sqrt2
  CHECK(v.value == doctest::Approx(1.0 + 1.0 / std::sqrt(2.0)).epsilon(1e-12));
}

TEST_CASE("rotating both meshes together leaves the normal loss unchanged") {
  Tensor pred = posed_hand(5);
  Tensor gt = posed_hand(6);
  Real base = normal_consistency(pred, gt, hand_faces()).value;

  Rng rng(7);
  Tape t;
  Var R = ops::rodrigues(t, t.input(randn({3}, rng, 0.8), false));
  const Tensor& Rm = t.val(R);
  auto rotate = [&](const Tensor& v) {
    Tensor out = v;
    for (int i = 0; i < v.shape[0]; ++i)
      for (int r = 0; r < 3; ++r) {
        Real s = 0;
        for (int c = 0; c < 3; ++c) s += Rm.at(r, c) * v.at(i, c);
        out.at(i, r) = s;
      }
    return out;
  };
  Real rotated = normal_consistency(rotate(pred), rotate(gt), hand_faces()).value;
  CHECK(rotated == doctest::Approx(base).epsilon(1e-9));
}

TEST_CASE("degenerate gt faces are skipped and counted") {
  Tensor gt = Tensor::from({4, 3}, {0, 0, 0, 1, 0, 0, 2, 0, 0,  // collinear
                                    0, 1, 0});
  std::vector<std::array<int, 3>> faces = {{0, 1, 2}, {0, 1, 3}};
  Tensor pred = gt;
  pred.at(2, 2) = 0.5;
  MeshLossValue v = normal_consistency(pred, gt, faces);
  CHECK(v.degenerate_faces == 1);
  CHECK(std::isfinite(v.value));
}

TEST_CASE("edge loss under uniform doubling equals total gt edge length") {
  Tensor gt = posed_hand(8);
  Tensor pred = gt;
  for (Real& v : pred.data) v *= 2.0;
  MeshLossRef ref(gt, hand_faces());
  Real total = 0;
  for (const auto& e : ref.edges) total += e.gt_len;
  Real loss = edge_length_consistency(pred, gt, hand_faces());
  CHECK(loss == doctest::Approx(total).epsilon(1e-12));
}

TEST_CASE("edge loss is invariant to rigid motion of the prediction") {
  Tensor gt = posed_hand(9);
  Tensor pred = posed_hand(10);
  Real base = edge_length_consistency(pred, gt, hand_faces());
  Rng rng(11);
  Tape t;
  Var R = ops::rodrigues(t, t.input(randn({3}, rng, 0.5), false));
  const Tensor& Rm = t.val(R);
  Tensor moved = pred;
  for (int i = 0; i < pred.shape[0]; ++i)
    for (int r = 0; r < 3; ++r) {
      Real s = 0.123 * (r + 1);
      for (int c = 0; c < 3; ++c) s += Rm.at(r, c) * pred.at(i, c);
      moved.at(i, r) = s;
    }
  CHECK(edge_length_consistency(moved, gt, hand_faces()) ==
        doctest::Approx(base).epsilon(1e-9));
}

TEST_CASE("loss gradients match finite differences") {
  for (auto& c : fdtest::composite_grad_cases()) {
    if (c.name.rfind("loss_", 0) != 0) continue;
    for (uint64_t seed = 1; seed <= 3; ++seed) {
      auto rep = c.run(seed);
      CAPTURE(c.name);
      CAPTURE(seed);
      CHECK(rep.checked > 0);
      CHECK(rep.max_rel_err < 1e-4);
    }
  }
}

TEST_SUITE_END();

#include "handrec/train.hpp"

TEST_SUITE_BEGIN("losses");

TEST_CASE("stage-summed losses: exact zeros, summation and weight algebra") {
  // a model whose refinement heads are zeroed produces identical stages, so
  // ground truth built from its own output drives the geometry terms to zero
  ModelConfig mc;
  mc.enc_channels = {4, 6, 8, 12};
  mc.dec_channels = 8;
  mc.joint_channels = 8;
  mc.tf_heads = 2;
  mc.stages = 2;
  Model model(mc, 5);
  for (int s = 0; s < mc.stages; ++s) {
    std::string S = "stage" + std::to_string(s);
    for (std::string side : {"left", "right"}) {
      Tensor& w = model.params().get(S + ".head_" + side + ".out.w");
      std::fill(w.data.begin(), w.data.end(), 0.0);
    }
    Tensor& ow = model.params().get(S + ".offset.out.w");
    std::fill(ow.data.begin(), ow.data.end(), 0.0);
  }
  Rng rng(31);
  Tensor img({3, 64, 64});
  for (Real& v : img.data) v = rng.uniform(0.0, 1.0);

  Tape t;
  BoundParams bp = model.bind(t, false);
  ForwardVars fv = model.forward(t, bp, img);
  ModelOutput out = model.materialize(t, fv);

  GroundTruthSample gt;
  gt.left = {out.stages[0].joints3d[0], out.stages[0].joints2d[0],
             out.stages[0].verts3d[0], out.stages[0].verts2d[0],
             out.stages[0].left.camera};
  gt.right = {out.stages[0].joints3d[1], out.stages[0].joints2d[1],
              out.stages[0].verts3d[1], out.stages[0].verts2d[1],
              out.stages[0].right.camera};
  gt.offset = out.stages[0].offset;
  gt.seg = Tensor({2, 64, 64});
  gt.corr = Tensor({3, 64, 64});

  LossWeights w;
  w.seg = w.corr = 0.0;  // pixel targets are not self-consistent here
  SampleLossCtx ctx(gt, model.hand_template(Handed::left).faces,
                    mc.decoder_res());
  LossVars lv = compute_loss(t, fv, gt, ctx, w, 64.0);
  CHECK(t.val(lv.joint3d).data[0] == 0.0);
  CHECK(t.val(lv.joint2d).data[0] == 0.0);
  CHECK(t.val(lv.mesh3d).data[0] == 0.0);
  CHECK(t.val(lv.mesh2d).data[0] == 0.0);
  CHECK(t.val(lv.offset).data[0] == 0.0);
  CHECK(t.val(lv.normal).data[0] == 0.0);
  CHECK(t.val(lv.edge).data[0] == 0.0);
  CHECK(t.val(lv.total).data[0] == 0.0);

  // duplicating stages doubles the loss: the terms sum over stages
  ForwardVars shallow = fv;
  shallow.stages.resize(1);
  ForwardVars doubled = shallow;
  doubled.stages.push_back(shallow.stages[0]);
  // shift the ground truth so per-stage terms are non-trivial
  GroundTruthSample gt2 = gt;
  for (int i = 0; i < gt2.left.joints3d.shape[0]; ++i)
    gt2.left.joints3d.at(i, 0) += 0.004;
  SampleLossCtx ctx2(gt2, model.hand_template(Handed::left).faces,
                     mc.decoder_res());
  LossVars one = compute_loss(t, shallow, gt2, ctx2, w, 64.0);
  LossVars two = compute_loss(t, doubled, gt2, ctx2, w, 64.0);
  CHECK(t.val(two.joint3d).data[0] ==
        doctest::Approx(2.0 * t.val(one.joint3d).data[0]).epsilon(1e-15));
  CHECK(t.val(two.edge).data[0] ==
        doctest::Approx(2.0 * t.val(one.edge).data[0]).epsilon(1e-15));

  // constant per-joint displacement d: the 3D joint term is the smooth-L1
  // mean over 63 entries, 21 of which carry |d| < beta
  Real d = 0.004;
  Real expect = 21.0 * (0.5 * d * d) / 63.0;
  CHECK(t.val(one.joint3d).data[0] == doctest::Approx(expect).epsilon(1e-12));

  // all-stage offset error of 1 cm in every component over 3 stages
  GroundTruthSample gt3 = gt;
  for (int c = 0; c < 3; ++c) gt3.offset.data[size_t(c)] += 0.01;
  SampleLossCtx ctx3(gt3, model.hand_template(Handed::left).faces,
                     mc.decoder_res());
  LossVars off3 = compute_loss(t, fv, gt3, ctx3, w, 64.0);
  Real sl1_of_1cm = 0.5 * 0.01 * 0.01;  // quadratic branch, beta = 1
  CHECK(t.val(off3.offset).data[0] ==
        doctest::Approx(3.0 * sl1_of_1cm).epsilon(1e-12));

  // the weighted total is linear in the weights
  LossWeights wa, wb;
  wa.joint3d = 2.0;
  wa.edge = 0.3;
  wa.seg = wa.corr = 0.0;
  wb = wa;
  wb.normal = 0.7;
  wb.mesh2d = 1.5;
  LossVars la = compute_loss(t, fv, gt2, ctx2, wa, 64.0);
  LossVars lb = compute_loss(t, fv, gt2, ctx2, wb, 64.0);
  Real manual_a = 2.0 * t.val(la.joint3d).data[0] +
                  1.0 * t.val(la.joint2d).data[0] +
                  1.0 * t.val(la.mesh3d).data[0] +
                  1.0 * t.val(la.mesh2d).data[0] +
                  1.0 * t.val(la.offset).data[0] +
                  0.1 * t.val(la.normal).data[0] +
                  0.3 * t.val(la.edge).data[0];
  CHECK(t.val(la.total).data[0] == doctest::Approx(manual_a).epsilon(1e-12));
  Real delta = 0.7 * t.val(lb.normal).data[0] -
               0.1 * t.val(la.normal).data[0] +
               1.5 * t.val(lb.mesh2d).data[0] -
               1.0 * t.val(la.mesh2d).data[0];
  CHECK(t.val(lb.total).data[0] - t.val(la.total).data[0] ==
        doctest::Approx(delta).epsilon(1e-9));
}

TEST_SUITE_END();
