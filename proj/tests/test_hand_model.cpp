#include <doctest.h>

#include <cstdio>

#include "grad_suite.hpp"
#include "handrec/hand_model.hpp"

using namespace handrec;

TEST_SUITE_BEGIN("hand_model");

static const HandTemplate& left_tmpl() {
  static HandTemplate t = build_template(7, 402, Handed::left);
  return t;
}
static const HandTemplate& right_tmpl() {
  static HandTemplate t = build_template(7, 402, Handed::right);
  return t;
}

TEST_CASE("default budget gives exactly 402 vertices and a watertight mesh") {
  const HandTemplate& T = left_tmpl();
  CHECK(T.vertex_count() == 402);
  MeshAudit a = audit_mesh(T.vertices, T.faces);
  CHECK(a.closed);
  CHECK(a.consistent_winding);
  CHECK(a.oriented_outward);
  CHECK(a.euler_ok);
  CHECK(a.components == 6);  // palm + 5 fingers
  // per closed genus-0 component F = 2V - 4
  CHECK(a.triangles == 2 * a.vertices - 4 * a.components);
}

TEST_CASE("template construction is deterministic per seed") {
  HandTemplate a = build_template(11, 402);
  HandTemplate b = build_template(11, 402);
  CHECK(bitwise_equal(a.vertices, b.vertices));
  CHECK(bitwise_equal(a.skinning_weights, b.skinning_weights));
  CHECK(bitwise_equal(a.shape_basis, b.shape_basis));
  HandTemplate c = build_template(12, 402);
  CHECK_FALSE(bitwise_equal(a.vertices, c.vertices));
}

TEST_CASE("right template is the mirrored left and both stay oriented") {
  const HandTemplate& L = left_tmpl();
  const HandTemplate& R = right_tmpl();
  REQUIRE(L.vertex_count() == R.vertex_count());
  for (int i = 0; i < L.vertex_count(); ++i) {
    CHECK(R.vertices.at(i, 0) == -L.vertices.at(i, 0));
    CHECK(R.vertices.at(i, 1) == L.vertices.at(i, 1));
    CHECK(R.vertices.at(i, 2) == L.vertices.at(i, 2));
  }
  CHECK(audit_mesh(L.vertices, L.faces).oriented_outward);
  CHECK(audit_mesh(R.vertices, R.faces).oriented_outward);
}

TEST_CASE("too-small budget is rejected") {
  CHECK_THROWS_AS(build_template(1, 150), Error);
}

TEST_CASE("skinning rows are a partition of unity") {
  const HandTemplate& T = left_tmpl();
  for (int i = 0; i < T.vertex_count(); ++i) {
    Real s = 0;
    for (int k = 0; k < kSkinJoints; ++k) {
      Real w = T.skinning_weights.at(i, k);
      CHECK(w >= 0);
      s += w;
    }
    CHECK(s == doctest::Approx(1.0).epsilon(1e-12));
  }
}

TEST_CASE("shape basis modes have zero mean over vertices") {
  const HandTemplate& T = left_tmpl();
  for (int b = 0; b < kShapeDims; ++b)
    for (int c = 0; c < 3; ++c) {
      Real m = 0;
      for (int i = 0; i < T.vertex_count(); ++i)
        m += T.shape_basis.at(b, i, c);
      CHECK(std::abs(m / T.vertex_count()) < 1e-12);
    }
}

TEST_CASE("regressor applied to the template reproduces the rest skeleton") {
  const HandTemplate& T = left_tmpl();
  Tensor j = joints_21(T, T.vertices);
  CHECK(max_abs_diff(j, T.rest_joints21) < 1e-9);
  // wrist at the origin by construction
  for (int c = 0; c < 3; ++c) CHECK(T.rest_joints21.at(0, c) == 0.0);
}

TEST_CASE("rest pose reproduces the template bitwise") {
  HandParams p;
  HandMesh m = lbs_forward(left_tmpl(), p);
  CHECK(bitwise_equal(m.vertices, left_tmpl().vertices));
  for (int c = 0; c < 3; ++c) CHECK(m.joints.at(0, c) == 0.0);
}

TEST_CASE("global rotation is equivariant about the root") {
  Rng rng(5);
  HandParams rest;
  HandMesh base = lbs_forward(left_tmpl(), rest);

  HandParams p;
  Tensor aa = randn({3}, rng, 0.6);
  for (int c = 0; c < 3; ++c) p.pose.at(0, c) = aa.data[size_t(c)];
  HandMesh rot = lbs_forward(left_tmpl(), p);

  Tape t;
  Var R = ops::rodrigues(t, t.input(aa, false));
  const Tensor& Rm = t.val(R);
  Real worst = 0;
  for (int i = 0; i < base.vertices.shape[0]; ++i)
    for (int r = 0; r < 3; ++r) {
      Real e = 0;
      for (int c = 0; c < 3; ++c) e += Rm.at(r, c) * base.vertices.at(i, c);
      worst = std::max(worst, std::abs(e - rot.vertices.at(i, r)));
    }
  CHECK(worst < 1e-7);
}

TEST_CASE("shape coefficient sign flips displacements exactly") {
  HandParams plus, minus;
  plus.shape.data[1] = 1.0;
  minus.shape.data[1] = -1.0;
  HandMesh mp = lbs_forward(left_tmpl(), plus);
  HandMesh mm = lbs_forward(left_tmpl(), minus);
  const Tensor& rest = left_tmpl().vertices;
  for (int i = 0; i < rest.shape[0]; ++i)
    for (int c = 0; c < 3; ++c) {
      Real dp = mp.vertices.at(i, c) - rest.at(i, c);
      Real dm = mm.vertices.at(i, c) - rest.at(i, c);
      CHECK(dp == doctest::Approx(-dm).epsilon(1e-12));
    }
}

TEST_CASE("weight-1 vertices ride rigidly with their bone") {
  const HandTemplate& T = left_tmpl();
  Rng rng(9);
  HandParams p;
  PoseLimits lim = default_pose_limits(Handed::left);
  for (int j = 0; j < kSkinJoints; ++j)
    for (int c = 0; c < 3; ++c)
      p.pose.at(j, c) = rng.uniform(lim.lo.at(j, c), lim.hi.at(j, c));
  HandMesh m = lbs_forward(T, p);
  Tensor j16_rest = T.rest_joints16;
  // posed 16-joint positions from the regressor
  Tensor j16({kSkinJoints, 3});
  for (int j = 0; j < kSkinJoints; ++j)
    for (int i = 0; i < T.vertex_count(); ++i) {
      Real w = T.joint_regressor.at(j, i);
      if (w == 0.0) continue;
      for (int c = 0; c < 3; ++c) j16.at(j, c) += w * m.vertices.at(i, c);
    }
  int tested = 0;
  for (int i = 0; i < T.vertex_count() && tested < 50; ++i) {
    int joint = -1;
    for (int k = 0; k < kSkinJoints; ++k)
      if (T.skinning_weights.at(i, k) == 1.0) joint = k;
    if (joint <= 0) continue;  // skip wrist-bound palm (trivially rigid)
    ++tested;
    auto dist = [](const Tensor& a, int ia, const Tensor& b, int ib) {
      Real s = 0;
      for (int c = 0; c < 3; ++c) {
        Real d = a.at(ia, c) - b.at(ib, c);
        s += d * d;
      }
      return std::sqrt(s);
    };
    Real before = dist(T.vertices, i, j16_rest, joint);
    Real after = dist(m.vertices, i, j16, joint);
    CHECK(after == doctest::Approx(before).epsilon(1e-9));
  }
  CHECK(tested > 0);
}

TEST_CASE("lbs rejects non-finite parameters") {
  HandParams p;
  p.pose.at(3, 1) = std::numeric_limits<Real>::quiet_NaN();
  CHECK_THROWS_AS(lbs_forward(left_tmpl(), p), Error);
}

TEST_CASE("joints translate rigidly with the mesh") {
  Rng rng(21);
  HandParams p;
  p.pose = randn({kSkinJoints, 3}, rng, 0.2);
  HandMesh m = lbs_forward(left_tmpl(), p);
  Tensor moved = m.vertices;
  Real tvec[3] = {0.03, -0.02, 0.05};
  for (int i = 0; i < moved.shape[0]; ++i)
    for (int c = 0; c < 3; ++c) moved.at(i, c) += tvec[c];
  Tensor jm = joints_21(left_tmpl(), moved);
  for (int j = 0; j < kReportedJoints; ++j)
    for (int c = 0; c < 3; ++c)
      CHECK(jm.at(j, c) ==
            doctest::Approx(m.joints.at(j, c) + tvec[c]).epsilon(1e-12));
}

TEST_CASE("compose_two_hands places roots as specified") {
  HandParams p;
  HandMesh l = lbs_forward(left_tmpl(), p);
  HandMesh r = lbs_forward(right_tmpl(), p);

  TwoHandState zero = compose_two_hands(l, r, Tensor({3}));
  for (int c = 0; c < 3; ++c) {
    CHECK(zero.left.joints.at(0, c) == 0.0);
    CHECK(zero.right.joints.at(0, c) == 0.0);
  }

  Tensor off = Tensor::from({3}, {0.1, 0.0, 0.0});
  TwoHandState st = compose_two_hands(l, r, off);
  CHECK(st.left.joints.at(0, 0) == doctest::Approx(0.1).epsilon(1e-15));
  CHECK(st.left.joints.at(0, 1) == 0.0);
  // reading the offset back from the roots is exact
  for (int c = 0; c < 3; ++c)
    CHECK(st.left.joints.at(0, c) - st.right.joints.at(0, c) ==
          doctest::Approx(off.data[size_t(c)]).epsilon(1e-15));

  Tensor bad = Tensor::from({3}, {0.1, 0.0, 0.0});
  bad.data[1] = std::numeric_limits<Real>::infinity();
  CHECK_THROWS_AS(compose_two_hands(l, r, bad), Error);
}

TEST_CASE("lbs gradients match finite differences") {
  for (auto& c : fdtest::composite_grad_cases()) {
    if (c.name != "lbs_pose_shape") continue;
    for (uint64_t seed = 1; seed <= 2; ++seed) {
      auto rep = c.run(seed);
      CAPTURE(seed);
      CHECK(rep.checked > 0);
      CHECK(rep.max_rel_err < 1e-4);
    }
  }
}

TEST_CASE("obj round trip preserves counts and coordinates") {
  const HandTemplate& T = left_tmpl();
  std::string path = "/tmp/handrec_test_hand.obj";
  write_obj(path, T.vertices, T.faces);
  ObjData d = read_obj(path);
  CHECK(d.vertices.shape[0] == T.vertex_count());
  CHECK(int(d.faces.size()) == T.face_count());
  CHECK(max_abs_diff(d.vertices, T.vertices) < 5e-7);  // 6 decimals
  for (size_t i = 0; i < d.faces.size(); ++i) CHECK(d.faces[i] == T.faces[i]);
  std::remove(path.c_str());
}

TEST_CASE("alternate budgets stay watertight") {
  for (int budget : {200, 300, 350, 500}) {
    HandTemplate T = build_template(3, budget);
    CAPTURE(budget);
    CHECK(T.vertex_count() <= budget);
    CHECK(audit_mesh(T.vertices, T.faces).watertight());
  }
}

TEST_SUITE_END();
