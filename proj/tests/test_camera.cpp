#include <doctest.h>

#include "grad_suite.hpp"
#include "handrec/camera.hpp"

using namespace handrec;

TEST_SUITE_BEGIN("camera");

TEST_CASE("identity camera passes coordinates through") {
  Rng rng(1);
  Tensor pts = randn({7, 3}, rng);
  Tensor px = project(pts, {1.0, 0.0, 0.0});
  for (int i = 0; i < 7; ++i) {
    CHECK(px.at(i, 0) == pts.at(i, 0));
    CHECK(px.at(i, 1) == pts.at(i, 1));
  }
}

TEST_CASE("projection worked example and scale ambiguity") {
  Tensor p = Tensor::from({1, 3}, {1, 1, 5});
  Tensor px = project(p, {2.0, 10.0, 10.0});
  CHECK(px.at(0, 0) == doctest::Approx(12.0).epsilon(1e-15));
  CHECK(px.at(0, 1) == doctest::Approx(12.0).epsilon(1e-15));

  // scaling 3D points by a and the camera scale by 1/a changes nothing
  Rng rng(2);
  Tensor pts = randn({9, 3}, rng, 0.2);
  Real a = 3.7;
  Tensor scaled = pts;
  for (Real& v : scaled.data) v *= a;
  Tensor p1 = project(pts, {150.0, 32.0, 30.0});
  Tensor p2 = project(scaled, {150.0 / a, 32.0, 30.0});
  CHECK(max_abs_diff(p1, p2) < 1e-9);
}

TEST_CASE("projection rejects non-positive scale") {
  CHECK_THROWS_AS(project(Tensor({2, 3}), {0.0, 0.0, 0.0}), Error);
  CHECK_THROWS_AS(project(Tensor({2, 3}), {-1.0, 0.0, 0.0}), Error);
}

TEST_CASE("projection is 2D-translation-equivariant") {
  Rng rng(4);
  Tensor pts = randn({5, 3}, rng, 0.3);
  WeakPerspectiveCam cam{120.0, 30.0, 34.0};
  Real dx = 0.07, dy = -0.04;
  Tensor moved = pts;
  for (int i = 0; i < 5; ++i) {
    moved.at(i, 0) += dx;
    moved.at(i, 1) += dy;
  }
  Tensor p1 = project(pts, cam);
  Tensor p2 = project(moved, cam);
  for (int i = 0; i < 5; ++i) {
    CHECK(p2.at(i, 0) ==
          doctest::Approx(p1.at(i, 0) + cam.s * dx).epsilon(1e-10));
    CHECK(p2.at(i, 1) ==
          doctest::Approx(p1.at(i, 1) + cam.s * dy).epsilon(1e-10));
  }
}

TEST_CASE("integer coordinates sample exact pixel values") {
  Rng rng(5);
  Tensor g = randn({3, 6, 7}, rng);
  Tensor coords = Tensor::from({2, 2}, {3, 4, 0, 0});
  Tensor f = sample_joint_features(g, coords);
  for (int c = 0; c < 3; ++c) {
    CHECK(f.at(c, 0) == g.at(c, 4, 3));
    CHECK(f.at(c, 1) == g.at(c, 0, 0));
  }
}

TEST_CASE("midpoint between pixels interpolates evenly") {
  Tensor g({1, 1, 2});
  g.at(0, 0, 0) = 0.0;
  g.at(0, 0, 1) = 2.0;
  Tensor f = sample_joint_features(g, Tensor::from({1, 2}, {0.5, 0.0}));
  CHECK(f.at(0, 0) == doctest::Approx(1.0).epsilon(1e-15));
}

TEST_CASE("far outside coordinates clamp to the border pixel") {
  Rng rng(6);
  Tensor g = randn({2, 4, 4}, rng);
  Tensor f = sample_joint_features(
      g, Tensor::from({2, 2}, {-50.0, -50.0, 90.0, 1.0}));
  for (int c = 0; c < 2; ++c) {
    CHECK(f.at(c, 0) == g.at(c, 0, 0));
    CHECK(f.at(c, 1) == g.at(c, 1, 3));
  }
}

TEST_CASE("encode_coords degenerate weights behave affinely") {
  Rng rng(7);
  Tensor coords = randn({5, 3}, rng);
  Tensor zero_w({4, 3});
  Tensor bias = randn({4}, rng);
  Tensor f = encode_coords(coords, zero_w, bias);
  for (int c = 0; c < 4; ++c)
    for (int j = 0; j < 5; ++j) CHECK(f.at(c, j) == bias.data[size_t(c)]);

  // two joints differing only in z: feature difference = dz * third column
  Tensor w = randn({4, 3}, rng);
  Tensor two({2, 3});
  for (int c = 0; c < 3; ++c) two.at(0, c) = two.at(1, c) = 0.2;
  two.at(1, 2) += 0.37;
  Tensor f2 = encode_coords(two, w, bias);
  for (int c = 0; c < 4; ++c)
    CHECK(f2.at(c, 1) - f2.at(c, 0) ==
          doctest::Approx(0.37 * w.at(c, 2)).epsilon(1e-10));
}

TEST_CASE("multi-plane projection keeps joints on separate planes") {
  const int J = kReportedJoints, C = 3, H = 8, W = 8;
  Rng rng(8);
  Tensor fl = randn({C, J}, rng), fr = randn({C, J}, rng);
  // every joint at the same integer pixel: planes must not mix
  Tensor cl({J, 2}), cr({J, 2});
  for (int j = 0; j < J; ++j) {
    cl.at(j, 0) = cr.at(j, 0) = 3.0;
    cl.at(j, 1) = cr.at(j, 1) = 4.0;
  }
  Tape t;
  Var planes = multi_plane_project_t(t, t.input(fl, false),
                                     t.input(fr, false), t.input(cl, false),
                                     t.input(cr, false), H, W);
  const Tensor& M = t.val(planes);
  REQUIRE(M.shape[0] == 2 * J * C);
  for (int j = 0; j < 2 * J; ++j)
    for (int c = 0; c < C; ++c) {
      Real want = j < J ? fl.at(c, j) : fr.at(c, j - J);
      for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) {
          Real v = M.at(j * C + c, y, x);
          if (y == 4 && x == 3)
            CHECK(v == want);  // exact recovery at an integer pixel
          else
            CHECK(v == 0.0);
        }
    }
}

TEST_CASE("splat then sample at an integer pixel recovers the feature") {
  Rng rng(9);
  Tensor f = randn({4, 1}, rng);
  Tensor coord = Tensor::from({1, 2}, {5.0, 2.0});
  Tape t;
  Var plane = ops::splat_planes(t, t.input(f, false), t.input(coord, false),
                                8, 8);
  Var back = ops::bilinear_sample(t, plane, t.input(coord, false));
  for (int c = 0; c < 4; ++c) CHECK(t.val(back).at(c, 0) == f.at(c, 0));
}

TEST_CASE("off-grid joints splat only their in-bounds fraction") {
  Tensor f = Tensor::full({1, 1}, 1.0);
  Tape t;
  // x = -0.25: only the x=0 tap lands in-bounds, with weight 1-0.25 = 0.75
  Var plane = ops::splat_planes(
      t, t.input(f, false),
      t.input(Tensor::from({1, 2}, {-0.25, 2.0}), false), 4, 4);
  Real total = 0;
  for (Real v : t.val(plane).data) total += v;
  CHECK(total == doctest::Approx(0.75).epsilon(1e-12));

  // fully outside: nothing written
  Var plane2 = ops::splat_planes(
      t, t.input(f, false),
      t.input(Tensor::from({1, 2}, {-7.0, 2.0}), false), 4, 4);
  for (Real v : t.val(plane2).data) CHECK(v == 0.0);
}

TEST_CASE("splat is the linear adjoint of sample") {
  // <splat(f,p), g> == <f, sample(g,p)> for interior coordinates
  Rng rng(10);
  for (int rep = 0; rep < 30; ++rep) {
    const int C = 3, J = 5, H = 7, W = 6;
    Tensor f = randn({C, J}, rng);
    Tensor g = randn({J * C, H, W}, rng);
    Tensor p({J, 2});
    for (int j = 0; j < J; ++j) {
      p.at(j, 0) = rng.uniform(0.01, W - 1.01);
      p.at(j, 1) = rng.uniform(0.01, H - 1.01);
    }
    Tape t;
    Var splat = ops::splat_planes(t, t.input(f, false), t.input(p, false), H,
                                  W);
    Real lhs = 0;
    const Tensor& S = t.val(splat);
    for (size_t i = 0; i < S.data.size(); ++i) lhs += S.data[i] * g.data[i];

    Real rhs = 0;
    for (int j = 0; j < J; ++j) {
      Tensor gj({C, H, W});
      for (int c = 0; c < C; ++c)
        for (int y = 0; y < H; ++y)
          for (int x = 0; x < W; ++x) gj.at(c, y, x) = g.at(j * C + c, y, x);
      Tensor pj({1, 2});
      pj.at(0, 0) = p.at(j, 0);
      pj.at(0, 1) = p.at(j, 1);
      Tensor fj = sample_joint_features(gj, pj);
      for (int c = 0; c < C; ++c) rhs += f.at(c, j) * fj.at(c, 0);
    }
    CHECK(std::abs(lhs - rhs) < 1e-9);
  }
}

TEST_CASE("multi-plane projection caps the target resolution") {
  Tape t;
  Var f = t.input(Tensor({2, kReportedJoints}), false);
  Var c = t.input(Tensor({kReportedJoints, 2}), false);
  CHECK_THROWS_AS(multi_plane_project_t(t, f, f, c, c, 64, 64), Error);
}

TEST_CASE("grid coordinate rescale follows pixel centers") {
  // image 64 -> grid 8: image pixel center (4, 4) is grid coordinate 0
  Tensor px = Tensor::from({1, 2}, {4.0, 4.0});
  Tensor g = to_grid_coords(px, 64.0, 8.0);
  CHECK(g.at(0, 0) == doctest::Approx(0.0).epsilon(1e-12));
  // image center maps to grid center
  Tensor mid = to_grid_coords(Tensor::from({1, 2}, {32.0, 32.0}), 64.0, 8.0);
  CHECK(mid.at(0, 0) == doctest::Approx(3.5).epsilon(1e-12));
}

TEST_CASE("fused plane reduction equals splat followed by 1x1 conv") {
  Rng rng(12);
  const int C = 3, D = 5, J = kReportedJoints, G = 8;
  Tensor feats = randn({C, J}, rng);
  Tensor coords({J, 2});
  for (int j = 0; j < J; ++j) {
    coords.at(j, 0) = rng.uniform(0.2, G - 1.2);
    coords.at(j, 1) = rng.uniform(0.2, G - 1.2);
  }
  Tensor w = randn({D, 2 * J * C, 1, 1}, rng, 0.3);
  Tensor b = randn({D}, rng, 0.1);
  // build a two-hand (2J) version like the network uses
  Tensor feats2({C, 2 * J});
  Tensor coords2({2 * J, 2});
  for (int j = 0; j < 2 * J; ++j) {
    for (int c = 0; c < C; ++c) feats2.at(c, j) = feats.at(c, j % J);
    coords2.at(j, 0) = coords.at(j % J, 0);
    coords2.at(j, 1) = coords.at(j % J, 1);
  }
  Tape t;
  Var planes = ops::splat_planes(t, t.input(feats2, false),
                                 t.input(coords2, false), G, G);
  Var ref = ops::conv2d(t, planes, t.input(w, false), t.input(b, false), 1, 0);
  Var fused = ops::splat_planes_reduce(t, t.input(feats2, false),
                                       t.input(coords2, false),
                                       t.input(w, false), t.input(b, false),
                                       G, G);
  CHECK(max_abs_diff(t.val(ref), t.val(fused)) < 1e-9);
}

TEST_CASE("projection composites match finite differences") {
  for (auto& c : fdtest::composite_grad_cases()) {
    if (c.name != "fs_sample_from_projection" &&
        c.name != "mfp_from_projection" &&
        c.name != "splat_planes_reduce_fused")
      continue;
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
