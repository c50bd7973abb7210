#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "handrec/synth.hpp"

using namespace handrec;

TEST_SUITE_BEGIN("synth");

namespace {
const HandTemplate& tl() {
  static HandTemplate t = build_template(7, 402, Handed::left);
  return t;
}
const HandTemplate& tr() {
  static HandTemplate t = build_template(7, 402, Handed::right);
  return t;
}
SceneSample make_sample(uint64_t seed) {
  SceneParams p;
  return sample_scene(tl(), tr(), p, seed, int(seed));
}
bool samples_equal(const SceneSample& a, const SceneSample& b) {
  return bitwise_equal(a.image, b.image) && bitwise_equal(a.gt.seg, b.gt.seg) &&
         bitwise_equal(a.gt.corr, b.gt.corr) &&
         bitwise_equal(a.gt.offset, b.gt.offset) &&
         bitwise_equal(a.gt.left.joints3d, b.gt.left.joints3d) &&
         bitwise_equal(a.gt.left.verts2d, b.gt.left.verts2d) &&
         bitwise_equal(a.gt.right.camera, b.gt.right.camera);
}
}  // namespace

TEST_CASE("fixed seed gives a bit-identical sample") {
  SceneSample a = make_sample(42);
  SceneSample b = make_sample(42);
  CHECK(samples_equal(a, b));
  SceneSample c = make_sample(43);
  CHECK_FALSE(samples_equal(a, c));
}

TEST_CASE("generated ground truth satisfies projection consistency") {
  for (uint64_t seed : {1, 2, 3, 4, 5}) {
    SceneSample s = make_sample(seed);
    for (const HandGroundTruth* h : {&s.gt.left, &s.gt.right}) {
      Tensor px = project(h->joints3d, WeakPerspectiveCam::from_tensor(h->camera));
      CHECK(max_abs_diff(px, h->joints2d) < 1e-7);
      Tensor vx = project(h->verts3d, WeakPerspectiveCam::from_tensor(h->camera));
      CHECK(max_abs_diff(vx, h->verts2d) < 1e-7);
    }
    for (int y = 0; y < s.image.shape[1]; ++y)
      for (int x = 0; x < s.image.shape[2]; ++x) {
        CHECK((s.image.at(0, y, x) == 0.0 || s.image.at(0, y, x) == 1.0));
        CHECK(s.image.at(2, y, x) >= 0.0);
        CHECK(s.image.at(2, y, x) <= 1.0);
      }
  }
}

TEST_CASE("segmentation support equals rasterized coverage exactly") {
  SceneSample s = make_sample(9);
  // re-rasterize from the stored GT and compare mask support
  HandMesh ml{s.gt.left.verts3d, Tensor({kReportedJoints, 3}), &tl().faces};
  HandMesh mr{s.gt.right.verts3d, Tensor({kReportedJoints, 3}), &tr().faces};
  TwoHandState st;
  st.offset = s.gt.offset;
  st.left = ml;
  for (int i = 0; i < st.left.vertices.shape[0]; ++i)
    for (int c = 0; c < 3; ++c)
      st.left.vertices.at(i, c) += s.gt.offset.data[size_t(c)];
  st.right = mr;
  RasterOutput r = rasterize(
      st, WeakPerspectiveCam::from_tensor(s.gt.left.camera),
      WeakPerspectiveCam::from_tensor(s.gt.right.camera),
      s.image.shape[1], s.image.shape[2]);
  CHECK(bitwise_equal(r.seg, s.gt.seg));
}

TEST_CASE("one-meter lateral offset renders disjoint masks") {
  HandParams p;
  HandMesh ml = lbs_forward(tl(), p);
  HandMesh mr = lbs_forward(tr(), p);
  TwoHandState st = compose_two_hands(ml, mr, Tensor::from({3}, {1.0, 0, 0}));
  WeakPerspectiveCam cam{160.0, 32.0, 32.0};
  WeakPerspectiveCam cam_l{160.0, 32.0 + 160.0, 32.0};
  RasterOutput r = rasterize(st, cam_l, cam, 64, 64);
  for (int y = 0; y < 64; ++y)
    for (int x = 0; x < 64; ++x)
      CHECK(r.seg.at(0, y, x) * r.seg.at(1, y, x) == 0.0);
  Real left_mass = 0;
  for (int y = 0; y < 64; ++y)
    for (int x = 0; x < 64; ++x) left_mass += r.seg.at(0, y, x);
  CHECK(left_mass == 0.0);  // fully off-frame at +160px
}

TEST_CASE("single front-facing triangle labels exactly its pixel") {
  std::vector<std::array<int, 3>> faces = {{0, 1, 2}};
  HandMesh tri;
  tri.vertices = Tensor::from({3, 3}, {3.1, 2.1, 0.10, 3.9, 2.1, 0.10,
                                       3.5, 2.9, 0.10});
  tri.joints = Tensor({1, 3});
  tri.faces = &faces;
  HandMesh behind;
  behind.vertices = Tensor::from({3, 3}, {3.1, 2.1, 0.50, 3.9, 2.1, 0.50,
                                          3.5, 2.9, 0.50});
  behind.joints = Tensor({1, 3});
  behind.faces = &faces;
  TwoHandState st;
  st.left = behind;  // farther
  st.right = tri;    // nearer
  st.offset = Tensor({3});
  RasterOutput r = rasterize(st, {1.0, 0.0, 0.0}, {1.0, 0.0, 0.0}, 8, 8,
                             nullptr, nullptr, 0.0);
  for (int y = 0; y < 8; ++y)
    for (int x = 0; x < 8; ++x) {
      if (y == 2 && x == 3) {
        CHECK(r.seg.at(1, y, x) == 1.0);  // near hand owns the pixel
        CHECK(r.seg.at(0, y, x) == 0.0);
      } else {
        CHECK(r.seg.at(0, y, x) == 0.0);
        CHECK(r.seg.at(1, y, x) == 0.0);
      }
    }
}

TEST_CASE("empty scene rasterizes to zero maps") {
  std::vector<std::array<int, 3>> none;
  HandMesh empty;
  empty.vertices = Tensor({0, 3});
  empty.joints = Tensor({1, 3});
  empty.faces = &none;
  TwoHandState st;
  st.left = empty;
  st.right = empty;
  st.offset = Tensor({3});
  RasterOutput r = rasterize(st, {1, 0, 0}, {1, 0, 0}, 8, 8);
  for (Real v : r.image.data) CHECK(v == 0.0);
  for (Real v : r.seg.data) CHECK(v == 0.0);
}

TEST_CASE("identity augmentation spec returns the sample unchanged") {
  SceneSample s = make_sample(11);
  AugmentationSpec spec;  // all ranges degenerate
  SceneSample a = augment(s, spec, 5);
  CHECK(samples_equal(s, a));
  CHECK(bitwise_equal(a.gt.left.joints2d, s.gt.left.joints2d));
  CHECK(bitwise_equal(a.gt.left.camera, s.gt.left.camera));
}

TEST_CASE("augmentation spec validation rejects ill-ordered ranges") {
  AugmentationSpec spec;
  spec.scale_min = 1.2;
  spec.scale_max = 0.9;
  SceneSample s = make_sample(12);
  CHECK_THROWS_AS(augment(s, spec, 1), Error);
}

TEST_CASE("pure rotation turns 2D ground truth about the image center") {
  SceneSample s = make_sample(13);
  AugmentationSpec spec;
  spec.rotation_deg = 90.0;
  uint64_t seed = 77;
  Rng probe(derive_seed(seed, 0xa96));
  Real rot = probe.uniform(-90.0, 90.0) * M_PI / 180.0;
  SceneSample a = augment(s, spec, seed);
  const int W = s.image.shape[2];
  Real c = std::cos(rot), sn = std::sin(rot);
  for (int i = 0; i < s.gt.left.joints2d.shape[0]; ++i) {
    Real ux = s.gt.left.joints2d.at(i, 0) - W / 2.0;
    Real uy = s.gt.left.joints2d.at(i, 1) - W / 2.0;
    CHECK(a.gt.left.joints2d.at(i, 0) ==
          doctest::Approx(c * ux - sn * uy + W / 2.0).epsilon(1e-9));
    CHECK(a.gt.left.joints2d.at(i, 1) ==
          doctest::Approx(sn * ux + c * uy + W / 2.0).epsilon(1e-9));
  }
}

TEST_CASE("augmentation preserves projection consistency") {
  SceneSample s = make_sample(14);
  AugmentationSpec spec;
  spec.rotation_deg = 35;
  spec.scale_min = 0.85;
  spec.scale_max = 1.2;
  spec.translate_px = 6;
  spec.flip_prob = 0.5;
  for (uint64_t seed = 0; seed < 6; ++seed) {
    SceneSample a = augment(s, spec, seed);
    for (const HandGroundTruth* h : {&a.gt.left, &a.gt.right}) {
      Tensor px = project(h->joints3d,
                          WeakPerspectiveCam::from_tensor(h->camera));
      CHECK(max_abs_diff(px, h->joints2d) < 1e-7);
    }
  }
}

TEST_CASE("double flip is an involution") {
  SceneSample s = make_sample(15);
  AugmentationSpec spec;
  spec.flip_prob = 1.0;
  SceneSample once = augment(s, spec, 3);
  SceneSample twice = augment(once, spec, 4);
  CHECK(bitwise_equal(twice.image, s.image));
  CHECK(bitwise_equal(twice.gt.seg, s.gt.seg));
  CHECK(bitwise_equal(twice.gt.corr, s.gt.corr));
  CHECK(bitwise_equal(twice.gt.left.joints3d, s.gt.left.joints3d));
  CHECK(bitwise_equal(twice.gt.offset, s.gt.offset));
  CHECK(max_abs_diff(twice.gt.left.joints2d, s.gt.left.joints2d) < 1e-9);
  CHECK(max_abs_diff(twice.gt.right.camera, s.gt.right.camera) < 1e-9);
  CHECK(bitwise_equal(once.gt.left.camera, s.gt.right.camera) == false);
}

TEST_CASE("augmentation with fixed seed and spec is deterministic") {
  SceneSample s = make_sample(16);
  AugmentationSpec spec;
  spec.rotation_deg = 20;
  spec.scale_min = 0.9;
  spec.scale_max = 1.1;
  spec.translate_px = 4;
  spec.flip_prob = 0.5;
  spec.blur_prob = 1.0;
  SceneSample a = augment(s, spec, 9);
  SceneSample b = augment(s, spec, 9);
  CHECK(samples_equal(a, b));
}

TEST_CASE("dataset round trip is bitwise stable") {
  namespace fs = std::filesystem;
  std::string dir = "/tmp/handrec_test_dataset";
  fs::remove_all(dir);
  std::vector<SceneSample> samples;
  for (uint64_t i = 0; i < 3; ++i) samples.push_back(make_sample(100 + i));
  save_dataset(dir, samples, 64);
  std::vector<SceneSample> loaded = load_dataset(dir);
  REQUIRE(loaded.size() == samples.size());
  for (size_t i = 0; i < samples.size(); ++i) {
    CHECK(bitwise_equal(loaded[i].gt.left.joints3d,
                        samples[i].gt.left.joints3d));
    CHECK(bitwise_equal(loaded[i].gt.right.verts2d,
                        samples[i].gt.right.verts2d));
    CHECK(bitwise_equal(loaded[i].gt.offset, samples[i].gt.offset));
  }
  // save -> load -> save reproduces identical files
  std::string dir2 = "/tmp/handrec_test_dataset2";
  fs::remove_all(dir2);
  save_dataset(dir2, loaded, 64);
  for (std::string f : {"manifest.json", "samples.jsonl", "maps.bin"}) {
    std::ifstream a(dir + "/" + f, std::ios::binary);
    std::ifstream b(dir2 + "/" + f, std::ios::binary);
    std::string sa((std::istreambuf_iterator<char>(a)),
                   std::istreambuf_iterator<char>());
    std::string sb((std::istreambuf_iterator<char>(b)),
                   std::istreambuf_iterator<char>());
    CHECK(sa == sb);
  }
  fs::remove_all(dir);
  fs::remove_all(dir2);
}

TEST_SUITE_END();
