#pragma once

#include <cstring>
#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "handrec/losses.hpp"
#include "handrec/rasterize.hpp"

// Synthetic two-hand scene generator: the built-in dataset substitute.
// Samples shapes/poses within anatomical limits, places the hands with a
// controllable projected-overlap probability, rasterizes the geometric
// image and ground-truth maps, and provides image-space augmentation.
namespace handrec {

struct SceneSample {
  int id = 0;
  uint64_t seed = 0;
  Tensor image;  // (3,H,W)
  GroundTruthSample gt;
};

struct SceneParams {
  int image_size = 64;
  Real overlap_target = 0.5;
  Real shape_sigma = 1.0, shape_clip = 2.0;
  Real scale_min = 120.0, scale_max = 200.0;  // pixels/meter at 64px
  Real z_offset = 0.45;                       // scene depth, meters
};

struct AugmentationSpec {
  Real rotation_deg = 0.0;  // +- range
  Real scale_min = 1.0, scale_max = 1.0;
  Real translate_px = 0.0;  // +- range
  Real flip_prob = 0.0;
  Real blur_prob = 0.0;
  int blur_len_min = 3, blur_len_max = 7;

  void validate() const {
    if (rotation_deg < 0 || translate_px < 0 || scale_min > scale_max ||
        scale_min <= 0 || flip_prob < 0 || flip_prob > 1 || blur_prob < 0 ||
        blur_prob > 1 || blur_len_min > blur_len_max || blur_len_min < 1)
      throw_config("augmentation spec ranges are ill-ordered");
  }
  bool geometric_identity() const {
    return rotation_deg == 0 && scale_min == 1 && scale_max == 1 &&
           translate_px == 0;
  }
};

namespace synth_detail {

inline Tensor clipped_normal(std::vector<int> shape, Rng& rng, Real sigma,
                             Real clip) {
  Tensor t(std::move(shape));
  for (Real& v : t.data)
    v = std::clamp(rng.normal(0.0, sigma), -clip, clip);
  return t;
}

inline Tensor sample_pose(const PoseLimits& lim, Rng& rng) {
  Tensor pose({kSkinJoints, 3});
  for (int j = 0; j < kSkinJoints; ++j)
    for (int c = 0; c < 3; ++c)
      pose.at(j, c) = rng.uniform(lim.lo.at(j, c), lim.hi.at(j, c));
  return pose;
}

inline Tensor root_relative(const Tensor& pts, const Tensor& joints) {
  Tensor out = pts;
  for (int i = 0; i < out.shape[0]; ++i)
    for (int c = 0; c < 3; ++c) out.at(i, c) -= joints.at(0, c);
  return out;
}

}  // namespace synth_detail

// Deterministic scene generation from (seed). Retries up to 10 camera draws
// when a hand lands fully off-screen, then reports a data error.
inline SceneSample sample_scene(const HandTemplate& left_tmpl,
                                const HandTemplate& right_tmpl,
                                const SceneParams& params, uint64_t seed,
                                int id = 0) {
  Rng rng(derive_seed(seed, 0x5c3e));
  const int W = params.image_size;
  const PoseLimits lim_l = default_pose_limits(Handed::left);
  const PoseLimits lim_r = default_pose_limits(Handed::right);
  const Tensor canon_l = canonical_coords(left_tmpl);
  const Tensor canon_r = canonical_coords(right_tmpl);

  for (int attempt = 0; attempt < 10; ++attempt) {
    HandParams pl, pr;
    pl.shape = synth_detail::clipped_normal({kShapeDims}, rng,
                                            params.shape_sigma,
                                            params.shape_clip);
    pr.shape = synth_detail::clipped_normal({kShapeDims}, rng,
                                            params.shape_sigma,
                                            params.shape_clip);
    pl.pose = synth_detail::sample_pose(lim_l, rng);
    pr.pose = synth_detail::sample_pose(lim_r, rng);
    HandMesh ml = lbs_forward(left_tmpl, pl);
    HandMesh mr = lbs_forward(right_tmpl, pr);

    bool want_overlap = rng.bernoulli(params.overlap_target);
    Tensor offset({3});
    if (want_overlap) {
      offset.data[0] = rng.normal(0.0, 0.035);
      offset.data[1] = rng.normal(0.0, 0.025);
      offset.data[2] = rng.normal(0.0, 0.02);
    } else {
      offset.data[0] = (rng.bernoulli(0.5) ? 1 : -1) * rng.uniform(0.13, 0.22);
      offset.data[1] = rng.normal(0.0, 0.03);
      offset.data[2] = rng.normal(0.0, 0.04);
    }
    TwoHandState state = compose_two_hands(ml, mr, offset);

    Real s = rng.uniform(params.scale_min, params.scale_max) * W / 64.0;
    WeakPerspectiveCam cam_r{s, rng.uniform(0.30, 0.50) * W,
                             rng.uniform(0.40, 0.60) * W};
    WeakPerspectiveCam cam_l{s, cam_r.tx + s * offset.data[0],
                             cam_r.ty + s * offset.data[1]};

    Tensor j3_l = synth_detail::root_relative(ml.joints, ml.joints);
    Tensor j3_r = synth_detail::root_relative(mr.joints, mr.joints);
    Tensor j2_l = project(j3_l, cam_l);
    Tensor j2_r = project(j3_r, cam_r);
    auto in_frame_frac = [&](const Tensor& px) {
      int in = 0;
      for (int i = 0; i < px.shape[0]; ++i)
        if (px.at(i, 0) >= 1 && px.at(i, 0) <= W - 1 && px.at(i, 1) >= 1 &&
            px.at(i, 1) <= W - 1)
          ++in;
      return Real(in) / px.shape[0];
    };
    if (in_frame_frac(j2_l) < 0.6 || in_frame_frac(j2_r) < 0.6) continue;

    RasterOutput raster = rasterize(state, cam_l, cam_r, W, W, &canon_l,
                                    &canon_r, params.z_offset);
    SceneSample out;
    out.id = id;
    out.seed = seed;
    out.image = std::move(raster.image);
    out.gt.seg = std::move(raster.seg);
    out.gt.corr = std::move(raster.corr);
    out.gt.offset = offset;
    out.gt.left = {j3_l, j2_l,
                   synth_detail::root_relative(ml.vertices, ml.joints),
                   project(synth_detail::root_relative(ml.vertices, ml.joints),
                           cam_l),
                   cam_l.as_tensor()};
    out.gt.right = {j3_r, j2_r,
                    synth_detail::root_relative(mr.vertices, mr.joints),
                    project(synth_detail::root_relative(mr.vertices,
                                                        mr.joints),
                            cam_r),
                    cam_r.as_tensor()};
    return out;
  }
  throw_data("sample_scene: hands stayed off-screen after 10 camera draws");
}

// ---------------------------------------------------------------------------
// augmentation
// ---------------------------------------------------------------------------

namespace synth_detail {

// inverse-mapped bilinear warp, zero outside
inline Tensor warp_maps(const Tensor& maps, Real cosr, Real sinr, Real scale,
                        Real dx, Real dy) {
  int C = maps.shape[0], H = maps.shape[1], W = maps.shape[2];
  Tensor out({C, H, W});
  Real cx = W / 2.0, cy = H / 2.0;
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x) {
      // destination pixel center mapped back to the source
      Real ux = x + 0.5 - cx - dx, uy = y + 0.5 - cy - dy;
      Real sx = (cosr * ux + sinr * uy) / scale + cx;
      Real sy = (-sinr * ux + cosr * uy) / scale + cy;
      Real gx = sx - 0.5, gy = sy - 0.5;
      int x0 = int(std::floor(gx)), y0 = int(std::floor(gy));
      Real fx = gx - x0, fy = gy - y0;
      for (int c = 0; c < C; ++c) {
        Real acc = 0;
        for (int by = 0; by < 2; ++by)
          for (int bx = 0; bx < 2; ++bx) {
            int xs = x0 + bx, ys = y0 + by;
            if (xs < 0 || xs >= W || ys < 0 || ys >= H) continue;
            Real w = (bx ? fx : 1 - fx) * (by ? fy : 1 - fy);
            acc += w * maps.at(c, ys, xs);
          }
        out.at(c, y, x) = acc;
      }
    }
  return out;
}

inline void flip_maps_x(Tensor& maps) {
  int C = maps.shape[0], H = maps.shape[1], W = maps.shape[2];
  for (int c = 0; c < C; ++c)
    for (int y = 0; y < H; ++y)
      for (int x = 0; x < W / 2; ++x)
        std::swap(maps.data[(size_t(c) * H + y) * W + x],
                  maps.data[(size_t(c) * H + y) * W + (W - 1 - x)]);
}

inline Tensor line_kernel(int len, Real angle) {
  Tensor k({len, len});
  Real c = std::cos(angle), s = std::sin(angle);
  Real mid = (len - 1) / 2.0;
  int steps = 4 * len;
  for (int i = 0; i <= steps; ++i) {
    Real t = (Real(i) / steps - 0.5) * (len - 1);
    Real x = mid + t * c, y = mid + t * s;
    int x0 = int(std::floor(x)), y0 = int(std::floor(y));
    Real fx = x - x0, fy = y - y0;
    for (int by = 0; by < 2; ++by)
      for (int bx = 0; bx < 2; ++bx) {
        int xs = x0 + bx, ys = y0 + by;
        if (xs < 0 || xs >= len || ys < 0 || ys >= len) continue;
        k.at(ys, xs) += (bx ? fx : 1 - fx) * (by ? fy : 1 - fy);
      }
  }
  Real total = 0;
  for (Real v : k.data) total += v;
  for (Real& v : k.data) v /= total;
  return k;
}

inline void blur_image(Tensor& img, const Tensor& kernel) {
  int C = img.shape[0], H = img.shape[1], W = img.shape[2];
  int K = kernel.shape[0], r = K / 2;
  Tensor out({C, H, W});
  for (int c = 0; c < C; ++c)
    for (int y = 0; y < H; ++y)
      for (int x = 0; x < W; ++x) {
        Real acc = 0;
        for (int ky = 0; ky < K; ++ky)
          for (int kx = 0; kx < K; ++kx) {
            int ys = y + ky - r, xs = x + kx - r;
            if (ys < 0 || ys >= H || xs < 0 || xs >= W) continue;
            acc += kernel.at(ky, kx) * img.at(c, ys, xs);
          }
        out.at(c, y, x) = acc;
      }
  img = std::move(out);
}

}  // namespace synth_detail

// Image-space rotation/scale/translation applied jointly to the image, the
// 2D ground truth and the cameras (the 3D ground truth rotates about the
// camera axis); optional horizontal flip swaps handedness; motion blur
// touches the image only.
inline SceneSample augment(const SceneSample& sample,
                           const AugmentationSpec& spec, uint64_t seed) {
  spec.validate();
  Rng rng(derive_seed(seed, 0xa96));
  SceneSample out = sample;
  const int W = sample.image.shape[2];

  Real rot = spec.rotation_deg == 0
                 ? 0.0
                 : rng.uniform(-spec.rotation_deg, spec.rotation_deg) * M_PI /
                       180.0;
  Real sc = rng.uniform(spec.scale_min, spec.scale_max);
  Real dx = spec.translate_px == 0
                ? 0.0
                : rng.uniform(-spec.translate_px, spec.translate_px);
  Real dy = spec.translate_px == 0
                ? 0.0
                : rng.uniform(-spec.translate_px, spec.translate_px);

  if (!(rot == 0.0 && sc == 1.0 && dx == 0.0 && dy == 0.0)) {
    Real c = std::cos(rot), s = std::sin(rot);
    out.image = synth_detail::warp_maps(sample.image, c, s, sc, dx, dy);
    out.gt.seg = synth_detail::warp_maps(sample.gt.seg, c, s, sc, dx, dy);
    out.gt.corr = synth_detail::warp_maps(sample.gt.corr, c, s, sc, dx, dy);
    Real cx = W / 2.0, cy = W / 2.0;
    auto warp_px = [&](Tensor& px) {
      for (int i = 0; i < px.shape[0]; ++i) {
        Real ux = px.at(i, 0) - cx, uy = px.at(i, 1) - cy;
        px.at(i, 0) = sc * (c * ux - s * uy) + cx + dx;
        px.at(i, 1) = sc * (s * ux + c * uy) + cy + dy;
      }
    };
    auto rot_3d = [&](Tensor& pts) {
      for (int i = 0; i < pts.shape[0]; ++i) {
        Real x = pts.at(i, 0), y = pts.at(i, 1);
        pts.at(i, 0) = c * x - s * y;
        pts.at(i, 1) = s * x + c * y;
      }
    };
    for (HandGroundTruth* hgt : {&out.gt.left, &out.gt.right}) {
      warp_px(hgt->joints2d);
      warp_px(hgt->verts2d);
      rot_3d(hgt->joints3d);
      rot_3d(hgt->verts3d);
      Real s0 = hgt->camera.data[0], tx = hgt->camera.data[1],
           ty = hgt->camera.data[2];
      Real ux = tx - cx, uy = ty - cy;
      hgt->camera.data[0] = sc * s0;
      hgt->camera.data[1] = sc * (c * ux - s * uy) + cx + dx;
      hgt->camera.data[2] = sc * (s * ux + c * uy) + cy + dy;
    }
    Real ox = out.gt.offset.data[0], oy = out.gt.offset.data[1];
    out.gt.offset.data[0] = c * ox - s * oy;
    out.gt.offset.data[1] = s * ox + c * oy;
  }

  if (rng.bernoulli(spec.flip_prob)) {
    synth_detail::flip_maps_x(out.image);
    synth_detail::flip_maps_x(out.gt.seg);
    synth_detail::flip_maps_x(out.gt.corr);
    // mirrored hands swap identity; the canonical x channel negates
    {
      int HW = out.image.shape[1] * out.image.shape[2];
      for (int i = 0; i < HW; ++i) {
        std::swap(out.image.data[size_t(i)], out.image.data[size_t(HW + i)]);
        std::swap(out.gt.seg.data[size_t(i)], out.gt.seg.data[size_t(HW + i)]);
      }
      for (int i = 0; i < HW; ++i) out.gt.corr.data[size_t(i)] *= -1.0;
    }
    std::swap(out.gt.left, out.gt.right);
    for (HandGroundTruth* hgt : {&out.gt.left, &out.gt.right}) {
      for (int i = 0; i < hgt->joints3d.shape[0]; ++i)
        hgt->joints3d.at(i, 0) *= -1.0;
      for (int i = 0; i < hgt->verts3d.shape[0]; ++i)
        hgt->verts3d.at(i, 0) *= -1.0;
      for (int i = 0; i < hgt->joints2d.shape[0]; ++i)
        hgt->joints2d.at(i, 0) = W - hgt->joints2d.at(i, 0);
      for (int i = 0; i < hgt->verts2d.shape[0]; ++i)
        hgt->verts2d.at(i, 0) = W - hgt->verts2d.at(i, 0);
      hgt->camera.data[1] = W - hgt->camera.data[1];
    }
    out.gt.offset.data[1] *= -1.0;
    out.gt.offset.data[2] *= -1.0;
  }

  if (rng.bernoulli(spec.blur_prob)) {
    int len = rng.uniform_int(spec.blur_len_min, spec.blur_len_max);
    if (len % 2 == 0) ++len;
    Real angle = rng.uniform(0.0, M_PI);
    synth_detail::blur_image(out.image, synth_detail::line_kernel(len, angle));
  }
  return out;
}

// ---------------------------------------------------------------------------
// dataset persistence: JSON manifest + line-delimited JSON records + one raw
// little-endian float32 blob holding image/seg/corr maps
// ---------------------------------------------------------------------------

namespace synth_detail {

inline nlohmann::json tensor_to_json(const Tensor& t) {
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

inline Tensor tensor_from_json(const nlohmann::json& j) {
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

inline nlohmann::json hand_record(const HandGroundTruth& h) {
  return {{"joints3d", tensor_to_json(h.joints3d)},
          {"joints2d", tensor_to_json(h.joints2d)},
          {"verts3d", tensor_to_json(h.verts3d)},
          {"verts2d", tensor_to_json(h.verts2d)},
          {"camera", tensor_to_json(h.camera)}};
}

inline HandGroundTruth hand_from_record(const nlohmann::json& j) {
  return {tensor_from_json(j.at("joints3d")), tensor_from_json(j.at("joints2d")),
          tensor_from_json(j.at("verts3d")), tensor_from_json(j.at("verts2d")),
          tensor_from_json(j.at("camera"))};
}

inline void append_f32(std::vector<char>& buf, const Tensor& t) {
  for (Real v : t.data) {
    float f = float(v);
    const char* p = reinterpret_cast<const char*>(&f);
    buf.insert(buf.end(), p, p + 4);
  }
}

inline void read_f32(const std::vector<char>& buf, size_t& pos, Tensor& t) {
  for (Real& v : t.data) {
    float f;
    std::memcpy(&f, buf.data() + pos, 4);
    pos += 4;
    v = Real(f);
  }
}

}  // namespace synth_detail

inline void save_dataset(const std::string& dir,
                         const std::vector<SceneSample>& samples,
                         int image_size) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  nlohmann::json manifest = {
      {"count", samples.size()},
      {"image_size", image_size},
      {"dtype", "f32le"},
      {"records", "samples.jsonl"},
      {"blob", "maps.bin"},
      {"channels", {{"image", 3}, {"seg", 2}, {"corr", 3}}}};
  std::ofstream mf(dir + "/manifest.json");
  if (!mf) throw_data("save_dataset: cannot write manifest in " + dir);
  mf << manifest.dump(2) << "\n";

  std::ofstream rf(dir + "/samples.jsonl");
  std::vector<char> blob;
  for (const SceneSample& s : samples) {
    nlohmann::json rec = {{"id", s.id},
                          {"seed", s.seed},
                          {"offset", synth_detail::tensor_to_json(s.gt.offset)},
                          {"left", synth_detail::hand_record(s.gt.left)},
                          {"right", synth_detail::hand_record(s.gt.right)}};
    rf << rec.dump() << "\n";
    synth_detail::append_f32(blob, s.image);
    synth_detail::append_f32(blob, s.gt.seg);
    synth_detail::append_f32(blob, s.gt.corr);
  }
  std::ofstream bf(dir + "/maps.bin", std::ios::binary);
  bf.write(blob.data(), std::streamsize(blob.size()));
}

inline std::vector<SceneSample> load_dataset(const std::string& dir) {
  std::ifstream mf(dir + "/manifest.json");
  if (!mf) throw_data("load_dataset: no manifest in " + dir);
  nlohmann::json manifest = nlohmann::json::parse(mf);
  int W = manifest.at("image_size").get<int>();
  size_t count = manifest.at("count").get<size_t>();

  std::ifstream bf(dir + "/" + manifest.at("blob").get<std::string>(),
                   std::ios::binary);
  if (!bf) throw_data("load_dataset: missing blob file");
  std::vector<char> blob((std::istreambuf_iterator<char>(bf)),
                         std::istreambuf_iterator<char>());

  std::ifstream rf(dir + "/" + manifest.at("records").get<std::string>());
  if (!rf) throw_data("load_dataset: missing records file");
  std::vector<SceneSample> out;
  std::string line;
  size_t pos = 0;
  while (std::getline(rf, line)) {
    if (line.empty()) continue;
    nlohmann::json rec = nlohmann::json::parse(line);
    SceneSample s;
    s.id = rec.at("id").get<int>();
    s.seed = rec.at("seed").get<uint64_t>();
    s.gt.offset = synth_detail::tensor_from_json(rec.at("offset"));
    s.gt.left = synth_detail::hand_from_record(rec.at("left"));
    s.gt.right = synth_detail::hand_from_record(rec.at("right"));
    s.image = Tensor({3, W, W});
    s.gt.seg = Tensor({2, W, W});
    s.gt.corr = Tensor({3, W, W});
    synth_detail::read_f32(blob, pos, s.image);
    synth_detail::read_f32(blob, pos, s.gt.seg);
    synth_detail::read_f32(blob, pos, s.gt.corr);
    out.push_back(std::move(s));
  }
  if (out.size() != count)
    throw_data("load_dataset: record count does not match manifest");
  return out;
}

}  // namespace handrec
