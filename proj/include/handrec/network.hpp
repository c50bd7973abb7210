#pragma once

#include <unordered_map>

#include "handrec/camera.hpp"
#include "handrec/hand_model.hpp"
#include "handrec/interaction.hpp"
#include "handrec/losses.hpp"
#include "handrec/optim.hpp"

// End-to-end model: a small strided-conv encoder, attention-split initial
// estimation of per-hand model/camera parameters plus the inter-hand offset,
// and T decoupled refinement stages that alternate joint-space interaction
// (sampling, GCN, transformer) with visual-space enhancement (feature-plane
// projection and 2D convolution).
namespace handrec {

enum class Projection { multi_plane, single_plane, heatmap };

struct ModelConfig {
  int image_size = 64;
  std::vector<int> enc_channels = {8, 16, 32, 64};
  int dec_channels = 32;
  int joint_channels = 32;
  int stages = 2;  // refinement stages on top of the initial estimate
  int gcn_layers = 4;
  int tf_layers = 4;
  int tf_heads = 4;
  Real ff_expansion = 2.0;
  Projection projection = Projection::multi_plane;
  bool use_gcn = true;
  bool use_transformer = true;
  int theta_width = 58;  // pose(48)+shape(10); wider heads are zero-padded
  int vertex_budget = 402;
  uint64_t template_seed = 7;
  Real heatmap_sigma = 0.75;

  void validate() const {
    if (image_size != 64 && image_size != 128 && image_size != 256)
      throw_invalid("model: image size must be one of 64/128/256");
    if (enc_channels.size() != 4) throw_invalid("model: need 4 encoder stages");
    if (stages < 0 || stages > 3)
      throw_invalid("model: refinement stages must be in [0,3]");
    if (theta_width < 58) throw_invalid("model: theta width must be >= 58");
    if (joint_channels % tf_heads != 0)
      throw_invalid("model: joint channels must divide by heads");
  }

  int coarse_res() const { return image_size / 16; }
  // refinement stages work at one fixed resolution: the coarsest encoder map
  // upsampled once at the first stage, capped at 32x32
  int decoder_res() const { return std::min(4 * coarse_res(), 32); }
};

// Ordered named parameter tensors; the order fixes checkpoint layout and
// gradient accumulation order.
class ParamStore {
 public:
  Tensor& add(const std::string& name, Tensor t) {
    if (map_.count(name)) throw_invalid("param exists: " + name);
    order_.push_back(name);
    return map_.emplace(name, std::move(t)).first->second;
  }
  bool has(const std::string& name) const { return map_.count(name) > 0; }
  Tensor& get(const std::string& name) {
    auto it = map_.find(name);
    if (it == map_.end()) throw_invalid("no such param: " + name);
    return it->second;
  }
  const Tensor& get(const std::string& name) const {
    return const_cast<ParamStore*>(this)->get(name);
  }
  const std::vector<std::string>& names() const { return order_; }
  int64_t total_scalars() const {
    int64_t n = 0;
    for (auto& name : order_) n += map_.at(name).numel();
    return n;
  }

 private:
  std::vector<std::string> order_;
  std::unordered_map<std::string, Tensor> map_;
};

// Per-tape view of the store: parameters are registered as zero-copy leaves
// on first use.
struct BoundParams {
  Tape* tape = nullptr;
  const ParamStore* store = nullptr;
  bool requires_grad = true;
  std::unordered_map<std::string, Var> vars;

  Var operator()(const std::string& name) {
    auto it = vars.find(name);
    if (it != vars.end()) return it->second;
    Var v = tape->external(&store->get(name), requires_grad);
    vars.emplace(name, v);
    return v;
  }
};

struct StageVars {
  // raw parameter vectors; camera raw is (log s, tx, ty)
  Var pose[2], shape[2], cam_raw[2], cam[2];
  Var offset;
  Var verts[2];     // model-frame vertices (V,3)
  Var joints[2];    // model-frame joints (21,3)
  Var joints3d[2];  // root-relative
  Var verts3d[2];
  Var joints2d[2];  // image pixels
  Var verts2d[2];
};

struct ForwardVars {
  std::vector<StageVars> stages;  // stages[0] = initial estimate
  Var seg, corr;                  // valid when refinement stages exist
  Var final_map;
};

struct StageEstimate {
  HandParams left, right;
  Tensor offset;
  Tensor joints3d[2], joints2d[2], verts3d[2], verts2d[2];
};

struct ModelOutput {
  std::vector<StageEstimate> stages;
  Tensor seg, corr;
};

class Model {
 public:
  Model(ModelConfig cfg, uint64_t seed) : cfg_(cfg), seed_(seed) {
    cfg_.validate();
    tmpl_[0] = build_template(cfg_.template_seed, cfg_.vertex_budget,
                              Handed::left);
    tmpl_[1] = build_template(cfg_.template_seed, cfg_.vertex_budget,
                              Handed::right);
    graph_ = SkeletonGraph::hand();
    build_params();
  }

  const ModelConfig& config() const { return cfg_; }
  const HandTemplate& hand_template(Handed h) const {
    return tmpl_[h == Handed::left ? 0 : 1];
  }
  ParamStore& params() { return params_; }
  const ParamStore& params() const { return params_; }

  // ---- encoder ----
  std::vector<Var> encode(Tape& t, BoundParams& p, Var image) const {
    const Tensor& img = t.val(image);
    if (img.rank() != 3 || img.shape[0] != 3 ||
        img.shape[1] != cfg_.image_size || img.shape[2] != cfg_.image_size)
      throw_invalid("encode: unsupported input size; expected 3x" +
                    std::to_string(cfg_.image_size) + "x" +
                    std::to_string(cfg_.image_size));
    using namespace ops;
    std::vector<Var> maps;
    Var x = image;
    for (int i = 0; i < 4; ++i) {
      std::string s = "enc.stage" + std::to_string(i);
      x = relu(t, conv2d(t, x, p(s + ".down.w"), p(s + ".down.b"), 2, 1));
      Var r = conv2d(t, x, p(s + ".res.w"), p(s + ".res.b"), 1, 1);
      x = relu(t, add(t, x, r));
      maps.push_back(x);
    }
    return maps;
  }

  // ---- initial estimation from the coarsest map ----
  StageVars initial_estimate(Tape& t, BoundParams& p, Var coarse) const {
    using namespace ops;
    const int top = cfg_.enc_channels[3];
    StageVars st;
    for (int h = 0; h < 2; ++h) {
      std::string side = h == 0 ? "left" : "right";
      Var a = sigmoid(t, conv2d(t, coarse, p("init.attn_" + side + ".w"),
                                p("init.attn_" + side + ".b"), 1, 0));
      Var g = global_avg_pool(t, mul_planes(t, coarse, a));
      Var hvec = relu(t, add(t, reshape(t, matmul(t, p("init.head_" + side +
                                                       ".fc1.w"),
                                                  reshape(t, g, {top, 1})),
                                        {128}),
                             p("init.head_" + side + ".fc1.b")));
      // (theta_width + 3) raw outputs
      Var out = add(t, reshape(t, matmul(t, p("init.head_" + side + ".out.w"),
                                         reshape(t, hvec, {128, 1})),
                               {cfg_.theta_width + 3}),
                    p("init.head_" + side + ".out.b"));
      finish_stage_params(t, st, h, slice0(t, out, 0, 58),
                          slice0(t, out, cfg_.theta_width,
                                 cfg_.theta_width + 3));
    }
    Var gp = global_avg_pool(t, coarse);
    Var oh = relu(t, add(t, reshape(t, matmul(t, p("init.offset.fc1.w"),
                                              reshape(t, gp, {top, 1})),
                                    {64}),
                         p("init.offset.fc1.b")));
    st.offset = add(t, reshape(t, matmul(t, p("init.offset.out.w"),
                                         reshape(t, oh, {64, 1})),
                               {3}),
                    p("init.offset.out.b"));
    finish_stage_geometry(t, st);
    return st;
  }

  // ---- one refinement stage ----
  struct StageIO {
    Var decoder_map;  // enhanced map handed to the next stage
    StageVars est;
  };

  StageIO refine_stage(Tape& t, BoundParams& p, int stage, Var prev_map,
                       Var skip, const StageVars& prev) const {
    using namespace ops;
    const int R = cfg_.decoder_res();
    std::string S = "stage" + std::to_string(stage);

    // fuse previous decoder map with the encoder skip at the working
    // resolution, then a residual enhancement convolution
    int skip_res = t.val(skip).shape[1];
    Var skip_r = skip;
    if (skip_res > R) skip_r = avg_pool(t, skip, skip_res / R);
    while (skip_res < R) {
      skip_r = upsample2(t, skip_r);
      skip_res *= 2;
    }
    Var fused = relu(t, conv2d(t, concat0(t, prev_map, skip_r),
                               p(S + ".fuse.w"), p(S + ".fuse.b"), 1, 0));
    Var res = conv2d(t, fused, p(S + ".fuse_res.w"), p(S + ".fuse_res.b"), 1,
                     1);
    Var fusion = relu(t, add(t, fused, res));

    // joint features: sampled visual features + encoded coordinates
    Real ratio = Real(R) / Real(cfg_.image_size);
    Var feats[2];
    for (int h = 0; h < 2; ++h) {
      Var grid_coords = add_scalar(t, scale(t, prev.joints2d[h], ratio), -0.5);
      Var vis = bilinear_sample(t, fusion, grid_coords);
      Var visj = add_col_bias(t, matmul(t, p(S + ".adapt.w"), vis),
                              p(S + ".adapt.b"));
      // offset-shifted coordinates place both hands in one 3D frame
      Var c3 = h == 0 ? add_row_vec(t, prev.joints3d[h], prev.offset)
                      : prev.joints3d[h];
      Var coord = encode_coords_t(t, c3, p(S + ".coord.w"), p(S + ".coord.b"));
      feats[h] = add(t, visj, coord);
    }

    // intra-hand interaction (shared 4-layer semantic GCN)
    if (cfg_.use_gcn) {
      std::vector<GcnLayerWeights> ws;
      for (int l = 0; l < cfg_.gcn_layers; ++l) {
        std::string L = S + ".gcn" + std::to_string(l);
        ws.push_back({p(L + ".self"), p(L + ".neigh"), p(L + ".bias"),
                      p(L + ".edges")});
      }
      auto [fl, fr] = gcn_forward(t, feats[0], feats[1], graph_, ws);
      feats[0] = fl;
      feats[1] = fr;
    }

    // inter-hand interaction (4-layer transformer over 42 tokens)
    Var tokens = concat_cols(t, feats[0], feats[1]);
    if (cfg_.use_transformer) {
      TransformerWeights w;
      w.heads = cfg_.tf_heads;
      w.position = p(S + ".tf.pos");
      for (int l = 0; l < cfg_.tf_layers; ++l) {
        std::string L = S + ".tf" + std::to_string(l);
        w.layers.push_back({p(L + ".ln1g"), p(L + ".ln1b"), p(L + ".wq"),
                            p(L + ".bq"), p(L + ".wk"), p(L + ".bk"),
                            p(L + ".wv"), p(L + ".bv"), p(L + ".wo"),
                            p(L + ".bo"), p(L + ".ln2g"), p(L + ".ln2b"),
                            p(L + ".ffw1"), p(L + ".ffb1"), p(L + ".ffw2"),
                            p(L + ".ffb2")});
      }
      tokens = transformer_forward(t, tokens, w);
    }
    Var refined[2] = {slice_cols(t, tokens, 0, kReportedJoints),
                      slice_cols(t, tokens, kReportedJoints, kTwoHandTokens)};

    // residual parameter heads
    StageVars st;
    const int C = cfg_.joint_channels;
    for (int h = 0; h < 2; ++h) {
      std::string side = h == 0 ? "left" : "right";
      Var flat = reshape(t, refined[h], {C * kReportedJoints, 1});
      Var hid = relu(t, add(t, reshape(t, matmul(t, p(S + ".head_" + side +
                                                      ".fc1.w"),
                                                 flat),
                                       {128}),
                            p(S + ".head_" + side + ".fc1.b")));
      Var out = add(t, reshape(t, matmul(t, p(S + ".head_" + side + ".out.w"),
                                         reshape(t, hid, {128, 1})),
                               {cfg_.theta_width + 3}),
                    p(S + ".head_" + side + ".out.b"));
      Var dtheta = slice0(t, out, 0, 58);
      Var dcam = slice0(t, out, cfg_.theta_width, cfg_.theta_width + 3);
      Var theta = add(t, concat0(t, reshape(t, prev.pose[h], {48}),
                                 prev.shape[h]),
                      dtheta);
      finish_stage_params(t, st, h, theta, add(t, prev.cam_raw[h], dcam));
    }
    Var pooled = mean_cols(t, tokens);
    Var ohid = relu(t, add(t, reshape(t, matmul(t, p(S + ".offset.fc1.w"),
                                                reshape(t, pooled, {C, 1})),
                                      {64}),
                           p(S + ".offset.fc1.b")));
    Var doff = add(t, reshape(t, matmul(t, p(S + ".offset.out.w"),
                                        reshape(t, ohid, {64, 1})),
                              {3}),
                   p(S + ".offset.out.b"));
    st.offset = add(t, prev.offset, doff);
    finish_stage_geometry(t, st);

    // project refined joint features back into the visual space and reduce
    // the planes to the decoder width
    Var coords2 [2];
    for (int h = 0; h < 2; ++h)
      coords2[h] = add_scalar(t, scale(t, st.joints2d[h], ratio), -0.5);
    Var all_coords = concat0(t, coords2[0], coords2[1]);
    Var reduced;
    switch (cfg_.projection) {
      case Projection::multi_plane:
        // fused form of multi_plane_project + the 1x1 reduction
        reduced = splat_planes_reduce(t, concat_cols(t, refined[0],
                                                     refined[1]),
                                      all_coords, p(S + ".reduce.w"),
                                      p(S + ".reduce.b"), R, R);
        break;
      case Projection::single_plane:
        reduced = conv2d(t, splat_sum(t, concat_cols(t, refined[0],
                                                     refined[1]),
                                      all_coords, R, R),
                         p(S + ".reduce.w"), p(S + ".reduce.b"), 1, 0);
        break;
      case Projection::heatmap:
        reduced = conv2d(t, gaussian_planes(t, all_coords, R, R,
                                            cfg_.heatmap_sigma),
                         p(S + ".reduce.w"), p(S + ".reduce.b"), 1, 0);
        break;
    }
    Var enhanced_in = add(t, fusion, reduced);
    Var enh_res = conv2d(t, enhanced_in, p(S + ".out_res.w"),
                         p(S + ".out_res.b"), 1, 1);
    StageIO io;
    io.decoder_map = relu(t, add(t, enhanced_in, enh_res));
    io.est = st;
    return io;
  }

  // ---- auxiliary pixel heads on the final decoder map ----
  std::pair<Var, Var> aux_heads(Tape& t, BoundParams& p, Var final_map) const {
    using namespace ops;
    Var seg = sigmoid(t, conv2d(t, final_map, p("aux.seg.w"), p("aux.seg.b"),
                                1, 0));
    Var corr = conv2d(t, final_map, p("aux.corr.w"), p("aux.corr.b"), 1, 0);
    return {seg, corr};
  }

  // ---- full pipeline ----
  ForwardVars forward(Tape& t, BoundParams& p, Var image) const {
    ForwardVars fv;
    std::vector<Var> maps = encode(t, p, image);
    fv.stages.push_back(initial_estimate(t, p, maps[3]));
    if (cfg_.stages > 0) {
      Var dec = maps[3];
      for (int r = cfg_.coarse_res(); r < cfg_.decoder_res(); r *= 2)
        dec = ops::upsample2(t, dec);
      for (int s = 0; s < cfg_.stages; ++s) {
        Var skip = maps[size_t(2 - s)];
        StageIO io = refine_stage(t, p, s, dec, skip, fv.stages.back());
        dec = io.decoder_map;
        fv.stages.push_back(io.est);
      }
      fv.final_map = dec;
      auto [seg, corr] = aux_heads(t, p, dec);
      fv.seg = seg;
      fv.corr = corr;
    }
    return fv;
  }

  ForwardVars forward(Tape& t, BoundParams& p, const Tensor& image) const {
    return forward(t, p, t.input(image, false));
  }

  BoundParams bind(Tape& t, bool requires_grad = true) const {
    return BoundParams{&t, &params_, requires_grad, {}};
  }

  // Builds a full stage estimate (meshes, coordinates, projections) from raw
  // parameter vectors: theta = pose(48)+shape(10), camera raw = (log s,tx,ty).
  StageVars make_stage(Tape& t, Var theta_left, Var cam_raw_left,
                       Var theta_right, Var cam_raw_right, Var offset) const {
    StageVars st;
    finish_stage_params(t, st, 0, theta_left, cam_raw_left);
    finish_stage_params(t, st, 1, theta_right, cam_raw_right);
    st.offset = offset;
    finish_stage_geometry(t, st);
    return st;
  }

  ModelOutput materialize(Tape& t, const ForwardVars& fv) const {
    ModelOutput out;
    for (const StageVars& sv : fv.stages) {
      StageEstimate e;
      for (int h = 0; h < 2; ++h) {
        HandParams& hp = h == 0 ? e.left : e.right;
        hp.pose = t.val(sv.pose[h]);
        hp.shape = t.val(sv.shape[h]);
        hp.camera = t.val(sv.cam[h]);
        e.joints3d[h] = t.val(sv.joints3d[h]);
        e.joints2d[h] = t.val(sv.joints2d[h]);
        e.verts3d[h] = t.val(sv.verts3d[h]);
        e.verts2d[h] = t.val(sv.verts2d[h]);
      }
      e.offset = t.val(sv.offset);
      out.stages.push_back(std::move(e));
    }
    if (fv.seg.valid()) {
      out.seg = t.val(fv.seg);
      out.corr = t.val(fv.corr);
    }
    return out;
  }

 private:
  // theta (58) and raw camera (3) -> meshes, coordinates, projections
  void finish_stage_params(Tape& t, StageVars& st, int h, Var theta,
                           Var cam_raw) const {
    using namespace ops;
    st.pose[h] = reshape(t, slice0(t, theta, 0, 48), {kSkinJoints, 3});
    st.shape[h] = slice0(t, theta, 48, 58);
    st.cam_raw[h] = cam_raw;
    Var s = expv(t, slice0(t, cam_raw, 0, 1));
    st.cam[h] = concat0(t, s, slice0(t, cam_raw, 1, 3));
  }

  void finish_stage_geometry(Tape& t, StageVars& st) const {
    using namespace ops;
    for (int h = 0; h < 2; ++h) {
      LbsVars lbs = lbs_forward_t(t, tmpl_[size_t(h)], st.pose[h],
                                  st.shape[h]);
      st.verts[h] = lbs.vertices;
      st.joints[h] = lbs.joints21;
      Var root = reshape(t, slice0(t, lbs.joints21, 0, 1), {3});
      Var neg_root = scale(t, root, -1.0);
      st.joints3d[h] = add_row_vec(t, lbs.joints21, neg_root);
      st.verts3d[h] = add_row_vec(t, lbs.vertices, neg_root);
      st.joints2d[h] = project_points(t, st.joints3d[h], st.cam[h]);
      st.verts2d[h] = project_points(t, st.verts3d[h], st.cam[h]);
    }
  }

  void build_params() {
    const int W = cfg_.image_size;
    auto init = [&](const std::string& name, std::vector<int> shape,
                    bool zero = false) -> Tensor& {
      Rng rng(derive_seed(seed_, hash_str(name)));
      if (zero) return params_.add(name, Tensor(shape));
      int fan_in = 1, fan_out = 1;
      if (shape.size() == 2) {
        fan_in = shape[1];
        fan_out = shape[0];
      } else if (shape.size() == 4) {
        fan_in = shape[1] * shape[2] * shape[3];
        fan_out = shape[0] * shape[2] * shape[3];
      } else {
        fan_in = fan_out = int(Tensor::numel_of(shape));
      }
      return params_.add(name, xavier(shape, rng, fan_in, fan_out));
    };
    // residual/estimate output layers start near (but not at) zero so the
    // first estimates sit at their biases while gradients still reach the
    // layers behind them
    auto init_small = [&](const std::string& name, std::vector<int> shape) {
      Rng rng(derive_seed(seed_, hash_str(name)));
      Tensor t = xavier(shape, rng, shape[1], shape[0]);
      for (Real& v : t.data) v *= 0.01;
      return params_.add(name, std::move(t));
    };

    // encoder
    int prev = 3;
    for (int i = 0; i < 4; ++i) {
      int ch = cfg_.enc_channels[size_t(i)];
      std::string s = "enc.stage" + std::to_string(i);
      init(s + ".down.w", {ch, prev, 3, 3});
      init(s + ".down.b", {ch}, true);
      init(s + ".res.w", {ch, ch, 3, 3});
      init(s + ".res.b", {ch}, true);
      prev = ch;
    }
    const int top = cfg_.enc_channels[3];

    // initial estimation heads: zero-initialized output layers so the
    // initial estimate starts at the bias (rest pose, centered camera)
    Tensor cam_bias({cfg_.theta_width + 3});
    cam_bias.data[size_t(cfg_.theta_width)] = std::log(160.0 * W / 64.0);
    cam_bias.data[size_t(cfg_.theta_width) + 1] = W / 2.0;
    cam_bias.data[size_t(cfg_.theta_width) + 2] = W / 2.0;
    for (std::string side : {"left", "right"}) {
      init("init.attn_" + side + ".w", {1, top, 1, 1});
      init("init.attn_" + side + ".b", {1}, true);
      init("init.head_" + side + ".fc1.w", {128, top});
      init("init.head_" + side + ".fc1.b", {128}, true);
      init_small("init.head_" + side + ".out.w", {cfg_.theta_width + 3, 128});
      params_.add("init.head_" + side + ".out.b", cam_bias);
    }
    init("init.offset.fc1.w", {64, top});
    init("init.offset.fc1.b", {64}, true);
    init_small("init.offset.out.w", {3, 64});
    init("init.offset.out.b", {3}, true);

    // refinement stages
    const int D = cfg_.dec_channels, C = cfg_.joint_channels;
    for (int s = 0; s < cfg_.stages; ++s) {
      std::string S = "stage" + std::to_string(s);
      int prev_ch = s == 0 ? top : D;
      int skip_ch = cfg_.enc_channels[size_t(2 - s)];
      init(S + ".fuse.w", {D, prev_ch + skip_ch, 1, 1});
      init(S + ".fuse.b", {D}, true);
      init(S + ".fuse_res.w", {D, D, 3, 3});
      init(S + ".fuse_res.b", {D}, true);
      init(S + ".adapt.w", {C, D});
      init(S + ".adapt.b", {C}, true);
      init(S + ".coord.w", {C, 3});
      init(S + ".coord.b", {C}, true);
      if (cfg_.use_gcn)
        for (int l = 0; l < cfg_.gcn_layers; ++l) {
          std::string L = S + ".gcn" + std::to_string(l);
          init(L + ".self", {C, C});
          init(L + ".neigh", {C, C});
          init(L + ".bias", {C}, true);
          init(L + ".edges", {graph_.edge_count()}, true);
        }
      if (cfg_.use_transformer) {
        Rng rng(derive_seed(seed_, hash_str(S + ".tf.pos")));
        params_.add(S + ".tf.pos",
                    randn({C, kTwoHandTokens}, rng, 0.02));
        int Hff = int(C * cfg_.ff_expansion);
        for (int l = 0; l < cfg_.tf_layers; ++l) {
          std::string L = S + ".tf" + std::to_string(l);
          params_.add(L + ".ln1g", Tensor::full({C}, 1.0));
          init(L + ".ln1b", {C}, true);
          init(L + ".wq", {C, C});
          init(L + ".bq", {C}, true);
          init(L + ".wk", {C, C});
          init(L + ".bk", {C}, true);
          init(L + ".wv", {C, C});
          init(L + ".bv", {C}, true);
          init(L + ".wo", {C, C});
          init(L + ".bo", {C}, true);
          params_.add(L + ".ln2g", Tensor::full({C}, 1.0));
          init(L + ".ln2b", {C}, true);
          init(L + ".ffw1", {Hff, C});
          init(L + ".ffb1", {Hff}, true);
          init(L + ".ffw2", {C, Hff});
          init(L + ".ffb2", {C}, true);
        }
      }
      int plane_ch = cfg_.projection == Projection::multi_plane
                         ? kTwoHandTokens * C
                     : cfg_.projection == Projection::single_plane
                         ? C
                         : kTwoHandTokens;
      init(S + ".reduce.w", {D, plane_ch, 1, 1});
      init(S + ".reduce.b", {D}, true);
      init(S + ".out_res.w", {D, D, 3, 3});
      init(S + ".out_res.b", {D}, true);
      for (std::string side : {"left", "right"}) {
        init(S + ".head_" + side + ".fc1.w", {128, C * kReportedJoints});
        init(S + ".head_" + side + ".fc1.b", {128}, true);
        init_small(S + ".head_" + side + ".out.w",
                   {cfg_.theta_width + 3, 128});
        init(S + ".head_" + side + ".out.b", {cfg_.theta_width + 3}, true);
      }
      init(S + ".offset.fc1.w", {64, C});
      init(S + ".offset.fc1.b", {64}, true);
      init_small(S + ".offset.out.w", {3, 64});
      init(S + ".offset.out.b", {3}, true);
    }
    if (cfg_.stages > 0) {
      init("aux.seg.w", {2, D, 1, 1});
      init("aux.seg.b", {2}, true);
      init("aux.corr.w", {3, D, 1, 1});
      init("aux.corr.b", {3}, true);
    }
  }

  ModelConfig cfg_;
  uint64_t seed_;
  HandTemplate tmpl_[2];
  SkeletonGraph graph_;
  ParamStore params_;
};

}  // namespace handrec
