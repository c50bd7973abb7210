#pragma once

#include <cstdlib>
#include <fstream>

#include <json.hpp>

#include "handrec/metrics.hpp"
#include "handrec/network.hpp"
#include "handrec/synth.hpp"
#include "handrec/train.hpp"

// Run configuration: one JSON document with a `profile` base ("desk" or
// "paper") and per-field overrides. Environment variables override paths and
// thread counts only (HANDREC_DATA_DIR, HANDREC_WORKERS).
namespace handrec {

struct RunConfig {
  std::string profile = "desk";

  // model
  int image_size = 64;
  std::vector<int> enc_channels = {8, 16, 32, 64};
  int dec_channels = 32;
  int joint_channels = 32;
  int stages = 2;
  int gcn_layers = 4;
  int tf_layers = 4;
  int tf_heads = 4;
  Real ff_expansion = 2.0;
  std::string projection = "multi-plane";
  bool use_gcn = true;
  bool use_transformer = true;
  int theta_width = 58;
  int vertex_budget = 402;
  uint64_t template_seed = 7;

  // training
  LossWeights loss_weights;
  AdamWConfig optimizer;
  int epochs = 30;
  int batch_size = 16;
  int train_samples = 2000;
  int eval_samples = 500;
  uint64_t seed = 1;
  int workers = 2;
  int eval_every = 0;  // 0: evaluate only on demand
  bool augment_enabled = true;
  AugmentationSpec augment;

  // data
  SceneParams scene;
  std::string data_dir;

  // evaluation
  EvalConfig eval;
  bool eval_iv = true;

  static RunConfig desk() {
    RunConfig c;
    c.augment.rotation_deg = 30;
    c.augment.scale_min = 0.85;
    c.augment.scale_max = 1.15;
    c.augment.translate_px = 6;
    c.augment.flip_prob = 0.5;
    c.augment.blur_prob = 0.3;
    return c;
  }

  // reference profile at the published training scale; not a CI target
  static RunConfig paper() {
    RunConfig c = desk();
    c.profile = "paper";
    c.image_size = 256;
    c.enc_channels = {64, 128, 256, 512};
    c.dec_channels = 256;
    c.joint_channels = 128;
    c.epochs = 50;
    c.batch_size = 64;
    c.train_samples = 20000;
    c.eval_samples = 2000;
    c.scene.scale_min = 120.0;  // scaled internally by image size
    return c;
  }

  Projection projection_mode() const {
    if (projection == "multi-plane") return Projection::multi_plane;
    if (projection == "single-plane") return Projection::single_plane;
    if (projection == "heatmap-plane") return Projection::heatmap;
    throw_config("unknown projection '" + projection + "'");
  }

  void validate() const {
    auto fail = [](const std::string& field, const std::string& why) {
      throw_config("config field '" + field + "': " + why);
    };
    if (image_size != 64 && image_size != 128 && image_size != 256)
      fail("image_size", "must be 64, 128 or 256");
    if (stages < 1 || stages > 3) fail("stages", "must be 1, 2 or 3");
    if (enc_channels.size() != 4) fail("enc_channels", "need four stages");
    for (int c : enc_channels)
      if (c < 1) fail("enc_channels", "must be positive");
    if (dec_channels < 1) fail("dec_channels", "must be positive");
    if (joint_channels < 1 || joint_channels % tf_heads != 0)
      fail("joint_channels", "must be positive and divisible by tf_heads");
    if (theta_width < 58) fail("theta_width", "must be >= 58");
    if (vertex_budget < 200) fail("vertex_budget", "must be >= 200");
    for (auto [name, v] :
         std::initializer_list<std::pair<const char*, Real>>{
             {"joint3d", loss_weights.joint3d},
             {"joint2d", loss_weights.joint2d},
             {"mesh3d", loss_weights.mesh3d},
             {"mesh2d", loss_weights.mesh2d},
             {"offset", loss_weights.offset},
             {"normal", loss_weights.normal},
             {"edge", loss_weights.edge},
             {"seg", loss_weights.seg},
             {"corr", loss_weights.corr}})
      if (v < 0) fail(std::string("loss_weights.") + name, "must be >= 0");
    if (optimizer.lr <= 0) fail("optimizer.lr", "must be positive");
    if (epochs < 1) fail("epochs", "must be >= 1");
    if (batch_size < 1) fail("batch_size", "must be >= 1");
    if (train_samples < batch_size)
      fail("train_samples", "must cover at least one batch");
    if (eval_samples < 1) fail("eval_samples", "must be >= 1");
    if (workers < 1) fail("workers", "must be >= 1");
    if (eval.pck_steps < 2) fail("eval.pck_steps", "must be >= 2");
    if (eval.iv_voxel_cm <= 0) fail("eval.iv_voxel_cm", "must be positive");
    if (scene.overlap_target < 0 || scene.overlap_target > 1)
      fail("scene.overlap_target", "must be in [0,1]");
    augment.validate();
    projection_mode();
  }

  ModelConfig model_config() const {
    ModelConfig m;
    m.image_size = image_size;
    m.enc_channels = enc_channels;
    m.dec_channels = dec_channels;
    m.joint_channels = joint_channels;
    m.stages = stages;
    m.gcn_layers = gcn_layers;
    m.tf_layers = tf_layers;
    m.tf_heads = tf_heads;
    m.ff_expansion = ff_expansion;
    m.projection = projection_mode();
    m.use_gcn = use_gcn;
    m.use_transformer = use_transformer;
    m.theta_width = theta_width;
    m.vertex_budget = vertex_budget;
    m.template_seed = template_seed;
    return m;
  }

  TrainSettings train_settings() const {
    TrainSettings t;
    t.epochs = epochs;
    t.batch_size = batch_size;
    t.train_samples = train_samples;
    t.workers = workers;
    t.seed = seed;
    t.optimizer = optimizer;
    t.loss_weights = loss_weights;
    t.augment = augment;
    t.augment_enabled = augment_enabled;
    return t;
  }

  SceneParams scene_params() const {
    SceneParams s = scene;
    s.image_size = image_size;
    return s;
  }
};

namespace config_detail {

inline void read_field(const nlohmann::json& j, const char* key, Real& out) {
  if (j.contains(key)) out = j.at(key).get<Real>();
}
inline void read_field(const nlohmann::json& j, const char* key, int& out) {
  if (j.contains(key)) out = j.at(key).get<int>();
}
inline void read_field(const nlohmann::json& j, const char* key,
                       uint64_t& out) {
  if (j.contains(key)) out = j.at(key).get<uint64_t>();
}
inline void read_field(const nlohmann::json& j, const char* key, bool& out) {
  if (j.contains(key)) out = j.at(key).get<bool>();
}
inline void read_field(const nlohmann::json& j, const char* key,
                       std::string& out) {
  if (j.contains(key)) out = j.at(key).get<std::string>();
}

}  // namespace config_detail

inline nlohmann::json config_to_json(const RunConfig& c) {
  nlohmann::json j;
  j["profile"] = c.profile;
  j["image_size"] = c.image_size;
  j["enc_channels"] = c.enc_channels;
  j["dec_channels"] = c.dec_channels;
  j["joint_channels"] = c.joint_channels;
  j["stages"] = c.stages;
  j["gcn_layers"] = c.gcn_layers;
  j["tf_layers"] = c.tf_layers;
  j["tf_heads"] = c.tf_heads;
  j["ff_expansion"] = c.ff_expansion;
  j["projection"] = c.projection;
  j["use_gcn"] = c.use_gcn;
  j["use_transformer"] = c.use_transformer;
  j["theta_width"] = c.theta_width;
  j["vertex_budget"] = c.vertex_budget;
  j["template_seed"] = c.template_seed;
  j["loss_weights"] = {{"joint3d", c.loss_weights.joint3d},
                       {"joint2d", c.loss_weights.joint2d},
                       {"mesh3d", c.loss_weights.mesh3d},
                       {"mesh2d", c.loss_weights.mesh2d},
                       {"offset", c.loss_weights.offset},
                       {"normal", c.loss_weights.normal},
                       {"edge", c.loss_weights.edge},
                       {"seg", c.loss_weights.seg},
                       {"corr", c.loss_weights.corr}};
  j["optimizer"] = {{"lr", c.optimizer.lr},
                    {"beta1", c.optimizer.beta1},
                    {"beta2", c.optimizer.beta2},
                    {"eps", c.optimizer.eps},
                    {"weight_decay", c.optimizer.weight_decay},
                    {"clip_norm", c.optimizer.clip_norm}};
  j["epochs"] = c.epochs;
  j["batch_size"] = c.batch_size;
  j["train_samples"] = c.train_samples;
  j["eval_samples"] = c.eval_samples;
  j["seed"] = c.seed;
  j["workers"] = c.workers;
  j["eval_every"] = c.eval_every;
  j["augment_enabled"] = c.augment_enabled;
  j["augment"] = {{"rotation_deg", c.augment.rotation_deg},
                  {"scale_min", c.augment.scale_min},
                  {"scale_max", c.augment.scale_max},
                  {"translate_px", c.augment.translate_px},
                  {"flip_prob", c.augment.flip_prob},
                  {"blur_prob", c.augment.blur_prob},
                  {"blur_len_min", c.augment.blur_len_min},
                  {"blur_len_max", c.augment.blur_len_max}};
  j["scene"] = {{"overlap_target", c.scene.overlap_target},
                {"shape_sigma", c.scene.shape_sigma},
                {"shape_clip", c.scene.shape_clip},
                {"scale_min", c.scene.scale_min},
                {"scale_max", c.scene.scale_max},
                {"z_offset", c.scene.z_offset}};
  j["eval"] = {{"root", c.eval.root == EvalConfig::Root::wrist ? "wrist"
                                                               : "middle-mcp"},
               {"scale_by_gt_bone", c.eval.scale_by_gt_bone},
               {"pck_max_mm", c.eval.pck_max_mm},
               {"pck_steps", c.eval.pck_steps},
               {"iv_voxel_cm", c.eval.iv_voxel_cm}};
  j["eval_iv"] = c.eval_iv;
  j["data_dir"] = c.data_dir;
  return j;
}

inline RunConfig config_from_json(const nlohmann::json& j) {
  using config_detail::read_field;
  std::string profile = "desk";
  if (j.contains("profile")) profile = j.at("profile").get<std::string>();
  RunConfig c;
  if (profile == "desk")
    c = RunConfig::desk();
  else if (profile == "paper")
    c = RunConfig::paper();
  else
    throw_config("unknown profile '" + profile + "'");

  static const std::vector<std::string> known = {
      "profile",       "image_size",     "enc_channels", "dec_channels",
      "joint_channels", "stages",        "gcn_layers",   "tf_layers",
      "tf_heads",      "ff_expansion",   "projection",   "use_gcn",
      "use_transformer", "theta_width",  "vertex_budget", "template_seed",
      "loss_weights",  "optimizer",      "epochs",       "batch_size",
      "train_samples", "eval_samples",   "seed",         "workers",
      "eval_every",    "augment_enabled", "augment",     "scene",
      "eval",          "eval_iv",        "data_dir"};
  for (auto it = j.begin(); it != j.end(); ++it)
    if (std::find(known.begin(), known.end(), it.key()) == known.end())
      throw_config("unknown config field '" + it.key() + "'");

  read_field(j, "image_size", c.image_size);
  if (j.contains("enc_channels"))
    c.enc_channels = j.at("enc_channels").get<std::vector<int>>();
  read_field(j, "dec_channels", c.dec_channels);
  read_field(j, "joint_channels", c.joint_channels);
  read_field(j, "stages", c.stages);
  read_field(j, "gcn_layers", c.gcn_layers);
  read_field(j, "tf_layers", c.tf_layers);
  read_field(j, "tf_heads", c.tf_heads);
  read_field(j, "ff_expansion", c.ff_expansion);
  read_field(j, "projection", c.projection);
  read_field(j, "use_gcn", c.use_gcn);
  read_field(j, "use_transformer", c.use_transformer);
  read_field(j, "theta_width", c.theta_width);
  read_field(j, "vertex_budget", c.vertex_budget);
  read_field(j, "template_seed", c.template_seed);
  if (j.contains("loss_weights")) {
    const auto& w = j.at("loss_weights");
    read_field(w, "joint3d", c.loss_weights.joint3d);
    read_field(w, "joint2d", c.loss_weights.joint2d);
    read_field(w, "mesh3d", c.loss_weights.mesh3d);
    read_field(w, "mesh2d", c.loss_weights.mesh2d);
    read_field(w, "offset", c.loss_weights.offset);
    read_field(w, "normal", c.loss_weights.normal);
    read_field(w, "edge", c.loss_weights.edge);
    read_field(w, "seg", c.loss_weights.seg);
    read_field(w, "corr", c.loss_weights.corr);
  }
  if (j.contains("optimizer")) {
    const auto& o = j.at("optimizer");
    read_field(o, "lr", c.optimizer.lr);
    read_field(o, "beta1", c.optimizer.beta1);
    read_field(o, "beta2", c.optimizer.beta2);
    read_field(o, "eps", c.optimizer.eps);
    read_field(o, "weight_decay", c.optimizer.weight_decay);
    read_field(o, "clip_norm", c.optimizer.clip_norm);
  }
  read_field(j, "epochs", c.epochs);
  read_field(j, "batch_size", c.batch_size);
  read_field(j, "train_samples", c.train_samples);
  read_field(j, "eval_samples", c.eval_samples);
  read_field(j, "seed", c.seed);
  read_field(j, "workers", c.workers);
  read_field(j, "eval_every", c.eval_every);
  read_field(j, "augment_enabled", c.augment_enabled);
  if (j.contains("augment")) {
    const auto& a = j.at("augment");
    read_field(a, "rotation_deg", c.augment.rotation_deg);
    read_field(a, "scale_min", c.augment.scale_min);
    read_field(a, "scale_max", c.augment.scale_max);
    read_field(a, "translate_px", c.augment.translate_px);
    read_field(a, "flip_prob", c.augment.flip_prob);
    read_field(a, "blur_prob", c.augment.blur_prob);
    read_field(a, "blur_len_min", c.augment.blur_len_min);
    read_field(a, "blur_len_max", c.augment.blur_len_max);
  }
  if (j.contains("scene")) {
    const auto& s = j.at("scene");
    read_field(s, "overlap_target", c.scene.overlap_target);
    read_field(s, "shape_sigma", c.scene.shape_sigma);
    read_field(s, "shape_clip", c.scene.shape_clip);
    read_field(s, "scale_min", c.scene.scale_min);
    read_field(s, "scale_max", c.scene.scale_max);
    read_field(s, "z_offset", c.scene.z_offset);
  }
  if (j.contains("eval")) {
    const auto& e = j.at("eval");
    if (e.contains("root")) {
      std::string r = e.at("root").get<std::string>();
      if (r == "wrist")
        c.eval.root = EvalConfig::Root::wrist;
      else if (r == "middle-mcp")
        c.eval.root = EvalConfig::Root::middle_mcp;
      else
        throw_config("config field 'eval.root': must be wrist or middle-mcp");
    }
    read_field(e, "scale_by_gt_bone", c.eval.scale_by_gt_bone);
    read_field(e, "pck_max_mm", c.eval.pck_max_mm);
    read_field(e, "pck_steps", c.eval.pck_steps);
    read_field(e, "iv_voxel_cm", c.eval.iv_voxel_cm);
  }
  read_field(j, "eval_iv", c.eval_iv);
  read_field(j, "data_dir", c.data_dir);

  if (const char* env = std::getenv("HANDREC_DATA_DIR")) c.data_dir = env;
  if (const char* env = std::getenv("HANDREC_WORKERS")) {
    try {
      c.workers = std::stoi(env);
    } catch (...) {
      throw_config("HANDREC_WORKERS must be an integer");
    }
  }
  c.validate();
  return c;
}

inline RunConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw_config("cannot open config file " + path);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const std::exception& e) {
    throw_config(std::string("config parse error: ") + e.what());
  }
  return config_from_json(j);
}

inline void save_config(const std::string& path, const RunConfig& c) {
  std::ofstream out(path);
  if (!out) throw_data("cannot write config to " + path);
  out << config_to_json(c).dump(2) << "\n";
}

}  // namespace handrec
