#pragma once

#include <CLI11.hpp>

#include "handrec/config.hpp"
#include "handrec/image_io.hpp"
#include "handrec/selfcheck.hpp"
#include "handrec/train.hpp"

// Command-line surface: train / eval / infer / ablate / gen-data / check.
// Exit codes: 0 ok, 2 config or usage, 3 data, 4 numeric.
namespace handrec::cli {

namespace detail {

inline int exit_code(const Error& e) {
  switch (e.kind) {
    case Error::Kind::config:
    case Error::Kind::invalid: return 2;
    case Error::Kind::data: return 3;
    case Error::Kind::numeric: return 4;
  }
  return 2;
}

inline const char* code_tag(const Error& e) {
  switch (e.kind) {
    case Error::Kind::config: return "E2_CONFIG";
    case Error::Kind::invalid: return "E2_USAGE";
    case Error::Kind::data: return "E3_DATA";
    case Error::Kind::numeric: return "E4_NUMERIC";
  }
  return "E2_CONFIG";
}

struct DataContext {
  HandTemplate left, right;
  SceneParams scene;
  uint64_t seed;
  std::shared_ptr<std::vector<SceneSample>> train_disk, eval_disk;

  DataContext(const RunConfig& cfg) : scene(cfg.scene_params()),
                                      seed(cfg.seed) {
    left = build_template(cfg.template_seed, cfg.vertex_budget, Handed::left);
    right = build_template(cfg.template_seed, cfg.vertex_budget,
                           Handed::right);
    if (!cfg.data_dir.empty()) {
      namespace fs = std::filesystem;
      if (!fs::exists(cfg.data_dir + "/train") ||
          !fs::exists(cfg.data_dir + "/eval"))
        throw_data("data_dir '" + cfg.data_dir +
                   "' must contain train/ and eval/ splits");
      train_disk = std::make_shared<std::vector<SceneSample>>(
          load_dataset(cfg.data_dir + "/train"));
      eval_disk = std::make_shared<std::vector<SceneSample>>(
          load_dataset(cfg.data_dir + "/eval"));
    }
  }

  SceneSample generate(uint64_t tag, int idx) const {
    return sample_scene(left, right, scene, derive_seed(seed, tag,
                                                        uint64_t(idx)),
                        idx);
  }

  SampleSource train_source() const {
    if (train_disk) {
      auto data = train_disk;
      return [data](int idx) {
        if (idx < 0 || idx >= int(data->size()))
          throw_data("train sample index out of range");
        return (*data)[size_t(idx)];
      };
    }
    return [this](int idx) { return generate(0x7121, idx); };
  }

  SampleSource eval_source() const {
    if (eval_disk) {
      auto data = eval_disk;
      return [data](int idx) {
        if (idx < 0 || idx >= int(data->size()))
          throw_data("eval sample index out of range");
        return (*data)[size_t(idx)];
      };
    }
    return [this](int idx) { return generate(0xe7a1, idx); };
  }
};

inline nlohmann::json report_json(const EvalReport& r) {
  return {{"mpjpe_mm", r.mpjpe_mm},
          {"mpvpe_mm", r.mpvpe_mm},
          {"mrrpe_mm", r.mrrpe_mm},
          {"miaa_px", r.miaa_px},
          {"auc", r.auc},
          {"iv_cm3", r.iv_cm3},
          {"stage_mpjpe_mm", r.stage_mpjpe_mm},
          {"samples", r.samples}};
}

inline void print_report(const EvalReport& r) {
  std::printf("samples        %d\n", r.samples);
  std::printf("stage  mpjpe_mm\n");
  for (size_t s = 0; s < r.stage_mpjpe_mm.size(); ++s)
    std::printf("%5zu  %8.3f\n", s, r.stage_mpjpe_mm[s]);
  std::printf("mpjpe  %8.3f mm\nmpvpe  %8.3f mm\nmrrpe  %8.3f mm\n",
              r.mpjpe_mm, r.mpvpe_mm, r.mrrpe_mm);
  std::printf("miaa   %8.3f px\nauc    %8.4f\niv     %8.3f cm3\n", r.miaa_px,
              r.auc, r.iv_cm3);
}

inline nlohmann::json epoch_json(const EpochLog& log) {
  return {{"epoch", log.epoch},
          {"lr", log.lr},
          {"wall_ms", log.wall_ms},
          {"loss",
           {{"total", log.mean_loss.total},
            {"joint3d", log.mean_loss.joint3d},
            {"joint2d", log.mean_loss.joint2d},
            {"mesh3d", log.mean_loss.mesh3d},
            {"mesh2d", log.mean_loss.mesh2d},
            {"offset", log.mean_loss.offset},
            {"normal", log.mean_loss.normal},
            {"edge", log.mean_loss.edge},
            {"seg", log.mean_loss.seg},
            {"corr", log.mean_loss.corr}}}};
}

// Shared by cmd_train and cmd_ablate.
inline TrainResult train_model(Model& model, const RunConfig& cfg,
                               const DataContext& data,
                               const std::string& out_dir, bool quiet) {
  std::filesystem::create_directories(out_dir);
  Trainer trainer(model, cfg.train_settings());
  std::ofstream log(out_dir + "/trainlog.jsonl");
  SampleSource source = data.train_source();
  TrainResult result;
  try {
    result = trainer.train(source, [&](const EpochLog& e) {
      log << epoch_json(e).dump() << "\n";
      log.flush();
      save_checkpoint(out_dir + "/checkpoint", model.params(),
                      {{"epoch", e.epoch}});
      if (!quiet)
        std::printf("epoch %3d  lr %.6f  loss %.6f\n", e.epoch, e.lr,
                    e.mean_loss.total);
    });
  } catch (const Error& e) {
    if (e.kind == Error::Kind::numeric) {
      std::fprintf(stderr,
                   "training aborted (%s); last-good checkpoint kept at %s\n",
                   e.what(), (out_dir + "/checkpoint").c_str());
    }
    throw;
  }
  save_checkpoint(out_dir + "/checkpoint", model.params(),
                  {{"epoch", cfg.epochs - 1}, {"final", true}});
  return result;
}

inline EvalReport eval_model(const Model& model, const RunConfig& cfg,
                             const DataContext& data,
                             const std::string& out_dir) {
  EvalSettings es;
  es.config = cfg.eval;
  es.workers = cfg.workers;
  es.with_iv = cfg.eval_iv;
  std::vector<PredictionRecord> records;
  EvalReport report = evaluate_model(model, data.eval_source(),
                                     cfg.eval_samples, es, &records);
  if (!out_dir.empty()) {
    std::filesystem::create_directories(out_dir);
    std::ofstream rf(out_dir + "/report.json");
    rf << report_json(report).dump(2) << "\n";
    write_pck_csv(out_dir + "/pck.csv", report.pck);
    write_prediction_records(out_dir + "/predictions.jsonl", records);
  }
  return report;
}

inline void draw_dot(Tensor& img, Real x, Real y, Real r, Real g, Real b) {
  int H = img.shape[1], W = img.shape[2];
  int xi = int(std::lround(x)), yi = int(std::lround(y));
  for (int dy = -1; dy <= 1; ++dy)
    for (int dx = -1; dx <= 1; ++dx) {
      int px = xi + dx, py = yi + dy;
      if (px < 0 || px >= W || py < 0 || py >= H) continue;
      img.at(0, py, px) = r;
      img.at(1, py, px) = g;
      img.at(2, py, px) = b;
    }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// subcommands
// ---------------------------------------------------------------------------

inline int cmd_train(const RunConfig& cfg, const std::string& out_dir) {
  std::filesystem::create_directories(out_dir);
  detail::DataContext data(cfg);
  Model model(cfg.model_config(), cfg.seed);
  std::printf("model parameters: %lld\n",
              (long long)model.params().total_scalars());
  save_config(out_dir + "/config.resolved.json", cfg);
  TrainResult result =
      detail::train_model(model, cfg, data, out_dir, /*quiet=*/false);
  std::printf("final_loss %.17g\n", result.final_loss);
  std::printf("train_wall_ms %lld\n", (long long)result.wall_ms);
  return 0;
}

inline int cmd_eval(const RunConfig& cfg, const std::string& checkpoint_dir,
                    const std::string& out_dir) {
  detail::DataContext data(cfg);
  Model model(cfg.model_config(), cfg.seed);
  load_checkpoint(checkpoint_dir, model.params());
  EvalReport report = detail::eval_model(model, cfg, data, out_dir);
  detail::print_report(report);
  return 0;
}

inline int cmd_infer(const RunConfig& cfg, const std::string& checkpoint_dir,
                     const std::string& out_dir, int sample_id,
                     const std::string& image_path) {
  detail::DataContext data(cfg);
  Model model(cfg.model_config(), cfg.seed);
  load_checkpoint(checkpoint_dir, model.params());

  Tensor image;
  if (!image_path.empty()) {
    image = read_ppm(image_path);
    if (image.shape[1] != cfg.image_size || image.shape[2] != cfg.image_size)
      throw_invalid("infer: image must be " + std::to_string(cfg.image_size) +
                    "x" + std::to_string(cfg.image_size));
  } else {
    if (sample_id < 0) throw_invalid("infer: need --sample or --image");
    image = data.generate(0xe7a1, sample_id).image;
  }

  Tape t;
  BoundParams bp = model.bind(t, false);
  ForwardVars fv = model.forward(t, bp, image);
  ModelOutput out = model.materialize(t, fv);
  const StageEstimate& fin = out.stages.back();

  std::filesystem::create_directories(out_dir);
  // composed meshes: right at the origin, left shifted by the offset
  Tensor left_verts = fin.verts3d[0];
  for (int i = 0; i < left_verts.shape[0]; ++i)
    for (int c = 0; c < 3; ++c)
      left_verts.at(i, c) += fin.offset.data[size_t(c)];
  write_obj(out_dir + "/left.obj", left_verts,
            model.hand_template(Handed::left).faces);
  write_obj(out_dir + "/right.obj", fin.verts3d[1],
            model.hand_template(Handed::right).faces);

  Tensor overlay = image;
  for (int h = 0; h < 2; ++h) {
    const Tensor& j2 = fin.joints2d[h];
    for (int j = 0; j < j2.shape[0]; ++j)
      detail::draw_dot(overlay, j2.at(j, 0), j2.at(j, 1), h == 0 ? 1.0 : 0.2,
                       0.2, h == 0 ? 0.2 : 1.0);
  }
  write_ppm(out_dir + "/overlay.ppm", overlay);

  nlohmann::json rec = {
      {"id", sample_id < 0 ? 0 : sample_id},
      {"offset", metric_detail::mat_json(fin.offset)},
      {"left",
       {{"joints3d", metric_detail::mat_json(fin.joints3d[0])},
        {"joints2d", metric_detail::mat_json(fin.joints2d[0])},
        {"verts3d", metric_detail::mat_json(fin.verts3d[0])},
        {"verts2d", metric_detail::mat_json(fin.verts2d[0])},
        {"camera", metric_detail::mat_json(fin.left.camera)}}},
      {"right",
       {{"joints3d", metric_detail::mat_json(fin.joints3d[1])},
        {"joints2d", metric_detail::mat_json(fin.joints2d[1])},
        {"verts3d", metric_detail::mat_json(fin.verts3d[1])},
        {"verts2d", metric_detail::mat_json(fin.verts2d[1])},
        {"camera", metric_detail::mat_json(fin.right.camera)}}}};
  std::ofstream pf(out_dir + "/prediction.json");
  pf << rec.dump(2) << "\n";
  std::printf("wrote %s/left.obj right.obj overlay.ppm prediction.json\n",
              out_dir.c_str());
  return 0;
}

inline int cmd_gen_data(const RunConfig& cfg, const std::string& out_dir) {
  detail::DataContext data(cfg);
  std::vector<SceneSample> train, eval;
  train.reserve(size_t(cfg.train_samples));
  for (int i = 0; i < cfg.train_samples; ++i)
    train.push_back(data.generate(0x7121, i));
  for (int i = 0; i < cfg.eval_samples; ++i)
    eval.push_back(data.generate(0xe7a1, i));
  save_dataset(out_dir + "/train", train, cfg.image_size);
  save_dataset(out_dir + "/eval", eval, cfg.image_size);
  std::printf("wrote %d train / %d eval samples to %s\n", cfg.train_samples,
              cfg.eval_samples, out_dir.c_str());
  return 0;
}

inline const std::vector<std::string>& ablate_switches() {
  static const std::vector<std::string> all = {
      "multi-plane", "single-plane", "heatmap-plane",
      "no-gcn",      "no-transformer", "no-refine"};
  return all;
}

inline int cmd_ablate(const RunConfig& cfg, const std::string& out_dir,
                      const std::vector<std::string>& variants) {
  for (const std::string& v : variants) {
    const auto& all = ablate_switches();
    if (std::find(all.begin(), all.end(), v) == all.end())
      throw_invalid("ablate: unknown switch '" + v + "'");
  }
  detail::DataContext data(cfg);
  nlohmann::json table = nlohmann::json::array();
  std::printf("%-16s %9s %9s %9s %9s %8s\n", "variant", "mpjpe", "mpvpe",
              "mrrpe", "miaa", "auc");
  for (const std::string& v : variants) {
    ModelConfig mc = cfg.model_config();
    if (v == "single-plane") mc.projection = Projection::single_plane;
    if (v == "heatmap-plane") mc.projection = Projection::heatmap;
    if (v == "no-gcn") mc.use_gcn = false;
    if (v == "no-transformer") mc.use_transformer = false;
    if (v == "no-refine") mc.stages = 0;
    Model model(mc, cfg.seed);
    std::string vdir = out_dir + "/" + v;
    detail::train_model(model, cfg, data, vdir, /*quiet=*/true);
    EvalReport rep = detail::eval_model(model, cfg, data, vdir);
    std::printf("%-16s %9.3f %9.3f %9.3f %9.3f %8.4f\n", v.c_str(),
                rep.mpjpe_mm, rep.mpvpe_mm, rep.mrrpe_mm, rep.miaa_px,
                rep.auc);
    nlohmann::json row = detail::report_json(rep);
    row["variant"] = v;
    table.push_back(row);
  }
  std::filesystem::create_directories(out_dir);
  std::ofstream tf(out_dir + "/ablate.json");
  tf << table.dump(2) << "\n";
  return 0;
}

inline int cmd_check() {
  auto results = run_selfchecks();
  bool all_ok = true;
  for (const CheckResult& r : results) {
    std::printf("[%s] %s%s%s\n", r.ok ? "PASS" : "FAIL", r.name.c_str(),
                r.detail.empty() ? "" : ": ", r.detail.c_str());
    all_ok &= r.ok;
  }
  return all_ok ? 0 : 4;
}

// ---------------------------------------------------------------------------
// entry point (also driven in-process by the harness tests)
// ---------------------------------------------------------------------------

inline int main(int argc, const char* const* argv) {
  CLI::App app{"two-hand mesh reconstruction toolkit"};
  app.require_subcommand(1);

  std::string config_path, out_dir = "out", checkpoint_dir, image_path;
  long long seed_override = -1;
  int workers_override = 0;
  int sample_id = -1;
  std::vector<std::string> variants;

  auto add_common = [&](CLI::App* sub, bool with_ckpt = false) {
    sub->add_option("--config", config_path, "config JSON path");
    sub->add_option("--seed", seed_override, "override the config seed");
    sub->add_option("--workers", workers_override, "override worker count");
    sub->add_option("--out", out_dir, "output directory");
    if (with_ckpt)
      sub->add_option("--checkpoint", checkpoint_dir, "checkpoint directory")
          ->required();
  };

  CLI::App* train = app.add_subcommand("train", "train a model");
  add_common(train);
  CLI::App* eval = app.add_subcommand("eval", "evaluate a checkpoint");
  add_common(eval, true);
  CLI::App* infer = app.add_subcommand("infer", "run one input");
  add_common(infer, true);
  infer->add_option("--sample", sample_id, "synthetic eval-stream sample id");
  infer->add_option("--image", image_path, "input PPM image");
  CLI::App* gen = app.add_subcommand("gen-data", "write dataset splits");
  add_common(gen);
  CLI::App* ablate = app.add_subcommand("ablate", "train/evaluate variants");
  add_common(ablate);
  ablate->add_option("variants", variants, "subset of: multi-plane, "
                                           "single-plane, heatmap-plane, "
                                           "no-gcn, no-transformer, "
                                           "no-refine")
      ->required();
  CLI::App* check = app.add_subcommand("check", "run the invariant suite");
  (void)check;

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    std::fprintf(stderr, "error[E2_USAGE]: %s\n", e.what());
    return 2;
  }

  try {
    RunConfig cfg = config_path.empty() ? RunConfig::desk()
                                        : load_config(config_path);
    if (seed_override >= 0) cfg.seed = uint64_t(seed_override);
    if (workers_override > 0) cfg.workers = workers_override;
    cfg.validate();

    if (app.got_subcommand(train)) return cmd_train(cfg, out_dir);
    if (app.got_subcommand(eval)) return cmd_eval(cfg, checkpoint_dir, out_dir);
    if (app.got_subcommand(infer))
      return cmd_infer(cfg, checkpoint_dir, out_dir, sample_id, image_path);
    if (app.got_subcommand(gen)) return cmd_gen_data(cfg, out_dir);
    if (app.got_subcommand(ablate)) return cmd_ablate(cfg, out_dir, variants);
    if (app.got_subcommand(check)) return cmd_check();
  } catch (const Error& e) {
    std::fprintf(stderr, "error[%s]: %s\n", detail::code_tag(e), e.what());
    return detail::exit_code(e);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error[E3_DATA]: %s\n", e.what());
    return 3;
  }
  return 2;
}

}  // namespace handrec::cli
