#pragma once

#include <atomic>
#include <chrono>
#include <mutex>
#include <thread>

#include "handrec/metrics.hpp"
#include "handrec/network.hpp"
#include "handrec/synth.hpp"

// Loss assembly over model outputs, the gradient-accumulating training loop
// (deterministic for any fixed worker count), the evaluation loop, and the
// checkpoint serialization.
namespace handrec {

// ---------------------------------------------------------------------------
// loss over a forward pass
// ---------------------------------------------------------------------------

// Per-sample fixed data the loss closures reference; must outlive the tape.
struct SampleLossCtx {
  MeshLossRef left_ref, right_ref;
  Tensor seg_small, corr_small;  // gt maps pooled to the decoder resolution

  SampleLossCtx(const GroundTruthSample& gt,
                const std::vector<std::array<int, 3>>& faces, int decoder_res)
      : left_ref(gt.left.verts3d, faces), right_ref(gt.right.verts3d, faces) {
    int k = gt.seg.shape[1] / decoder_res;
    seg_small = pool_plain(gt.seg, k);
    corr_small = pool_plain(gt.corr, k);
  }

  static Tensor pool_plain(const Tensor& m, int k) {
    int C = m.shape[0], H = m.shape[1], W = m.shape[2];
    Tensor out({C, H / k, W / k});
    for (int c = 0; c < C; ++c)
      for (int y = 0; y < H / k; ++y)
        for (int x = 0; x < W / k; ++x) {
          Real s = 0;
          for (int dy = 0; dy < k; ++dy)
            for (int dx = 0; dx < k; ++dx)
              s += m.at(c, y * k + dy, x * k + dx);
          out.at(c, y, x) = s / (k * k);
        }
    return out;
  }
};

struct LossVars {
  Var total;
  Var joint3d, joint2d, mesh3d, mesh2d, offset, normal, edge, seg, corr;
  int degenerate_faces = 0;
};

// All terms summed over the T+1 estimate stages and both hands; 2D terms in
// image-normalized coordinates so the smooth-L1 beta of 1 is uniform.
inline LossVars compute_loss(Tape& t, const ForwardVars& fv,
                             const GroundTruthSample& gt,
                             const SampleLossCtx& ctx, const LossWeights& w,
                             Real image_size) {
  using namespace ops;
  LossVars out;
  Var zero = t.constant(Tensor::scalar(0.0));
  out.joint3d = out.joint2d = out.mesh3d = out.mesh2d = zero;
  out.offset = out.normal = out.edge = zero;
  Real inv = 1.0 / image_size;
  for (const StageVars& sv : fv.stages) {
    for (int h = 0; h < 2; ++h) {
      const HandGroundTruth& hg = h == 0 ? gt.left : gt.right;
      out.joint3d = add(t, out.joint3d, smooth_l1(t, sv.joints3d[h],
                                                  hg.joints3d));
      out.mesh3d = add(t, out.mesh3d, smooth_l1(t, sv.verts3d[h],
                                                hg.verts3d));
      out.joint2d = add(t, out.joint2d,
                        smooth_l1(t, scale(t, sv.joints2d[h], inv),
                                  normalize_2d(hg.joints2d, image_size)));
      out.mesh2d = add(t, out.mesh2d,
                       smooth_l1(t, scale(t, sv.verts2d[h], inv),
                                 normalize_2d(hg.verts2d, image_size)));
      const MeshLossRef& ref = h == 0 ? ctx.left_ref : ctx.right_ref;
      out.normal = add(t, out.normal, normal_consistency_t(t, sv.verts3d[h],
                                                           ref));
      out.edge = add(t, out.edge,
                     edge_length_consistency_t(t, sv.verts3d[h], ref));
    }
    out.offset = add(t, out.offset, smooth_l1(t, sv.offset, gt.offset));
  }
  out.degenerate_faces =
      ctx.left_ref.degenerate_faces + ctx.right_ref.degenerate_faces;
  if (fv.seg.valid()) {
    out.seg = mse(t, fv.seg, ctx.seg_small);
    out.corr = mse(t, fv.corr, ctx.corr_small);
  } else {
    out.seg = zero;
    out.corr = zero;
  }
  Var total = scale(t, out.joint3d, w.joint3d);
  total = add(t, total, scale(t, out.joint2d, w.joint2d));
  total = add(t, total, scale(t, out.mesh3d, w.mesh3d));
  total = add(t, total, scale(t, out.mesh2d, w.mesh2d));
  total = add(t, total, scale(t, out.offset, w.offset));
  total = add(t, total, scale(t, out.normal, w.normal));
  total = add(t, total, scale(t, out.edge, w.edge));
  total = add(t, total, scale(t, out.seg, w.seg));
  total = add(t, total, scale(t, out.corr, w.corr));
  out.total = total;
  return out;
}

inline LossReport loss_report(Tape& t, const LossVars& lv) {
  LossReport r;
  r.joint3d = t.val(lv.joint3d).data[0];
  r.joint2d = t.val(lv.joint2d).data[0];
  r.mesh3d = t.val(lv.mesh3d).data[0];
  r.mesh2d = t.val(lv.mesh2d).data[0];
  r.offset = t.val(lv.offset).data[0];
  r.normal = t.val(lv.normal).data[0];
  r.edge = t.val(lv.edge).data[0];
  r.seg = t.val(lv.seg).data[0];
  r.corr = t.val(lv.corr).data[0];
  r.total = t.val(lv.total).data[0];
  r.degenerate_faces = lv.degenerate_faces;
  return r;
}

// ---------------------------------------------------------------------------
// checkpoint serialization: JSON manifest + raw little-endian f64 blob
// ---------------------------------------------------------------------------

inline void save_checkpoint(const std::string& dir, const ParamStore& params,
                            const nlohmann::json& meta = {}) {
  std::filesystem::create_directories(dir);
  nlohmann::json manifest;
  manifest["dtype"] = "f64le";
  manifest["blob"] = "params.bin";
  if (!meta.is_null() && !meta.empty()) manifest["meta"] = meta;
  nlohmann::json plist = nlohmann::json::array();
  int64_t offset = 0;
  std::vector<char> blob;
  for (const std::string& name : params.names()) {
    const Tensor& p = params.get(name);
    plist.push_back({{"name", name},
                     {"shape", p.shape},
                     {"offset_bytes", offset},
                     {"count", p.numel()}});
    const char* raw = reinterpret_cast<const char*>(p.data.data());
    blob.insert(blob.end(), raw, raw + p.numel() * 8);
    offset += p.numel() * 8;
  }
  manifest["params"] = plist;
  std::ofstream mf(dir + "/checkpoint.json");
  if (!mf) throw_data("save_checkpoint: cannot write manifest in " + dir);
  mf << manifest.dump(2) << "\n";
  std::ofstream bf(dir + "/params.bin", std::ios::binary);
  bf.write(blob.data(), std::streamsize(blob.size()));
}

// Loads into an existing store; every parameter must match by name and
// shape (the error names the offending parameter).
inline nlohmann::json load_checkpoint(const std::string& dir,
                                      ParamStore& params) {
  std::ifstream mf(dir + "/checkpoint.json");
  if (!mf) throw_data("load_checkpoint: no manifest in " + dir);
  nlohmann::json manifest = nlohmann::json::parse(mf);
  std::ifstream bf(dir + "/params.bin", std::ios::binary);
  if (!bf) throw_data("load_checkpoint: missing params.bin");
  std::vector<char> blob((std::istreambuf_iterator<char>(bf)),
                         std::istreambuf_iterator<char>());
  size_t seen = 0;
  for (const auto& entry : manifest.at("params")) {
    std::string name = entry.at("name").get<std::string>();
    if (!params.has(name))
      throw_data("load_checkpoint: unknown parameter '" + name + "'");
    Tensor& p = params.get(name);
    std::vector<int> shape = entry.at("shape").get<std::vector<int>>();
    if (shape != p.shape)
      throw_data("load_checkpoint: shape mismatch for parameter '" + name +
                 "'");
    int64_t off = entry.at("offset_bytes").get<int64_t>();
    if (off + p.numel() * 8 > int64_t(blob.size()))
      throw_data("load_checkpoint: blob too small for parameter '" + name +
                 "'");
    std::memcpy(p.data.data(), blob.data() + off, size_t(p.numel() * 8));
    ++seen;
  }
  if (seen != params.names().size())
    throw_data("load_checkpoint: checkpoint is missing parameters");
  return manifest.contains("meta") ? manifest["meta"] : nlohmann::json{};
}

// ---------------------------------------------------------------------------
// training loop
// ---------------------------------------------------------------------------

using SampleSource = std::function<SceneSample(int)>;

struct TrainSettings {
  int epochs = 30;
  int batch_size = 16;
  int train_samples = 2000;
  int workers = 2;
  uint64_t seed = 1;
  AdamWConfig optimizer;
  LossWeights loss_weights;
  AugmentationSpec augment;
  bool augment_enabled = true;
};

struct EpochLog {
  int epoch = 0;
  Real lr = 0;
  LossReport mean_loss;
  int64_t wall_ms = 0;
};

struct TrainResult {
  std::vector<EpochLog> epochs;
  Real final_loss = 0;
  int64_t wall_ms = 0;
};

namespace train_detail {

struct GradBuffer {
  std::vector<Tensor> grads;
  LossReport loss_sum;
  int count = 0;

  void init(const ParamStore& params) {
    grads.clear();
    for (const std::string& n : params.names())
      grads.push_back(Tensor(params.get(n).shape));
  }
  void add_loss(const LossReport& r) {
    loss_sum.joint3d += r.joint3d;
    loss_sum.joint2d += r.joint2d;
    loss_sum.mesh3d += r.mesh3d;
    loss_sum.mesh2d += r.mesh2d;
    loss_sum.offset += r.offset;
    loss_sum.normal += r.normal;
    loss_sum.edge += r.edge;
    loss_sum.seg += r.seg;
    loss_sum.corr += r.corr;
    loss_sum.total += r.total;
    ++count;
  }
};

inline void scale_report(LossReport& r, Real k) {
  r.joint3d *= k;
  r.joint2d *= k;
  r.mesh3d *= k;
  r.mesh2d *= k;
  r.offset *= k;
  r.normal *= k;
  r.edge *= k;
  r.seg *= k;
  r.corr *= k;
  r.total *= k;
}

}  // namespace train_detail

class Trainer {
 public:
  Trainer(Model& model, TrainSettings settings)
      : model_(model), settings_(settings), opt_(settings.optimizer) {}

  // Runs one gradient step over `indices`; grads are accumulated per worker
  // shard and merged in shard order, so results do not depend on thread
  // scheduling.
  LossReport step(const SampleSource& source, const std::vector<int>& indices,
                  int epoch, uint64_t aug_salt) {
    const int workers =
        std::max(1, std::min<int>(settings_.workers, int(indices.size())));
    std::vector<train_detail::GradBuffer> buffers(static_cast<size_t>(workers));
    for (auto& b : buffers) b.init(model_.params());
    std::vector<std::thread> threads;
    std::atomic<bool> failed{false};
    std::string fail_msg;
    std::mutex fail_mu;

    auto work = [&](int widx) {
      try {
        train_detail::GradBuffer& buf = buffers[size_t(widx)];
        for (size_t k = size_t(widx); k < indices.size(); k += size_t(workers)) {
          int idx = indices[k];
          SceneSample sample = source(idx);
          if (settings_.augment_enabled)
            sample = augment(sample, settings_.augment,
                             derive_seed(settings_.seed, 0xa112, aug_salt + uint64_t(idx)));
          Tape tape;
          BoundParams bp = model_.bind(tape, true);
          ForwardVars fv = model_.forward(tape, bp, sample.image);
          SampleLossCtx ctx(sample.gt,
                            model_.hand_template(Handed::left).faces,
                            model_.config().decoder_res());
          LossVars lv = compute_loss(tape, fv, sample.gt, ctx,
                                     settings_.loss_weights,
                                     model_.config().image_size);
          LossReport rep = loss_report(tape, lv);
          if (!std::isfinite(rep.total))
            throw_numeric("training loss is not finite");
          buf.add_loss(rep);
          tape.backward(lv.total);
          size_t pi = 0;
          for (const std::string& name : model_.params().names()) {
            auto it = bp.vars.find(name);
            if (it != bp.vars.end())
              axpy(buf.grads[pi], tape.grad(it->second));
            ++pi;
          }
        }
      } catch (const std::exception& e) {
        std::scoped_lock lk(fail_mu);
        failed = true;
        fail_msg = e.what();
      }
    };
    if (workers == 1) {
      work(0);
    } else {
      for (int wk = 0; wk < workers; ++wk) threads.emplace_back(work, wk);
      for (auto& th : threads) th.join();
    }
    if (failed) throw_numeric("train step failed: " + fail_msg);

    // merge in shard order, average over the batch
    train_detail::GradBuffer& acc = buffers[0];
    for (int wk = 1; wk < workers; ++wk) {
      for (size_t i = 0; i < acc.grads.size(); ++i)
        axpy(acc.grads[i], buffers[size_t(wk)].grads[i]);
      acc.loss_sum.total += buffers[size_t(wk)].loss_sum.total;
      acc.loss_sum.joint3d += buffers[size_t(wk)].loss_sum.joint3d;
      acc.loss_sum.joint2d += buffers[size_t(wk)].loss_sum.joint2d;
      acc.loss_sum.mesh3d += buffers[size_t(wk)].loss_sum.mesh3d;
      acc.loss_sum.mesh2d += buffers[size_t(wk)].loss_sum.mesh2d;
      acc.loss_sum.offset += buffers[size_t(wk)].loss_sum.offset;
      acc.loss_sum.normal += buffers[size_t(wk)].loss_sum.normal;
      acc.loss_sum.edge += buffers[size_t(wk)].loss_sum.edge;
      acc.loss_sum.seg += buffers[size_t(wk)].loss_sum.seg;
      acc.loss_sum.corr += buffers[size_t(wk)].loss_sum.corr;
      acc.count += buffers[size_t(wk)].count;
    }
    Real inv = 1.0 / Real(indices.size());
    for (Tensor& g : acc.grads)
      for (Real& v : g.data) v *= inv;

    std::vector<Tensor*> plist;
    for (const std::string& name : model_.params().names())
      plist.push_back(&model_.params().get(name));
    opt_.step(plist, acc.grads, epoch, settings_.epochs);

    LossReport mean = acc.loss_sum;
    train_detail::scale_report(mean, 1.0 / Real(acc.count));
    return mean;
  }

  TrainResult train(const SampleSource& source,
                    const std::function<void(const EpochLog&)>& on_epoch = {}) {
    auto t0 = std::chrono::steady_clock::now();
    TrainResult result;
    const int n = settings_.train_samples;
    for (int epoch = 0; epoch < settings_.epochs; ++epoch) {
      auto e0 = std::chrono::steady_clock::now();
      std::vector<int> order(static_cast<size_t>(n));
      for (int i = 0; i < n; ++i) order[size_t(i)] = i;
      Rng shuffle(derive_seed(settings_.seed, 0x5d0f, uint64_t(epoch)));
      for (int i = n - 1; i > 0; --i)
        std::swap(order[size_t(i)], order[size_t(shuffle.uniform_int(0, i))]);

      train_detail::GradBuffer epoch_sum;
      LossReport epoch_loss;
      int steps = 0;
      for (int start = 0; start + settings_.batch_size <= n;
           start += settings_.batch_size) {
        std::vector<int> batch(order.begin() + start,
                               order.begin() + start + settings_.batch_size);
        LossReport rep = step(source, batch, epoch,
                              uint64_t(epoch) * uint64_t(n));
        epoch_loss.joint3d += rep.joint3d;
        epoch_loss.joint2d += rep.joint2d;
        epoch_loss.mesh3d += rep.mesh3d;
        epoch_loss.mesh2d += rep.mesh2d;
        epoch_loss.offset += rep.offset;
        epoch_loss.normal += rep.normal;
        epoch_loss.edge += rep.edge;
        epoch_loss.seg += rep.seg;
        epoch_loss.corr += rep.corr;
        epoch_loss.total += rep.total;
        ++steps;
      }
      train_detail::scale_report(epoch_loss, steps > 0 ? 1.0 / steps : 0.0);
      EpochLog log;
      log.epoch = epoch;
      log.lr = cosine_lr(settings_.optimizer.lr, epoch, settings_.epochs);
      log.mean_loss = epoch_loss;
      log.wall_ms = std::chrono::duration_cast<std::chrono::milliseconds>(
                        std::chrono::steady_clock::now() - e0)
                        .count();
      result.epochs.push_back(log);
      result.final_loss = epoch_loss.total;
      if (on_epoch) on_epoch(log);
    }
    result.wall_ms = std::chrono::duration_cast<std::chrono::milliseconds>(
                         std::chrono::steady_clock::now() - t0)
                         .count();
    return result;
  }

  AdamW& optimizer() { return opt_; }

 private:
  Model& model_;
  TrainSettings settings_;
  AdamW opt_;
};

// ---------------------------------------------------------------------------
// evaluation loop
// ---------------------------------------------------------------------------

struct EvalSettings {
  EvalConfig config;
  int workers = 2;
  bool with_iv = true;
};

// Evaluates `count` samples; per-sample prediction records (final stage) are
// written into `records` by index when provided.
inline EvalReport evaluate_model(const Model& model, const SampleSource& source,
                                 int count, const EvalSettings& settings,
                                 std::vector<PredictionRecord>* records =
                                     nullptr) {
  if (records) records->assign(size_t(count), PredictionRecord{});
  const int stages = model.config().stages + 1;
  struct Shard {
    std::vector<Real> stage_sum;
    Real mpvpe = 0, mrrpe = 0, miaa = 0, iv = 0;
    std::vector<Real> per_joint;
    int n = 0;
  };
  const int workers = std::max(1, std::min(settings.workers, count));
  std::vector<Shard> shards(static_cast<size_t>(workers));
  for (auto& s : shards) s.stage_sum.assign(size_t(stages), 0.0);
  std::atomic<bool> failed{false};
  std::string fail_msg;
  std::mutex fail_mu;

  auto work = [&](int widx) {
    try {
      Shard& sh = shards[size_t(widx)];
      for (int idx = widx; idx < count; idx += workers) {
        SceneSample sample = source(idx);
        Tape tape;
        BoundParams bp = model.bind(tape, false);
        ForwardVars fv = model.forward(tape, bp, sample.image);
        ModelOutput out = model.materialize(tape, fv);

        JointsPair gt_j{sample.gt.left.joints3d, sample.gt.right.joints3d};
        for (int s = 0; s < stages; ++s) {
          JointsPair pj{out.stages[size_t(s)].joints3d[0],
                        out.stages[size_t(s)].joints3d[1]};
          Real e = mpjpe(pj, gt_j, settings.config,
                         s == stages - 1 ? &sh.per_joint : nullptr);
          sh.stage_sum[size_t(s)] += e;
        }
        const StageEstimate& fin = out.stages.back();
        JointsPair pj{fin.joints3d[0], fin.joints3d[1]};
        VertsPair pv{fin.verts3d[0], fin.verts3d[1]};
        VertsPair gv{sample.gt.left.verts3d, sample.gt.right.verts3d};
        sh.mpvpe += mpvpe(pv, gv, pj, gt_j, settings.config);
        sh.mrrpe += mrrpe(fin.offset, sample.gt.offset);
        Real m = 0;
        m += miaa(fin.verts2d[0], sample.gt.left.verts3d,
                  WeakPerspectiveCam::from_tensor(sample.gt.left.camera));
        m += miaa(fin.verts2d[1], sample.gt.right.verts3d,
                  WeakPerspectiveCam::from_tensor(sample.gt.right.camera));
        sh.miaa += m / 2.0;
        if (settings.with_iv) {
          HandMesh lm{fin.verts3d[0], fin.joints3d[0],
                      &model.hand_template(Handed::left).faces};
          HandMesh rm{fin.verts3d[1], fin.joints3d[1],
                      &model.hand_template(Handed::right).faces};
          for (int i = 0; i < lm.vertices.shape[0]; ++i)
            for (int c = 0; c < 3; ++c)
              lm.vertices.at(i, c) += fin.offset.data[size_t(c)];
          sh.iv += interpenetration_volume(lm, rm,
                                           settings.config.iv_voxel_cm);
        }
        if (records) {
          PredictionRecord rec;
          rec.id = sample.id;
          rec.left = {fin.joints3d[0], fin.verts3d[0], fin.left.camera};
          rec.right = {fin.joints3d[1], fin.verts3d[1], fin.right.camera};
          rec.offset = fin.offset;
          (*records)[size_t(idx)] = std::move(rec);
        }
        ++sh.n;
      }
    } catch (const std::exception& e) {
      std::scoped_lock lk(fail_mu);
      failed = true;
      fail_msg = e.what();
    }
  };
  if (workers == 1) {
    work(0);
  } else {
    std::vector<std::thread> threads;
    for (int wk = 0; wk < workers; ++wk) threads.emplace_back(work, wk);
    for (auto& th : threads) th.join();
  }
  if (failed) throw_numeric("evaluation failed: " + fail_msg);

  EvalReport report;
  report.stage_mpjpe_mm.assign(size_t(stages), 0.0);
  std::vector<Real> pooled;
  for (const Shard& sh : shards) {
    for (int s = 0; s < stages; ++s)
      report.stage_mpjpe_mm[size_t(s)] += sh.stage_sum[size_t(s)];
    report.mpvpe_mm += sh.mpvpe;
    report.mrrpe_mm += sh.mrrpe;
    report.miaa_px += sh.miaa;
    report.iv_cm3 += sh.iv;
    pooled.insert(pooled.end(), sh.per_joint.begin(), sh.per_joint.end());
    report.samples += sh.n;
  }
  Real inv = report.samples > 0 ? 1.0 / report.samples : 0.0;
  for (Real& v : report.stage_mpjpe_mm) v *= inv;
  report.mpjpe_mm = report.stage_mpjpe_mm.back();
  report.mpvpe_mm *= inv;
  report.mrrpe_mm *= inv;
  report.miaa_px *= inv;
  report.iv_cm3 *= inv;
  report.pck = pck_auc(pooled, settings.config);
  report.auc = report.pck.auc;
  return report;
}

}  // namespace handrec
