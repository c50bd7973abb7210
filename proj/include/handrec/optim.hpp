#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "handrec/tensor.hpp"

namespace handrec {

struct AdamWConfig {
  Real lr = 3e-4;
  Real beta1 = 0.9;
  Real beta2 = 0.999;
  Real eps = 1e-8;
  Real weight_decay = 0.01;
  Real clip_norm = 10.0;  // global L2 clip; 0 disables
};

// cosine decay over whole epochs: lr(e) = base * 0.5 * (1 + cos(pi e / E))
inline Real cosine_lr(Real base, int epoch, int total_epochs) {
  if (total_epochs < 1) throw_invalid("cosine_lr: total_epochs must be >= 1");
  return base * 0.5 * (1.0 + std::cos(M_PI * Real(epoch) / Real(total_epochs)));
}

// Decoupled-weight-decay adaptive optimizer over a flat list of parameter
// tensors. Moment buffers are keyed by position; callers must keep the
// parameter list order stable.
class AdamW {
 public:
  explicit AdamW(AdamWConfig cfg = {}) : cfg_(cfg) {}

  const AdamWConfig& config() const { return cfg_; }
  int64_t step_count() const { return step_; }

  // One update over matched param/grad lists; effective lr follows the
  // cosine schedule at `epoch` of `total_epochs`.
  void step(std::vector<Tensor*> params, const std::vector<Tensor>& grads,
            int epoch, int total_epochs) {
    if (params.size() != grads.size())
      throw_invalid("adamw: param/grad count mismatch");
    if (m_.empty()) {
      m_.resize(params.size());
      v_.resize(params.size());
      for (size_t i = 0; i < params.size(); ++i) {
        m_[i] = Tensor(params[i]->shape);
        v_[i] = Tensor(params[i]->shape);
      }
    }
    for (size_t i = 0; i < params.size(); ++i) {
      if (!params[i]->same_shape(grads[i]))
        throw_invalid("adamw: grad shape mismatch at index " +
                      std::to_string(i));
      if (!grads[i].all_finite())
        throw_numeric("adamw: non-finite gradient at index " +
                      std::to_string(i) + "; step rejected");
    }

    Real clip = 1.0;
    if (cfg_.clip_norm > 0) {
      Real sq = 0;
      for (const Tensor& g : grads)
        for (Real v : g.data) sq += v * v;
      Real norm = std::sqrt(sq);
      if (norm > cfg_.clip_norm) clip = cfg_.clip_norm / norm;
    }

    ++step_;
    Real lr = cosine_lr(cfg_.lr, epoch, total_epochs);
    Real bc1 = 1.0 - std::pow(cfg_.beta1, Real(step_));
    Real bc2 = 1.0 - std::pow(cfg_.beta2, Real(step_));
    for (size_t i = 0; i < params.size(); ++i) {
      Tensor& p = *params[i];
      const Tensor& g = grads[i];
      Tensor& m = m_[i];
      Tensor& v = v_[i];
      for (size_t k = 0; k < p.data.size(); ++k) {
        Real gk = g.data[k] * clip;
        m.data[k] = cfg_.beta1 * m.data[k] + (1.0 - cfg_.beta1) * gk;
        v.data[k] = cfg_.beta2 * v.data[k] + (1.0 - cfg_.beta2) * gk * gk;
        Real mhat = m.data[k] / bc1;
        Real vhat = v.data[k] / bc2;
        p.data[k] -= lr * (mhat / (std::sqrt(vhat) + cfg_.eps) +
                           cfg_.weight_decay * p.data[k]);
      }
    }
  }

  // Serialized alongside checkpoints so training can resume bit-exactly.
  std::vector<Tensor>& first_moments() { return m_; }
  std::vector<Tensor>& second_moments() { return v_; }
  void set_step_count(int64_t s) { step_ = s; }

 private:
  AdamWConfig cfg_;
  std::vector<Tensor> m_, v_;
  int64_t step_ = 0;
};

}  // namespace handrec
