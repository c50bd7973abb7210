#pragma once

#include <algorithm>
#include <cmath>
#include <initializer_list>
#include <numeric>
#include <sstream>
#include <vector>

#include "handrec/common.hpp"

namespace handrec {

// Dense row-major tensor of doubles. Shapes are small (<= 4 axes in
// practice); all bounds logic lives in the ops that consume it.
struct Tensor {
  std::vector<int> shape;
  std::vector<Real> data;

  Tensor() = default;
  explicit Tensor(std::vector<int> s) : shape(std::move(s)) {
    data.assign(size_t(numel_of(shape)), 0.0);
  }
  Tensor(std::vector<int> s, std::vector<Real> d)
      : shape(std::move(s)), data(std::move(d)) {
    if (int64_t(data.size()) != numel_of(shape))
      throw_invalid("tensor: data length does not match shape");
  }

  static int64_t numel_of(const std::vector<int>& s) {
    int64_t n = 1;
    for (int d : s) n *= d;
    return n;
  }

  static Tensor zeros(std::vector<int> s) { return Tensor(std::move(s)); }

  static Tensor full(std::vector<int> s, Real v) {
    Tensor t(std::move(s));
    std::fill(t.data.begin(), t.data.end(), v);
    return t;
  }

  static Tensor scalar(Real v) { return Tensor({1}, {v}); }

  static Tensor from(std::vector<int> s, std::initializer_list<Real> vals) {
    return Tensor(std::move(s), std::vector<Real>(vals));
  }

  int64_t numel() const { return int64_t(data.size()); }
  int rank() const { return int(shape.size()); }
  int size(int axis) const { return shape[size_t(axis)]; }

  Real& at(int i) { return data[size_t(i)]; }
  Real at(int i) const { return data[size_t(i)]; }
  Real& at(int i, int j) { return data[size_t(i) * shape[1] + j]; }
  Real at(int i, int j) const { return data[size_t(i) * shape[1] + j]; }
  Real& at(int i, int j, int k) {
    return data[(size_t(i) * shape[1] + j) * shape[2] + k];
  }
  Real at(int i, int j, int k) const {
    return data[(size_t(i) * shape[1] + j) * shape[2] + k];
  }
  Real& at(int i, int j, int k, int l) {
    return data[((size_t(i) * shape[1] + j) * shape[2] + k) * shape[3] + l];
  }
  Real at(int i, int j, int k, int l) const {
    return data[((size_t(i) * shape[1] + j) * shape[2] + k) * shape[3] + l];
  }

  bool same_shape(const Tensor& o) const { return shape == o.shape; }

  bool all_finite() const {
    for (Real v : data)
      if (!std::isfinite(v)) return false;
    return true;
  }

  std::string shape_str() const {
    std::ostringstream os;
    os << "(";
    for (size_t i = 0; i < shape.size(); ++i)
      os << shape[i] << (i + 1 < shape.size() ? "," : "");
    os << ")";
    return os.str();
  }
};

inline bool bitwise_equal(const Tensor& a, const Tensor& b) {
  if (a.shape != b.shape) return false;
  for (size_t i = 0; i < a.data.size(); ++i)
    if (a.data[i] != b.data[i]) return false;
  return true;
}

inline Real max_abs_diff(const Tensor& a, const Tensor& b) {
  if (a.shape != b.shape) return std::numeric_limits<Real>::infinity();
  Real m = 0;
  for (size_t i = 0; i < a.data.size(); ++i)
    m = std::max(m, std::abs(a.data[i] - b.data[i]));
  return m;
}

inline Tensor randn(std::vector<int> s, Rng& rng, Real sigma = 1.0) {
  Tensor t(std::move(s));
  for (Real& v : t.data) v = rng.normal() * sigma;
  return t;
}

inline Tensor rand_uniform(std::vector<int> s, Rng& rng, Real lo, Real hi) {
  Tensor t(std::move(s));
  for (Real& v : t.data) v = rng.uniform(lo, hi);
  return t;
}

// Xavier-uniform by fan counts; the default init for all dense/conv weights.
inline Tensor xavier(std::vector<int> s, Rng& rng, int fan_in, int fan_out) {
  Real a = std::sqrt(6.0 / Real(fan_in + fan_out));
  return rand_uniform(std::move(s), rng, -a, a);
}

}  // namespace handrec
