#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <stdexcept>
#include <string>
#include <vector>

namespace stripnet {

// Dense 4-D tensor, NCHW, row-major, double precision.
// 2-D data (linear layers) lives in (N, D, 1, 1); per-channel vectors in (C, 1, 1, 1).
struct Tensor {
  std::array<std::int64_t, 4> dims{0, 0, 0, 0};
  std::vector<double> data;

  Tensor() = default;
  Tensor(std::int64_t n, std::int64_t c, std::int64_t h, std::int64_t w) { resize(n, c, h, w); }

  void resize(std::int64_t n, std::int64_t c, std::int64_t h, std::int64_t w) {
    if (n < 0 || c < 0 || h < 0 || w < 0) throw std::invalid_argument("tensor: negative dim");
    dims = {n, c, h, w};
    data.assign(static_cast<std::size_t>(n * c * h * w), 0.0);
  }

  std::int64_t numel() const { return static_cast<std::int64_t>(data.size()); }
  std::int64_t n() const { return dims[0]; }
  std::int64_t c() const { return dims[1]; }
  std::int64_t h() const { return dims[2]; }
  std::int64_t w() const { return dims[3]; }

  std::int64_t index(std::int64_t n_, std::int64_t c_, std::int64_t h_, std::int64_t w_) const {
    return ((n_ * dims[1] + c_) * dims[2] + h_) * dims[3] + w_;
  }
  double& at(std::int64_t n_, std::int64_t c_, std::int64_t h_, std::int64_t w_) {
    return data[static_cast<std::size_t>(index(n_, c_, h_, w_))];
  }
  double at(std::int64_t n_, std::int64_t c_, std::int64_t h_, std::int64_t w_) const {
    return data[static_cast<std::size_t>(index(n_, c_, h_, w_))];
  }

  bool same_shape(const Tensor& o) const { return dims == o.dims; }

  void fill(double v) { std::fill(data.begin(), data.end(), v); }

  Tensor reshaped(std::int64_t n_, std::int64_t c_, std::int64_t h_, std::int64_t w_) const {
    if (n_ * c_ * h_ * w_ != numel()) throw std::invalid_argument("reshape: element count mismatch");
    Tensor out = *this;
    out.dims = {n_, c_, h_, w_};
    return out;
  }

  static Tensor zeros(std::int64_t n, std::int64_t c, std::int64_t h, std::int64_t w) {
    return Tensor(n, c, h, w);
  }
  static Tensor full(std::int64_t n, std::int64_t c, std::int64_t h, std::int64_t w, double v) {
    Tensor t(n, c, h, w);
    t.fill(v);
    return t;
  }
  // Row-major fill, mostly for fixtures in tests.
  static Tensor of(std::int64_t n, std::int64_t c, std::int64_t h, std::int64_t w,
                   std::initializer_list<double> vals) {
    Tensor t(n, c, h, w);
    if (static_cast<std::int64_t>(vals.size()) != t.numel())
      throw std::invalid_argument("Tensor::of: value count mismatch");
    std::size_t i = 0;
    for (double v : vals) t.data[i++] = v;
    return t;
  }

  std::string shape_str() const {
    return "(" + std::to_string(dims[0]) + "," + std::to_string(dims[1]) + "," +
           std::to_string(dims[2]) + "," + std::to_string(dims[3]) + ")";
  }
};

inline double max_abs_diff(const Tensor& a, const Tensor& b) {
  if (!a.same_shape(b)) throw std::invalid_argument("max_abs_diff: shape mismatch");
  double m = 0.0;
  for (std::int64_t i = 0; i < a.numel(); ++i)
    m = std::max(m, std::fabs(a.data[static_cast<std::size_t>(i)] - b.data[static_cast<std::size_t>(i)]));
  return m;
}

inline double max_abs(const Tensor& a) {
  double m = 0.0;
  for (double v : a.data) m = std::max(m, std::fabs(v));
  return m;
}

inline bool all_finite(const Tensor& a) {
  for (double v : a.data)
    if (!std::isfinite(v)) return false;
  return true;
}

// <a, b> over all elements; shapes must match.
inline double dot_all(const Tensor& a, const Tensor& b) {
  if (!a.same_shape(b)) throw std::invalid_argument("dot_all: shape mismatch");
  double s = 0.0;
  for (std::int64_t i = 0; i < a.numel(); ++i)
    s += a.data[static_cast<std::size_t>(i)] * b.data[static_cast<std::size_t>(i)];
  return s;
}

}  // namespace stripnet
