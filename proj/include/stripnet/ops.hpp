#pragma once

#include <cmath>
#include <stdexcept>
#include <string>

#include "stripnet/parallel.hpp"
#include "stripnet/tensor.hpp"

namespace stripnet {

// Convolution is cross-correlation (no kernel flip), zero padding.
// "same" padding for stride 1 is floor(effective_extent / 2) per side.
struct ConvSpec {
  int stride = 1;
  int pad_top = 0, pad_bottom = 0, pad_left = 0, pad_right = 0;
  int groups = 1;
  int dilation = 1;

  void set_same_pad(std::int64_t kh, std::int64_t kw) {
    const int eh = static_cast<int>((kh - 1) * dilation + 1);
    const int ew = static_cast<int>((kw - 1) * dilation + 1);
    pad_top = pad_bottom = eh / 2;
    pad_left = pad_right = ew / 2;
  }
};

inline std::int64_t conv_out_dim(std::int64_t in, std::int64_t k, int pad_lo, int pad_hi, int stride,
                                 int dilation) {
  const std::int64_t eff = (k - 1) * dilation + 1;
  const std::int64_t span = in + pad_lo + pad_hi - eff;
  if (span < 0) return 0;
  return span / stride + 1;
}

namespace detail {
inline void check_conv_args(const Tensor& x, const Tensor& kernel, const Tensor& bias,
                            const ConvSpec& s) {
  if (s.stride < 1 || s.dilation < 1 || s.groups < 1) throw std::invalid_argument("conv2d: bad spec");
  if (s.pad_top < 0 || s.pad_bottom < 0 || s.pad_left < 0 || s.pad_right < 0)
    throw std::invalid_argument("conv2d: negative padding");
  const std::int64_t out_c = kernel.n(), in_cg = kernel.c();
  if (x.c() != in_cg * s.groups)
    throw std::invalid_argument("conv2d: input channels " + std::to_string(x.c()) +
                                " != kernel group channels " + std::to_string(in_cg) + " * groups " +
                                std::to_string(s.groups));
  if (out_c % s.groups != 0) throw std::invalid_argument("conv2d: out channels not divisible by groups");
  if (bias.numel() != out_c) throw std::invalid_argument("conv2d: bias size mismatch");
  if (conv_out_dim(x.h(), kernel.h(), s.pad_top, s.pad_bottom, s.stride, s.dilation) < 1 ||
      conv_out_dim(x.w(), kernel.w(), s.pad_left, s.pad_right, s.stride, s.dilation) < 1)
    throw std::invalid_argument("conv2d: zero-size spatial output for input " + x.shape_str());
}
}  // namespace detail

// kernel: (outC, inC/groups, kH, kW); bias: (outC,1,1,1); x: (N, inC, H, W).
namespace detail {

inline bool is_plain_pointwise(const Tensor& kernel, const ConvSpec& s) {
  return kernel.h() == 1 && kernel.w() == 1 && s.groups == 1 && s.stride == 1 &&
         s.pad_top == 0 && s.pad_bottom == 0 && s.pad_left == 0 && s.pad_right == 0;
}

inline bool is_unit_stride_depthwise(const Tensor& x, const Tensor& kernel, const ConvSpec& s) {
  return s.groups == x.c() && kernel.c() == 1 && kernel.n() == x.c() && s.stride == 1;
}

}  // namespace detail

inline Tensor conv2d_forward(const Tensor& x, const Tensor& kernel, const Tensor& bias,
                             const ConvSpec& s) {
  detail::check_conv_args(x, kernel, bias, s);
  const std::int64_t n = x.n(), in_cg = kernel.c(), out_c = kernel.n();
  const std::int64_t kh = kernel.h(), kw = kernel.w();
  const std::int64_t oh = conv_out_dim(x.h(), kh, s.pad_top, s.pad_bottom, s.stride, s.dilation);
  const std::int64_t ow = conv_out_dim(x.w(), kw, s.pad_left, s.pad_right, s.stride, s.dilation);
  const std::int64_t ocg = out_c / s.groups;
  Tensor out(n, out_c, oh, ow);

  // Both fast paths visit the taps of each output element in the same order
  // as the generic loop, so the arithmetic is identical, not just close.
  if (detail::is_plain_pointwise(kernel, s)) {
    const std::int64_t hw = oh * ow;
    parallel_for(n * out_c, [&](std::int64_t job) {
      const std::int64_t ni = job / out_c, oc = job % out_c;
      double* yp = out.data.data() + (ni * out_c + oc) * hw;
      const double b = bias.data[static_cast<std::size_t>(oc)];
      for (std::int64_t p = 0; p < hw; ++p) yp[p] = b;
      const double* xp = x.data.data() + ni * in_cg * hw;
      const double* wp = kernel.data.data() + oc * in_cg;
      for (std::int64_t ic = 0; ic < in_cg; ++ic) {
        const double w = wp[ic];
        const double* xr = xp + ic * hw;
        for (std::int64_t p = 0; p < hw; ++p) yp[p] += w * xr[p];
      }
    });
    return out;
  }
  if (detail::is_unit_stride_depthwise(x, kernel, s)) {
    const std::int64_t H = x.h(), W = x.w();
    parallel_for(n * out_c, [&](std::int64_t job) {
      const std::int64_t ni = job / out_c, c = job % out_c;
      double* yp = out.data.data() + (ni * out_c + c) * oh * ow;
      const double* xp = x.data.data() + (ni * out_c + c) * H * W;
      const double* kp = kernel.data.data() + c * kh * kw;
      const double b = bias.data[static_cast<std::size_t>(c)];
      for (std::int64_t p = 0; p < oh * ow; ++p) yp[p] = b;
      for (std::int64_t ky = 0; ky < kh; ++ky) {
        const std::int64_t dy = ky * s.dilation - s.pad_top;  // iy = oy + dy
        for (std::int64_t kx = 0; kx < kw; ++kx) {
          const std::int64_t dx = kx * s.dilation - s.pad_left;  // ix = ox + dx
          const double kv = kp[ky * kw + kx];
          const std::int64_t oy0 = std::max<std::int64_t>(0, -dy);
          const std::int64_t oy1 = std::min<std::int64_t>(oh, H - dy);
          const std::int64_t ox0 = std::max<std::int64_t>(0, -dx);
          const std::int64_t ox1 = std::min<std::int64_t>(ow, W - dx);
          for (std::int64_t oy = oy0; oy < oy1; ++oy) {
            double* yr = yp + oy * ow;
            const double* xr = xp + (oy + dy) * W + dx;
            for (std::int64_t ox = ox0; ox < ox1; ++ox) yr[ox] += kv * xr[ox];
          }
        }
      }
    });
    return out;
  }

  parallel_for(n * out_c, [&](std::int64_t job) {
    const std::int64_t ni = job / out_c, oc = job % out_c;
    const std::int64_t g = oc / ocg;
    for (std::int64_t oy = 0; oy < oh; ++oy) {
      for (std::int64_t ox = 0; ox < ow; ++ox) {
        double acc = bias.data[static_cast<std::size_t>(oc)];
        for (std::int64_t ic = 0; ic < in_cg; ++ic) {
          const std::int64_t xc = g * in_cg + ic;
          for (std::int64_t ky = 0; ky < kh; ++ky) {
            const std::int64_t iy = oy * s.stride - s.pad_top + ky * s.dilation;
            if (iy < 0 || iy >= x.h()) continue;
            for (std::int64_t kx = 0; kx < kw; ++kx) {
              const std::int64_t ix = ox * s.stride - s.pad_left + kx * s.dilation;
              if (ix < 0 || ix >= x.w()) continue;
              acc += x.at(ni, xc, iy, ix) * kernel.at(oc, ic, ky, kx);
            }
          }
        }
        out.at(ni, oc, oy, ox) = acc;
      }
    }
  });
  return out;
}

struct ConvGrads {
  Tensor grad_input, grad_kernel, grad_bias;
};

// Exact adjoints of conv2d_forward. Every output element is produced by a single
// job with a fixed accumulation order, so results do not depend on thread count.
inline ConvGrads conv2d_backward(const Tensor& grad_out, const Tensor& x, const Tensor& kernel,
                                 const ConvSpec& s) {
  const std::int64_t n = x.n(), in_cg = kernel.c(), out_c = kernel.n();
  const std::int64_t kh = kernel.h(), kw = kernel.w();
  const std::int64_t oh = grad_out.h(), ow = grad_out.w();
  const std::int64_t ocg = out_c / s.groups;
  ConvGrads g;
  g.grad_input = Tensor(x.n(), x.c(), x.h(), x.w());
  g.grad_kernel = Tensor(kernel.n(), kernel.c(), kernel.h(), kernel.w());
  g.grad_bias = Tensor(out_c, 1, 1, 1);

  parallel_for(out_c, [&](std::int64_t oc) {
    double acc = 0.0;
    for (std::int64_t ni = 0; ni < n; ++ni) {
      const double* gp = grad_out.data.data() + (ni * out_c + oc) * oh * ow;
      for (std::int64_t p = 0; p < oh * ow; ++p) acc += gp[p];
    }
    g.grad_bias.data[static_cast<std::size_t>(oc)] = acc;
  });

  if (detail::is_plain_pointwise(kernel, s)) {
    const std::int64_t hw = oh * ow;
    parallel_for(out_c * in_cg, [&](std::int64_t job) {
      const std::int64_t oc = job / in_cg, ic = job % in_cg;
      double acc = 0.0;
      for (std::int64_t ni = 0; ni < n; ++ni) {
        const double* gp = grad_out.data.data() + (ni * out_c + oc) * hw;
        const double* xp = x.data.data() + (ni * in_cg + ic) * hw;
        for (std::int64_t p = 0; p < hw; ++p) acc += gp[p] * xp[p];
      }
      g.grad_kernel.data[static_cast<std::size_t>(oc * in_cg + ic)] = acc;
    });
    parallel_for(n * in_cg, [&](std::int64_t job) {
      const std::int64_t ni = job / in_cg, ic = job % in_cg;
      double* gx = g.grad_input.data.data() + (ni * in_cg + ic) * hw;
      for (std::int64_t oc = 0; oc < out_c; ++oc) {
        const double w = kernel.data[static_cast<std::size_t>(oc * in_cg + ic)];
        const double* gp = grad_out.data.data() + (ni * out_c + oc) * hw;
        for (std::int64_t p = 0; p < hw; ++p) gx[p] += w * gp[p];
      }
    });
    return g;
  }
  if (detail::is_unit_stride_depthwise(x, kernel, s)) {
    const std::int64_t H = x.h(), W = x.w();
    parallel_for(out_c, [&](std::int64_t c) {
      for (std::int64_t ky = 0; ky < kh; ++ky) {
        const std::int64_t dy = ky * s.dilation - s.pad_top;
        for (std::int64_t kx = 0; kx < kw; ++kx) {
          const std::int64_t dx = kx * s.dilation - s.pad_left;
          const std::int64_t oy0 = std::max<std::int64_t>(0, -dy);
          const std::int64_t oy1 = std::min<std::int64_t>(oh, H - dy);
          const std::int64_t ox0 = std::max<std::int64_t>(0, -dx);
          const std::int64_t ox1 = std::min<std::int64_t>(ow, W - dx);
          double acc = 0.0;
          for (std::int64_t ni = 0; ni < n; ++ni) {
            const double* gp = grad_out.data.data() + (ni * out_c + c) * oh * ow;
            const double* xp = x.data.data() + (ni * out_c + c) * H * W;
            for (std::int64_t oy = oy0; oy < oy1; ++oy) {
              const double* gr = gp + oy * ow;
              const double* xr = xp + (oy + dy) * W + dx;
              for (std::int64_t ox = ox0; ox < ox1; ++ox) acc += gr[ox] * xr[ox];
            }
          }
          g.grad_kernel.data[static_cast<std::size_t>((c * kh + ky) * kw + kx)] = acc;
        }
      }
    });
    parallel_for(n * out_c, [&](std::int64_t job) {
      const std::int64_t ni = job / out_c, c = job % out_c;
      double* gx = g.grad_input.data.data() + (ni * out_c + c) * H * W;
      const double* gp = grad_out.data.data() + (ni * out_c + c) * oh * ow;
      const double* kp = kernel.data.data() + c * kh * kw;
      for (std::int64_t ky = 0; ky < kh; ++ky) {
        const std::int64_t dy = ky * s.dilation - s.pad_top;  // iy = oy + dy
        for (std::int64_t kx = 0; kx < kw; ++kx) {
          const std::int64_t dx = kx * s.dilation - s.pad_left;
          const double kv = kp[ky * kw + kx];
          const std::int64_t iy0 = std::max<std::int64_t>(0, dy);
          const std::int64_t iy1 = std::min<std::int64_t>(H, oh + dy);
          const std::int64_t ix0 = std::max<std::int64_t>(0, dx);
          const std::int64_t ix1 = std::min<std::int64_t>(W, ow + dx);
          for (std::int64_t iy = iy0; iy < iy1; ++iy) {
            double* gr = gx + iy * W;
            const double* sr = gp + (iy - dy) * ow - dx;
            for (std::int64_t ix = ix0; ix < ix1; ++ix) gr[ix] += kv * sr[ix];
          }
        }
      }
    });
    return g;
  }

  // Gather form per kernel tap.
  parallel_for(out_c * in_cg, [&](std::int64_t job) {
    const std::int64_t oc = job / in_cg, ic = job % in_cg;
    const std::int64_t gI = oc / ocg;
    const std::int64_t xc = gI * in_cg + ic;
    for (std::int64_t ky = 0; ky < kh; ++ky) {
      for (std::int64_t kx = 0; kx < kw; ++kx) {
        double acc = 0.0;
        for (std::int64_t ni = 0; ni < n; ++ni) {
          for (std::int64_t oy = 0; oy < oh; ++oy) {
            const std::int64_t iy = oy * s.stride - s.pad_top + ky * s.dilation;
            if (iy < 0 || iy >= x.h()) continue;
            for (std::int64_t ox = 0; ox < ow; ++ox) {
              const std::int64_t ix = ox * s.stride - s.pad_left + kx * s.dilation;
              if (ix < 0 || ix >= x.w()) continue;
              acc += grad_out.at(ni, oc, oy, ox) * x.at(ni, xc, iy, ix);
            }
          }
        }
        g.grad_kernel.at(oc, ic, ky, kx) = acc;
      }
    }
  });

  // Gather form per input cell: output index must be integer and in range.
  parallel_for(n * x.c(), [&](std::int64_t job) {
    const std::int64_t ni = job / x.c(), xc = job % x.c();
    const std::int64_t gI = xc / in_cg;
    const std::int64_t ic = xc % in_cg;
    for (std::int64_t iy = 0; iy < x.h(); ++iy) {
      for (std::int64_t ix = 0; ix < x.w(); ++ix) {
        double acc = 0.0;
        for (std::int64_t oc = gI * ocg; oc < (gI + 1) * ocg; ++oc) {
          for (std::int64_t ky = 0; ky < kh; ++ky) {
            const std::int64_t num_y = iy + s.pad_top - ky * s.dilation;
            if (num_y < 0 || num_y % s.stride != 0) continue;
            const std::int64_t oy = num_y / s.stride;
            if (oy >= oh) continue;
            for (std::int64_t kx = 0; kx < kw; ++kx) {
              const std::int64_t num_x = ix + s.pad_left - kx * s.dilation;
              if (num_x < 0 || num_x % s.stride != 0) continue;
              const std::int64_t ox = num_x / s.stride;
              if (ox >= ow) continue;
              acc += grad_out.at(ni, oc, oy, ox) * kernel.at(oc, ic, ky, kx);
            }
          }
        }
        g.grad_input.at(ni, xc, iy, ix) = acc;
      }
    }
  });
  return g;
}

// x: (N, D, 1, 1), weight: (O, D, 1, 1), bias: (O,1,1,1) -> (N, O, 1, 1).
inline Tensor linear_forward(const Tensor& x, const Tensor& weight, const Tensor& bias) {
  if (x.h() != 1 || x.w() != 1) throw std::invalid_argument("linear: x must be (N,D,1,1)");
  const std::int64_t n = x.n(), d = x.c(), o = weight.n();
  if (weight.c() != d) throw std::invalid_argument("linear: weight in-dim mismatch");
  if (bias.numel() != o) throw std::invalid_argument("linear: bias size mismatch");
  Tensor out(n, o, 1, 1);
  parallel_for(n, [&](std::int64_t ni) {
    const double* xr = x.data.data() + ni * d;
    double* yr = out.data.data() + ni * o;
    for (std::int64_t oi = 0; oi < o; ++oi) {
      const double* wr = weight.data.data() + oi * d;
      double acc = bias.data[static_cast<std::size_t>(oi)];
      for (std::int64_t di = 0; di < d; ++di) acc += wr[di] * xr[di];
      yr[oi] = acc;
    }
  });
  return out;
}

struct LinearGrads {
  Tensor grad_input, grad_weight, grad_bias;
};

inline LinearGrads linear_backward(const Tensor& grad_out, const Tensor& x, const Tensor& weight) {
  const std::int64_t n = x.n(), d = x.c(), o = weight.n();
  LinearGrads g;
  g.grad_input = Tensor(n, d, 1, 1);
  g.grad_weight = Tensor(o, d, 1, 1);
  g.grad_bias = Tensor(o, 1, 1, 1);
  parallel_for(n, [&](std::int64_t ni) {
    double* gx = g.grad_input.data.data() + ni * d;
    const double* gp = grad_out.data.data() + ni * o;
    for (std::int64_t oi = 0; oi < o; ++oi) {
      const double gv = gp[oi];
      const double* wr = weight.data.data() + oi * d;
      for (std::int64_t di = 0; di < d; ++di) gx[di] += gv * wr[di];
    }
  });
  parallel_for(o, [&](std::int64_t oi) {
    double* gw = g.grad_weight.data.data() + oi * d;
    double acc = 0.0;
    for (std::int64_t ni = 0; ni < n; ++ni) {
      const double gv = grad_out.data[static_cast<std::size_t>(ni * o + oi)];
      const double* xr = x.data.data() + ni * d;
      for (std::int64_t di = 0; di < d; ++di) gw[di] += gv * xr[di];
      acc += gv;
    }
    g.grad_bias.data[static_cast<std::size_t>(oi)] = acc;
  });
  return g;
}

// Exact Gaussian CDF form, not the tanh approximation.
inline double gelu_scalar(double x) { return 0.5 * x * (1.0 + std::erf(x / std::sqrt(2.0))); }

inline double gelu_grad_scalar(double x) {
  const double phi = std::exp(-0.5 * x * x) / std::sqrt(2.0 * 3.14159265358979323846);
  const double Phi = 0.5 * (1.0 + std::erf(x / std::sqrt(2.0)));
  return Phi + x * phi;
}

inline Tensor relu_forward(const Tensor& x) {
  Tensor out = x;
  for (double& v : out.data) v = v > 0.0 ? v : 0.0;
  return out;
}

inline Tensor relu_backward(const Tensor& grad_out, const Tensor& x) {
  Tensor g = grad_out;
  for (std::int64_t i = 0; i < x.numel(); ++i)
    if (x.data[static_cast<std::size_t>(i)] <= 0.0) g.data[static_cast<std::size_t>(i)] = 0.0;
  return g;
}

inline Tensor gelu_forward(const Tensor& x) {
  Tensor out = x;
  for (double& v : out.data) v = gelu_scalar(v);
  return out;
}

inline Tensor gelu_backward(const Tensor& grad_out, const Tensor& x) {
  Tensor g = grad_out;
  for (std::int64_t i = 0; i < x.numel(); ++i)
    g.data[static_cast<std::size_t>(i)] *= gelu_grad_scalar(x.data[static_cast<std::size_t>(i)]);
  return g;
}

inline Tensor add_forward(const Tensor& a, const Tensor& b) {
  if (!a.same_shape(b)) throw std::invalid_argument("add: shape mismatch");
  Tensor out = a;
  for (std::int64_t i = 0; i < a.numel(); ++i) out.data[static_cast<std::size_t>(i)] += b.data[static_cast<std::size_t>(i)];
  return out;
}

inline Tensor mul_forward(const Tensor& a, const Tensor& b) {
  if (!a.same_shape(b)) throw std::invalid_argument("mul: shape mismatch");
  Tensor out = a;
  for (std::int64_t i = 0; i < a.numel(); ++i) out.data[static_cast<std::size_t>(i)] *= b.data[static_cast<std::size_t>(i)];
  return out;
}

enum class NormMode { kBatchStats, kFrozen };

struct NormStats {
  std::vector<double> mean, var;
};

inline constexpr double kNormEps = 1e-5;

// Per-channel standardization over (N, H, W) with learnable scale and shift.
// kBatchStats computes biased batch statistics and reports them via batch_out;
// kFrozen standardizes with the supplied stats.
inline Tensor normalize_channels_forward(const Tensor& x, const Tensor& scale, const Tensor& shift,
                                         NormMode mode, const NormStats& frozen,
                                         NormStats* batch_out, double eps = kNormEps) {
  const std::int64_t n = x.n(), c = x.c(), h = x.h(), w = x.w();
  if (scale.numel() != c || shift.numel() != c)
    throw std::invalid_argument("normalize_channels: scale/shift size mismatch");
  const std::int64_t m = n * h * w;
  if (m < 1) throw std::invalid_argument("normalize_channels: empty input");
  // A single value per channel has zero batch variance; the output would
  // collapse to the shift and every upstream gradient would vanish. Fail
  // loudly instead.
  if (mode == NormMode::kBatchStats && m < 2)
    throw std::invalid_argument(
        "normalize_channels: batch statistics need at least 2 values per channel, got 1 "
        "(batch " + std::to_string(n) + ", map " + std::to_string(h) + "x" + std::to_string(w) + ")");
  NormStats local;
  const NormStats* use = nullptr;
  if (mode == NormMode::kBatchStats) {
    local.mean.assign(static_cast<std::size_t>(c), 0.0);
    local.var.assign(static_cast<std::size_t>(c), 0.0);
    for (std::int64_t ci = 0; ci < c; ++ci) {
      double s = 0.0;
      for (std::int64_t ni = 0; ni < n; ++ni)
        for (std::int64_t yi = 0; yi < h; ++yi)
          for (std::int64_t xi = 0; xi < w; ++xi) s += x.at(ni, ci, yi, xi);
      const double mean = s / static_cast<double>(m);
      double v = 0.0;
      for (std::int64_t ni = 0; ni < n; ++ni)
        for (std::int64_t yi = 0; yi < h; ++yi)
          for (std::int64_t xi = 0; xi < w; ++xi) {
            const double d = x.at(ni, ci, yi, xi) - mean;
            v += d * d;
          }
      local.mean[static_cast<std::size_t>(ci)] = mean;
      local.var[static_cast<std::size_t>(ci)] = v / static_cast<double>(m);
    }
    if (batch_out) *batch_out = local;
    use = &local;
  } else {
    if (static_cast<std::int64_t>(frozen.mean.size()) != c ||
        static_cast<std::int64_t>(frozen.var.size()) != c)
      throw std::invalid_argument("normalize_channels: frozen stats size mismatch");
    use = &frozen;
  }
  Tensor out(n, c, h, w);
  for (std::int64_t ci = 0; ci < c; ++ci) {
    const double mean = use->mean[static_cast<std::size_t>(ci)];
    const double inv = 1.0 / std::sqrt(use->var[static_cast<std::size_t>(ci)] + eps);
    const double sc = scale.data[static_cast<std::size_t>(ci)];
    const double sh = shift.data[static_cast<std::size_t>(ci)];
    for (std::int64_t ni = 0; ni < n; ++ni)
      for (std::int64_t yi = 0; yi < h; ++yi)
        for (std::int64_t xi = 0; xi < w; ++xi)
          out.at(ni, ci, yi, xi) = (x.at(ni, ci, yi, xi) - mean) * inv * sc + sh;
  }
  return out;
}

struct NormGrads {
  Tensor grad_input, grad_scale, grad_shift;
};

// stats must be the statistics used in the forward pass (batch stats for
// kBatchStats, frozen stats for kFrozen).
inline NormGrads normalize_channels_backward(const Tensor& grad_out, const Tensor& x,
                                             const Tensor& scale, NormMode mode,
                                             const NormStats& stats, double eps = kNormEps) {
  const std::int64_t n = x.n(), c = x.c(), h = x.h(), w = x.w();
  const std::int64_t m = n * h * w;
  NormGrads g;
  g.grad_input = Tensor(n, c, h, w);
  g.grad_scale = Tensor(c, 1, 1, 1);
  g.grad_shift = Tensor(c, 1, 1, 1);
  for (std::int64_t ci = 0; ci < c; ++ci) {
    const double mean = stats.mean[static_cast<std::size_t>(ci)];
    const double var = stats.var[static_cast<std::size_t>(ci)];
    const double inv = 1.0 / std::sqrt(var + eps);
    const double sc = scale.data[static_cast<std::size_t>(ci)];
    double sum_gy = 0.0, sum_gy_xhat = 0.0;
    for (std::int64_t ni = 0; ni < n; ++ni)
      for (std::int64_t yi = 0; yi < h; ++yi)
        for (std::int64_t xi = 0; xi < w; ++xi) {
          const double gy = grad_out.at(ni, ci, yi, xi);
          const double xhat = (x.at(ni, ci, yi, xi) - mean) * inv;
          sum_gy += gy;
          sum_gy_xhat += gy * xhat;
        }
    g.grad_shift.data[static_cast<std::size_t>(ci)] = sum_gy;
    g.grad_scale.data[static_cast<std::size_t>(ci)] = sum_gy_xhat;
    if (mode == NormMode::kFrozen) {
      for (std::int64_t ni = 0; ni < n; ++ni)
        for (std::int64_t yi = 0; yi < h; ++yi)
          for (std::int64_t xi = 0; xi < w; ++xi)
            g.grad_input.at(ni, ci, yi, xi) = grad_out.at(ni, ci, yi, xi) * sc * inv;
    } else {
      // Batch statistics depend on x: full batch-norm backward.
      const double inv_m = 1.0 / static_cast<double>(m);
      for (std::int64_t ni = 0; ni < n; ++ni)
        for (std::int64_t yi = 0; yi < h; ++yi)
          for (std::int64_t xi = 0; xi < w; ++xi) {
            const double gy = grad_out.at(ni, ci, yi, xi);
            const double xhat = (x.at(ni, ci, yi, xi) - mean) * inv;
            g.grad_input.at(ni, ci, yi, xi) =
                sc * inv * (gy - inv_m * sum_gy - xhat * inv_m * sum_gy_xhat);
          }
    }
  }
  return g;
}

}  // namespace stripnet
