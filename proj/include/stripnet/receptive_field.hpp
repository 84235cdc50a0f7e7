#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "stripnet/autograd.hpp"
#include "stripnet/strip_module.hpp"

namespace stripnet {

// Probe point inside the module pipeline.
enum class RfStage { kSquare, kAttention, kOutput };

inline const char* rf_stage_name(RfStage s) {
  switch (s) {
    case RfStage::kSquare: return "square";
    case RfStage::kAttention: return "attention";
    case RfStage::kOutput: return "output";
  }
  return "?";
}

inline RfStage rf_stage_by_name(const std::string& s) {
  if (s == "square") return RfStage::kSquare;
  if (s == "attention") return RfStage::kAttention;
  if (s == "output") return RfStage::kOutput;
  throw std::invalid_argument("unknown probe stage: " + s);
}

// Bounding box of the theoretical input support of one probed pixel.
struct RfExtent {
  std::int64_t h = 0, w = 0;
};

inline RfExtent rf_extent(const StripModuleConfig& cfg, RfStage stage) {
  cfg.validate();
  const std::int64_t k = cfg.k;
  const std::int64_t sq = cfg.square_side;
  switch (stage) {
    case RfStage::kSquare:
      switch (cfg.design) {
        case ModuleDesign::kSingleSquare: return {cfg.single_side, cfg.single_side};
        case ModuleDesign::kNoSquare:
          throw std::invalid_argument("receptive field: design has no square stage");
        default: return {sq, sq};
      }
    case RfStage::kAttention:
    case RfStage::kOutput:
      switch (cfg.design) {
        case ModuleDesign::kSequential: return {sq + k - 1, sq + k - 1};
        case ModuleDesign::kParallel: return {sq + k - 1, sq + k - 1};  // cross fits this box
        case ModuleDesign::kSquareBig: return {sq + cfg.big_side - 1, sq + cfg.big_side - 1};
        case ModuleDesign::kDilatedSquare: {
          const std::int64_t eff = (cfg.dilated_side - 1) * cfg.dilation + 1;
          return {sq + eff - 1, sq + eff - 1};
        }
        case ModuleDesign::kNoSquare: return {k, k};
        case ModuleDesign::kSingleSquare: return {cfg.single_side, cfg.single_side};
      }
  }
  throw std::logic_error("receptive field: unreachable");
}

// Pixels the theoretical support actually touches. Equals the extent box for
// every design except kParallel, whose support is a cross of two strips.
inline std::int64_t rf_expected_count(const StripModuleConfig& cfg, RfStage stage) {
  const RfExtent e = rf_extent(cfg, stage);
  if (stage != RfStage::kSquare && cfg.design == ModuleDesign::kParallel) {
    const std::int64_t arm_long = cfg.square_side + cfg.k - 1;
    const std::int64_t arm_short = cfg.square_side;
    return 2 * arm_long * arm_short - arm_short * arm_short;
  }
  return e.h * e.w;
}

struct RfResult {
  std::int64_t h = 0, w = 0;
  std::vector<std::uint8_t> mask;  // row-major h*w, 1 where the probe sees the input
  std::int64_t y0 = 0, x0 = 0, y1 = -1, x1 = -1;  // tight inclusive bounds
  std::int64_t count = 0;

  bool at(std::int64_t y, std::int64_t x) const {
    return mask[static_cast<std::size_t>(y * w + x)] != 0;
  }
};

namespace detail {
inline void fill_const(const ag::Var& v, double value) {
  v->value.fill(value);
}
}  // namespace detail

// Empirical support of one output pixel, measured by backpropagation.
//
// Kernels are overwritten with positive constants and the input is all ones,
// so every contributing path has positive weight and no cancellation can hide
// a reachable pixel; the mask is |grad| > 1e-12 OR-ed over input channels.
// The probe must stay at least (extent-1)/2 away from every border, otherwise
// zero padding would clip the support and understate it.
inline RfResult receptive_field(const StripModuleConfig& cfg, RfStage stage, std::int64_t in_h,
                                std::int64_t in_w, std::int64_t probe_y, std::int64_t probe_x) {
  cfg.validate();
  const RfExtent ext = rf_extent(cfg, stage);
  const std::int64_t margin_y = (ext.h - 1) / 2;
  const std::int64_t margin_x = (ext.w - 1) / 2;
  if (probe_y - margin_y < 0 || probe_y + margin_y >= in_h || probe_x - margin_x < 0 ||
      probe_x + margin_x >= in_w)
    throw std::invalid_argument(
        "receptive field: probe (" + std::to_string(probe_y) + "," + std::to_string(probe_x) +
        ") is within " + std::to_string(margin_y) + "/" + std::to_string(margin_x) +
        " of the border of a " + std::to_string(in_h) + "x" + std::to_string(in_w) +
        " input; the support would be clipped");

  std::mt19937_64 rng(1);
  StripModuleParams p = init_strip_module(cfg, rng, "rf");
  if (p.square_k) detail::fill_const(p.square_k, 0.1);
  if (p.big_k) detail::fill_const(p.big_k, 0.1);
  if (p.h_k) detail::fill_const(p.h_k, 0.1);
  if (p.v_k) detail::fill_const(p.v_k, 0.1);
  detail::fill_const(p.pw_k, 0.05);

  Tensor xin(1, cfg.channels, in_h, in_w);
  xin.fill(1.0);
  ag::Var x = ag::leaf(std::move(xin), true, "rf.input");

  ag::Var out;
  switch (stage) {
    case RfStage::kSquare:
      out = detail::depthwise(x, p.square_k, p.square_b, cfg.channels);
      break;
    case RfStage::kAttention:
      out = strip_module_attention(p, x);
      break;
    case RfStage::kOutput:
      out = strip_module_forward(p, x);
      break;
  }

  Tensor seed(out->value.dims[0], out->value.dims[1], out->value.dims[2], out->value.dims[3]);
  seed.at(0, 0, probe_y, probe_x) = 1.0;
  ag::Var score = ag::dot(out, seed);
  ag::backward(score);

  RfResult r;
  r.h = in_h;
  r.w = in_w;
  r.mask.assign(static_cast<std::size_t>(in_h * in_w), 0);
  r.y0 = in_h;
  r.x0 = in_w;
  for (std::int64_t y = 0; y < in_h; ++y) {
    for (std::int64_t xx = 0; xx < in_w; ++xx) {
      bool hit = false;
      for (std::int64_t c = 0; c < cfg.channels && !hit; ++c)
        hit = std::abs(x->grad.at(0, c, y, xx)) > 1e-12;
      if (hit) {
        r.mask[static_cast<std::size_t>(y * in_w + xx)] = 1;
        ++r.count;
        if (y < r.y0) r.y0 = y;
        if (y > r.y1) r.y1 = y;
        if (xx < r.x0) r.x0 = xx;
        if (xx > r.x1) r.x1 = xx;
      }
    }
  }
  return r;
}

}  // namespace stripnet
