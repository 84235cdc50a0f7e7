#pragma once

#include <array>
#include <cstdint>
#include <memory>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "stripnet/autograd.hpp"
#include "stripnet/init.hpp"
#include "stripnet/strip_module.hpp"

namespace stripnet {

// Four-stage hierarchical backbone. Stage layout:
//   stem   7x7 stride 4 pad 3 conv + norm, then depths[0] blocks
//   embed  3x3 stride 2 pad 1 conv + norm between stages
// Each block is two residual sub-blocks:
//   x + pw2(strip(gelu(pw1(norm1(x)))))
//   x + ffn_out(gelu(ffn_dw(ffn_in(norm2(x)))))
struct VariantConfig {
  std::string name = "custom";
  std::array<int, 4> channels{32, 64, 160, 256};
  std::array<int, 4> depths{3, 3, 5, 2};
  std::array<int, 4> strip_kernels{19, 19, 19, 19};
  std::array<int, 4> ffn_ratios{8, 8, 4, 4};
  int in_channels = 3;
  ModuleDesign design = ModuleDesign::kSequential;
  bool row_first = true;
  std::uint64_t init_seed = 42;
  // Published budgets used for deviation reporting; 0 means none.
  double ref_params = 0.0;
  double ref_macs_1024 = 0.0;

  void validate() const {
    if (in_channels < 1) throw std::invalid_argument("variant: in_channels < 1");
    for (int i = 0; i < 4; ++i) {
      if (channels[static_cast<std::size_t>(i)] < 1) throw std::invalid_argument("variant: channels < 1");
      if (depths[static_cast<std::size_t>(i)] < 1) throw std::invalid_argument("variant: depths < 1");
      if (ffn_ratios[static_cast<std::size_t>(i)] < 1) throw std::invalid_argument("variant: ffn ratio < 1");
      const int k = strip_kernels[static_cast<std::size_t>(i)];
      if (k < 1 || k % 2 == 0) throw std::invalid_argument("variant: strip kernel must be odd");
    }
  }
};

inline VariantConfig stripnet_t() {
  VariantConfig v;
  v.name = "stripnet-t";
  v.channels = {32, 64, 160, 256};
  v.depths = {3, 3, 5, 2};
  v.ref_params = 3.8e6;
  v.ref_macs_1024 = 18.2e9;
  return v;
}

inline VariantConfig stripnet_s() {
  VariantConfig v;
  v.name = "stripnet-s";
  v.channels = {64, 128, 320, 512};
  v.depths = {2, 2, 4, 2};
  v.ref_params = 13.3e6;
  v.ref_macs_1024 = 52.3e9;
  return v;
}

inline VariantConfig variant_by_name(const std::string& s) {
  if (s == "stripnet-t" || s == "t") return stripnet_t();
  if (s == "stripnet-s" || s == "s") return stripnet_s();
  throw std::invalid_argument("unknown variant: " + s + " (presets: stripnet-t, stripnet-s)");
}

// Per-channel norm with learnable affine and running statistics.
// Training mode standardizes with batch statistics and folds them into the
// running estimates; eval mode standardizes with the running estimates.
struct NormLayer {
  ag::Var scale, shift;
  std::shared_ptr<NormStats> running;
  double momentum = 0.1;

  ag::Var apply(const ag::Var& x, bool training, bool update_running = true) const {
    if (training) {
      NormStats batch;
      ag::Var y = ag::norm_channels(x, scale, shift, NormMode::kBatchStats, *running, &batch);
      if (update_running) {
        for (std::size_t i = 0; i < running->mean.size(); ++i) {
          running->mean[i] = (1.0 - momentum) * running->mean[i] + momentum * batch.mean[i];
          running->var[i] = (1.0 - momentum) * running->var[i] + momentum * batch.var[i];
        }
      }
      return y;
    }
    return ag::norm_channels(x, scale, shift, NormMode::kFrozen, *running, nullptr);
  }

  std::vector<ag::NamedParam> params(const std::string& prefix) const {
    return {{prefix + "scale", scale}, {prefix + "shift", shift}};
  }
};

inline NormLayer make_norm(int channels, const std::string& name) {
  NormLayer n;
  Tensor sc(channels, 1, 1, 1);
  sc.fill(1.0);
  n.scale = ag::leaf(std::move(sc), true, name + ".scale");
  n.shift = ag::leaf(Tensor(channels, 1, 1, 1), true, name + ".shift");
  n.running = std::make_shared<NormStats>();
  n.running->mean.assign(static_cast<std::size_t>(channels), 0.0);
  n.running->var.assign(static_cast<std::size_t>(channels), 1.0);
  return n;
}

struct ConvLayer {
  ag::Var kernel, bias;
  ConvSpec spec;

  ag::Var apply(const ag::Var& x) const { return ag::conv2d(x, kernel, bias, spec); }

  std::vector<ag::NamedParam> params(const std::string& prefix) const {
    return {{prefix + "kernel", kernel}, {prefix + "bias", bias}};
  }
};

inline ConvLayer make_conv(int in_c, int out_c, int kh, int kw, const ConvSpec& spec,
                           std::mt19937_64& rng, const std::string& name) {
  ConvLayer l;
  l.spec = spec;
  Tensor k(out_c, in_c / spec.groups, kh, kw);
  fill_trunc_normal(k, rng);
  l.kernel = ag::leaf(std::move(k), true, name + ".kernel");
  l.bias = ag::leaf(Tensor(out_c, 1, 1, 1), true, name + ".bias");
  return l;
}

inline ConvLayer make_pointwise(int in_c, int out_c, std::mt19937_64& rng, const std::string& name) {
  return make_conv(in_c, out_c, 1, 1, ConvSpec{}, rng, name);
}

struct LinearLayer {
  ag::Var weight, bias;  // weight (out, in, 1, 1)

  ag::Var apply(const ag::Var& x) const { return ag::linear(x, weight, bias); }

  std::vector<ag::NamedParam> params(const std::string& prefix) const {
    return {{prefix + "weight", weight}, {prefix + "bias", bias}};
  }
};

inline LinearLayer make_linear(int in_dim, int out_dim, std::mt19937_64& rng,
                               const std::string& name) {
  LinearLayer l;
  Tensor w(out_dim, in_dim, 1, 1);
  fill_trunc_normal(w, rng);
  l.weight = ag::leaf(std::move(w), true, name + ".weight");
  l.bias = ag::leaf(Tensor(out_dim, 1, 1, 1), true, name + ".bias");
  return l;
}

struct BasicBlock {
  NormLayer norm1, norm2;
  ConvLayer pw1, pw2;
  StripModuleParams strip;
  ConvLayer ffn_in, ffn_dw, ffn_out;

  ag::Var forward(const ag::Var& x, bool training) const {
    ag::Var a = pw2.apply(strip_module_forward(strip, ag::gelu(pw1.apply(norm1.apply(x, training)))));
    ag::Var y = ag::add(x, a);
    ag::Var f = ffn_out.apply(ag::gelu(ffn_dw.apply(ffn_in.apply(norm2.apply(y, training)))));
    return ag::add(y, f);
  }

  std::vector<ag::NamedParam> params(const std::string& prefix) const {
    std::vector<ag::NamedParam> out;
    auto take = [&](std::vector<ag::NamedParam> v) {
      out.insert(out.end(), v.begin(), v.end());
    };
    take(norm1.params(prefix + "norm1."));
    take(pw1.params(prefix + "pw1."));
    take(strip.params(prefix + "strip."));
    take(pw2.params(prefix + "pw2."));
    take(norm2.params(prefix + "norm2."));
    take(ffn_in.params(prefix + "ffn_in."));
    take(ffn_dw.params(prefix + "ffn_dw."));
    take(ffn_out.params(prefix + "ffn_out."));
    return out;
  }
};

struct Downsample {
  ConvLayer conv;
  NormLayer norm;

  ag::Var apply(const ag::Var& x, bool training) const {
    return norm.apply(conv.apply(x), training);
  }
};

struct Backbone {
  VariantConfig cfg;
  std::array<Downsample, 4> down;
  std::array<std::vector<BasicBlock>, 4> stages;

  std::array<ag::Var, 4> forward(const ag::Var& x, bool training) const {
    std::array<ag::Var, 4> feats;
    ag::Var cur = x;
    for (int s = 0; s < 4; ++s) {
      cur = down[static_cast<std::size_t>(s)].apply(cur, training);
      for (const auto& b : stages[static_cast<std::size_t>(s)]) cur = b.forward(cur, training);
      feats[static_cast<std::size_t>(s)] = cur;
    }
    return feats;
  }

  std::vector<ag::NamedParam> params() const {
    std::vector<ag::NamedParam> out;
    for (int s = 0; s < 4; ++s) {
      const std::string sp = "stage" + std::to_string(s + 1) + ".";
      auto d = down[static_cast<std::size_t>(s)].conv.params(sp + "down.");
      out.insert(out.end(), d.begin(), d.end());
      auto n = down[static_cast<std::size_t>(s)].norm.params(sp + "down.norm.");
      out.insert(out.end(), n.begin(), n.end());
      for (std::size_t b = 0; b < stages[static_cast<std::size_t>(s)].size(); ++b) {
        auto v = stages[static_cast<std::size_t>(s)][b].params(sp + "block" + std::to_string(b) + ".");
        out.insert(out.end(), v.begin(), v.end());
      }
    }
    return out;
  }

  std::int64_t count_parameters() const {
    std::int64_t n = 0;
    for (const auto& p : params()) n += p.var->value.numel();
    return n;
  }
};

inline BasicBlock make_basic_block(int channels, const StripModuleConfig& strip_cfg,
                                   int ffn_ratio, std::mt19937_64& rng,
                                   const std::string& prefix) {
  if (strip_cfg.channels != channels)
    throw std::invalid_argument("make_basic_block: strip channels mismatch");
  const int hidden = ffn_ratio * channels;
  BasicBlock blk;
  blk.norm1 = make_norm(channels, prefix + "norm1");
  blk.pw1 = make_pointwise(channels, channels, rng, prefix + "pw1");
  blk.strip = init_strip_module(strip_cfg, rng, prefix + "strip");
  blk.pw2 = make_pointwise(channels, channels, rng, prefix + "pw2");
  blk.norm2 = make_norm(channels, prefix + "norm2");
  blk.ffn_in = make_pointwise(channels, hidden, rng, prefix + "ffn_in");
  ConvSpec dw;
  dw.groups = hidden;
  dw.set_same_pad(3, 3);
  blk.ffn_dw = make_conv(hidden, hidden, 3, 3, dw, rng, prefix + "ffn_dw");
  blk.ffn_out = make_pointwise(hidden, channels, rng, prefix + "ffn_out");
  return blk;
}

inline Backbone make_backbone(const VariantConfig& cfg) {
  cfg.validate();
  Backbone bb;
  bb.cfg = cfg;
  std::mt19937_64 rng(cfg.init_seed);
  int prev_c = cfg.in_channels;
  for (int s = 0; s < 4; ++s) {
    const int c = cfg.channels[static_cast<std::size_t>(s)];
    const std::string sp = "stage" + std::to_string(s + 1) + ".";
    ConvSpec ds;
    if (s == 0) {
      ds.stride = 4;
      ds.pad_top = ds.pad_bottom = ds.pad_left = ds.pad_right = 3;
      bb.down[0].conv = make_conv(prev_c, c, 7, 7, ds, rng, sp + "down");
    } else {
      ds.stride = 2;
      ds.pad_top = ds.pad_bottom = ds.pad_left = ds.pad_right = 1;
      bb.down[static_cast<std::size_t>(s)].conv = make_conv(prev_c, c, 3, 3, ds, rng, sp + "down");
    }
    bb.down[static_cast<std::size_t>(s)].norm = make_norm(c, sp + "down.norm");

    const int ratio = cfg.ffn_ratios[static_cast<std::size_t>(s)];
    for (int b = 0; b < cfg.depths[static_cast<std::size_t>(s)]; ++b) {
      StripModuleConfig sm;
      sm.channels = c;
      sm.k = cfg.strip_kernels[static_cast<std::size_t>(s)];
      sm.design = cfg.design;
      sm.row_first = cfg.row_first;
      bb.stages[static_cast<std::size_t>(s)].push_back(
          make_basic_block(c, sm, ratio, rng, sp + "block" + std::to_string(b) + "."));
    }
    prev_c = c;
  }
  return bb;
}

// Cost model. One entry per convolution; macs counts kernel
// multiply-accumulates (bias, norm and elementwise work excluded).
struct FlopsRow {
  std::string name;
  std::int64_t macs = 0;
};

struct FlopsReport {
  std::vector<FlopsRow> rows;
  std::int64_t total = 0;
};

namespace detail {
inline std::int64_t conv_macs(std::int64_t out_c, std::int64_t out_h, std::int64_t out_w,
                              std::int64_t in_c_per_group, std::int64_t kh, std::int64_t kw) {
  return out_c * out_h * out_w * in_c_per_group * kh * kw;
}
}  // namespace detail

// Analytic walk over the architecture for one image of the given size.
// Mirrors make_backbone layer for layer; spatial dims inside a stage are
// preserved, so only the downsample layers change resolution.
inline FlopsReport estimate_flops(const VariantConfig& cfg, std::int64_t in_h, std::int64_t in_w) {
  cfg.validate();
  if (in_h < 1 || in_w < 1) throw std::invalid_argument("estimate_flops: empty input");
  FlopsReport rep;
  auto add = [&](const std::string& name, std::int64_t macs) {
    rep.rows.push_back({name, macs});
    rep.total += macs;
  };
  std::int64_t h = in_h, w = in_w;
  int prev_c = cfg.in_channels;
  for (int s = 0; s < 4; ++s) {
    const int c = cfg.channels[static_cast<std::size_t>(s)];
    const std::string sp = "stage" + std::to_string(s + 1) + ".";
    if (s == 0) {
      h = conv_out_dim(h, 7, 3, 3, 4, 1);
      w = conv_out_dim(w, 7, 3, 3, 4, 1);
      if (h < 1 || w < 1) throw std::invalid_argument("estimate_flops: input too small for stem");
      add(sp + "down", detail::conv_macs(c, h, w, prev_c, 7, 7));
    } else {
      h = conv_out_dim(h, 3, 1, 1, 2, 1);
      w = conv_out_dim(w, 3, 1, 1, 2, 1);
      if (h < 1 || w < 1) throw std::invalid_argument("estimate_flops: input too small for embed");
      add(sp + "down", detail::conv_macs(c, h, w, prev_c, 3, 3));
    }
    const int k = cfg.strip_kernels[static_cast<std::size_t>(s)];
    const int hidden = cfg.ffn_ratios[static_cast<std::size_t>(s)] * c;
    for (int b = 0; b < cfg.depths[static_cast<std::size_t>(s)]; ++b) {
      const std::string bp = sp + "block" + std::to_string(b) + ".";
      add(bp + "pw1", detail::conv_macs(c, h, w, c, 1, 1));
      switch (cfg.design) {
        case ModuleDesign::kSequential:
        case ModuleDesign::kParallel:
          add(bp + "strip.square", detail::conv_macs(c, h, w, 1, 5, 5));
          add(bp + "strip.strip_h", detail::conv_macs(c, h, w, 1, 1, k));
          add(bp + "strip.strip_v", detail::conv_macs(c, h, w, 1, k, 1));
          break;
        case ModuleDesign::kSquareBig:
          add(bp + "strip.square", detail::conv_macs(c, h, w, 1, 5, 5));
          add(bp + "strip.big", detail::conv_macs(c, h, w, 1, 19, 19));
          break;
        case ModuleDesign::kDilatedSquare:
          add(bp + "strip.square", detail::conv_macs(c, h, w, 1, 5, 5));
          add(bp + "strip.big", detail::conv_macs(c, h, w, 1, 7, 7));
          break;
        case ModuleDesign::kNoSquare:
          add(bp + "strip.strip_h", detail::conv_macs(c, h, w, 1, 1, k));
          add(bp + "strip.strip_v", detail::conv_macs(c, h, w, 1, k, 1));
          break;
        case ModuleDesign::kSingleSquare:
          add(bp + "strip.square", detail::conv_macs(c, h, w, 1, 7, 7));
          break;
      }
      add(bp + "strip.pw", detail::conv_macs(c, h, w, c, 1, 1));
      add(bp + "pw2", detail::conv_macs(c, h, w, c, 1, 1));
      add(bp + "ffn_in", detail::conv_macs(hidden, h, w, c, 1, 1));
      add(bp + "ffn_dw", detail::conv_macs(hidden, h, w, 1, 3, 3));
      add(bp + "ffn_out", detail::conv_macs(c, h, w, hidden, 1, 1));
    }
    prev_c = c;
  }
  return rep;
}

// Closed-form learnable scalar count; must agree with a constructed model.
inline std::int64_t count_parameters(const VariantConfig& cfg) {
  cfg.validate();
  std::int64_t total = 0;
  int prev_c = cfg.in_channels;
  for (int s = 0; s < 4; ++s) {
    const std::int64_t c = cfg.channels[static_cast<std::size_t>(s)];
    total += (s == 0) ? c * prev_c * 49 + c : c * prev_c * 9 + c;  // downsample conv
    total += 2 * c;                                                // downsample norm
    StripModuleConfig sm;
    sm.channels = static_cast<int>(c);
    sm.k = cfg.strip_kernels[static_cast<std::size_t>(s)];
    sm.design = cfg.design;
    const std::int64_t hidden = cfg.ffn_ratios[static_cast<std::size_t>(s)] * c;
    const std::int64_t per_block = 2 * c                      // norm1
                                   + c * c + c                // pw1
                                   + strip_module_param_count(sm)
                                   + c * c + c                // pw2
                                   + 2 * c                    // norm2
                                   + hidden * c + hidden      // ffn_in
                                   + hidden * 9 + hidden      // ffn_dw
                                   + c * hidden + c;          // ffn_out
    total += per_block * cfg.depths[static_cast<std::size_t>(s)];
    prev_c = static_cast<int>(c);
  }
  return total;
}

}  // namespace stripnet
