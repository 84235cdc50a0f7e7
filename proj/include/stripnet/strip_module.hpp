#pragma once

#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "stripnet/autograd.hpp"
#include "stripnet/init.hpp"

namespace stripnet {

// Attention designs. kSequential is the default pipeline
//   Z = DW5x5(X); A = DWkx1(DW1xk(Z)); Y = PW1x1(A); out = X * Y.
// The others are the documented ablation variants; kSingleSquare is the
// parameter-matched plain square used by the synthetic comparison harness.
enum class ModuleDesign {
  kSequential,
  kParallel,
  kSquareBig,
  kDilatedSquare,
  kNoSquare,
  kSingleSquare,
};

inline const char* design_name(ModuleDesign d) {
  switch (d) {
    case ModuleDesign::kSequential: return "sequential";
    case ModuleDesign::kParallel: return "parallel";
    case ModuleDesign::kSquareBig: return "square-big";
    case ModuleDesign::kDilatedSquare: return "dilated-square";
    case ModuleDesign::kNoSquare: return "no-square";
    case ModuleDesign::kSingleSquare: return "single-square";
  }
  return "?";
}

inline ModuleDesign design_by_name(const std::string& s) {
  if (s == "sequential") return ModuleDesign::kSequential;
  if (s == "parallel") return ModuleDesign::kParallel;
  if (s == "square-big" || s == "square19") return ModuleDesign::kSquareBig;
  if (s == "dilated-square" || s == "dilated7d3") return ModuleDesign::kDilatedSquare;
  if (s == "no-square") return ModuleDesign::kNoSquare;
  if (s == "single-square") return ModuleDesign::kSingleSquare;
  throw std::invalid_argument("unknown module design: " + s);
}

struct StripModuleConfig {
  int channels = 64;
  int k = 19;  // strip length, odd
  ModuleDesign design = ModuleDesign::kSequential;
  bool row_first = true;  // 1xk before kx1
  int square_side = 5;
  int big_side = 19;           // kSquareBig
  int dilated_side = 7;        // kDilatedSquare taps
  int dilation = 3;            // kDilatedSquare spacing
  int single_side = 7;         // kSingleSquare

  void validate() const {
    if (channels < 1) throw std::invalid_argument("strip module: channels < 1");
    if (k < 1 || k % 2 == 0) throw std::invalid_argument("strip module: k must be odd and positive");
    if (square_side % 2 == 0 || big_side % 2 == 0 || dilated_side % 2 == 0 || single_side % 2 == 0)
      throw std::invalid_argument("strip module: square sides must be odd");
  }
};

struct StripModuleParams {
  StripModuleConfig cfg;
  // Depthwise stages; presence depends on design.
  ag::Var square_k, square_b;
  ag::Var big_k, big_b;
  ag::Var h_k, h_b;
  ag::Var v_k, v_b;
  // Channel-mixing pointwise.
  ag::Var pw_k, pw_b;

  std::vector<ag::NamedParam> params(const std::string& prefix) const {
    std::vector<ag::NamedParam> out;
    auto push = [&](const char* n, const ag::Var& v) {
      if (v) out.push_back({prefix + n, v});
    };
    push("square.kernel", square_k);
    push("square.bias", square_b);
    push("big.kernel", big_k);
    push("big.bias", big_b);
    push("strip_h.kernel", h_k);
    push("strip_h.bias", h_b);
    push("strip_v.kernel", v_k);
    push("strip_v.bias", v_b);
    push("pw.kernel", pw_k);
    push("pw.bias", pw_b);
    return out;
  }

  std::int64_t param_count() const {
    std::int64_t n = 0;
    for (const auto& p : params("")) n += p.var->value.numel();
    return n;
  }
};

namespace detail {
inline ag::Var leaf_trunc_normal(std::int64_t n, std::int64_t c, std::int64_t h, std::int64_t w,
                                 std::mt19937_64& rng, const std::string& name) {
  Tensor t(n, c, h, w);
  fill_trunc_normal(t, rng);
  return ag::leaf(std::move(t), true, name);
}
inline ag::Var leaf_zeros(std::int64_t n, const std::string& name) {
  return ag::leaf(Tensor(n, 1, 1, 1), true, name);
}
}  // namespace detail

// Weights: truncated normal (0.02); biases zero.
inline StripModuleParams init_strip_module(const StripModuleConfig& cfg, std::mt19937_64& rng,
                                           const std::string& name = "strip") {
  cfg.validate();
  StripModuleParams p;
  p.cfg = cfg;
  const int c = cfg.channels;
  const bool leading_square = cfg.design == ModuleDesign::kSequential ||
                              cfg.design == ModuleDesign::kParallel ||
                              cfg.design == ModuleDesign::kSquareBig ||
                              cfg.design == ModuleDesign::kDilatedSquare;
  if (leading_square) {
    p.square_k = detail::leaf_trunc_normal(c, 1, cfg.square_side, cfg.square_side, rng, name + ".square.kernel");
    p.square_b = detail::leaf_zeros(c, name + ".square.bias");
  }
  if (cfg.design == ModuleDesign::kSingleSquare) {
    p.square_k = detail::leaf_trunc_normal(c, 1, cfg.single_side, cfg.single_side, rng, name + ".square.kernel");
    p.square_b = detail::leaf_zeros(c, name + ".square.bias");
  }
  if (cfg.design == ModuleDesign::kSequential || cfg.design == ModuleDesign::kParallel ||
      cfg.design == ModuleDesign::kNoSquare) {
    p.h_k = detail::leaf_trunc_normal(c, 1, 1, cfg.k, rng, name + ".strip_h.kernel");
    p.h_b = detail::leaf_zeros(c, name + ".strip_h.bias");
    p.v_k = detail::leaf_trunc_normal(c, 1, cfg.k, 1, rng, name + ".strip_v.kernel");
    p.v_b = detail::leaf_zeros(c, name + ".strip_v.bias");
  }
  if (cfg.design == ModuleDesign::kSquareBig) {
    p.big_k = detail::leaf_trunc_normal(c, 1, cfg.big_side, cfg.big_side, rng, name + ".big.kernel");
    p.big_b = detail::leaf_zeros(c, name + ".big.bias");
  }
  if (cfg.design == ModuleDesign::kDilatedSquare) {
    p.big_k = detail::leaf_trunc_normal(c, 1, cfg.dilated_side, cfg.dilated_side, rng, name + ".big.kernel");
    p.big_b = detail::leaf_zeros(c, name + ".big.bias");
  }
  p.pw_k = detail::leaf_trunc_normal(c, c, 1, 1, rng, name + ".pw.kernel");
  p.pw_b = detail::leaf_zeros(c, name + ".pw.bias");
  return p;
}

namespace detail {
inline ag::Var depthwise(const ag::Var& x, const ag::Var& k, const ag::Var& b, int channels,
                         int dilation = 1) {
  ConvSpec s;
  s.groups = channels;
  s.dilation = dilation;
  s.set_same_pad(k->value.h(), k->value.w());
  return ag::conv2d(x, k, b, s);
}
}  // namespace detail

// Attention map Y (the factor that reweighs the input).
inline ag::Var strip_module_attention(const StripModuleParams& p, const ag::Var& x) {
  const int c = p.cfg.channels;
  ag::Var a;
  switch (p.cfg.design) {
    case ModuleDesign::kSequential: {
      ag::Var z = detail::depthwise(x, p.square_k, p.square_b, c);
      if (p.cfg.row_first)
        a = detail::depthwise(detail::depthwise(z, p.h_k, p.h_b, c), p.v_k, p.v_b, c);
      else
        a = detail::depthwise(detail::depthwise(z, p.v_k, p.v_b, c), p.h_k, p.h_b, c);
      break;
    }
    case ModuleDesign::kParallel: {
      ag::Var z = detail::depthwise(x, p.square_k, p.square_b, c);
      a = ag::add(detail::depthwise(z, p.h_k, p.h_b, c), detail::depthwise(z, p.v_k, p.v_b, c));
      break;
    }
    case ModuleDesign::kSquareBig:
    case ModuleDesign::kDilatedSquare: {
      ag::Var z = detail::depthwise(x, p.square_k, p.square_b, c);
      const int dil = p.cfg.design == ModuleDesign::kDilatedSquare ? p.cfg.dilation : 1;
      a = detail::depthwise(z, p.big_k, p.big_b, c, dil);
      break;
    }
    case ModuleDesign::kNoSquare: {
      if (p.cfg.row_first)
        a = detail::depthwise(detail::depthwise(x, p.h_k, p.h_b, c), p.v_k, p.v_b, c);
      else
        a = detail::depthwise(detail::depthwise(x, p.v_k, p.v_b, c), p.h_k, p.h_b, c);
      break;
    }
    case ModuleDesign::kSingleSquare: {
      a = detail::depthwise(x, p.square_k, p.square_b, c);
      break;
    }
  }
  ConvSpec pw;  // 1x1, no padding
  return ag::conv2d(a, p.pw_k, p.pw_b, pw);
}

// Full module: input reweighed by its attention map.
inline ag::Var strip_module_forward(const StripModuleParams& p, const ag::Var& x) {
  return ag::mul(x, strip_module_attention(p, x));
}

// Closed-form learnable scalar count for one module.
inline std::int64_t strip_module_param_count(const StripModuleConfig& cfg) {
  const std::int64_t c = cfg.channels;
  std::int64_t weights = c * c;  // pointwise
  std::int64_t biases = c;       // pointwise
  switch (cfg.design) {
    case ModuleDesign::kSequential:
    case ModuleDesign::kParallel:
      weights += c * cfg.square_side * cfg.square_side + 2 * c * cfg.k;
      biases += 3 * c;
      break;
    case ModuleDesign::kSquareBig:
      weights += c * cfg.square_side * cfg.square_side + c * cfg.big_side * cfg.big_side;
      biases += 2 * c;
      break;
    case ModuleDesign::kDilatedSquare:
      weights += c * cfg.square_side * cfg.square_side + c * cfg.dilated_side * cfg.dilated_side;
      biases += 2 * c;
      break;
    case ModuleDesign::kNoSquare:
      weights += 2 * c * cfg.k;
      biases += 2 * c;
      break;
    case ModuleDesign::kSingleSquare:
      weights += c * cfg.single_side * cfg.single_side;
      biases += c;
      break;
  }
  return weights + biases;
}

}  // namespace stripnet
