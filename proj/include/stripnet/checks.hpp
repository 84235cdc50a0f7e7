#pragma once

// Named finite-difference gradient suites. Each scope bundles a set of small
// fixed-seed units; a unit reports the worst relative error over its leaves
// so a corrupted layer is called out by name.

#include <cmath>
#include <functional>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "stripnet/backbone.hpp"
#include "stripnet/gradcheck.hpp"
#include "stripnet/head.hpp"
#include "stripnet/strip_module.hpp"
#include "stripnet/synth.hpp"

namespace stripnet {

inline constexpr double kGradCheckTol = 1e-4;
inline constexpr double kGradCheckEps = 1e-3;

struct CheckUnitResult {
  std::string name;
  double max_rel_err = 0.0;
  bool finite = true;
  std::string worst_leaf;
  std::int64_t checked = 0;

  bool passed(double tol = kGradCheckTol) const { return finite && max_rel_err < tol; }
};

struct CheckSuiteResult {
  std::string scope;
  std::vector<CheckUnitResult> units;

  bool pass(double tol = kGradCheckTol) const {
    for (const auto& u : units)
      if (!u.passed(tol)) return false;
    return true;
  }
  const CheckUnitResult* worst() const {
    const CheckUnitResult* w = nullptr;
    for (const auto& u : units)
      if (!w || (!u.finite && w->finite) || u.max_rel_err > w->max_rel_err) w = &u;
    return w;
  }
};

inline const std::vector<std::string>& gradcheck_scopes() {
  static const std::vector<std::string> scopes = {"layers", "strip-module", "head", "toy-net"};
  return scopes;
}

namespace detail {

inline Tensor check_input(std::int64_t n, std::int64_t c, std::int64_t h, std::int64_t w,
                          std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  Tensor t(n, c, h, w);
  for (double& v : t.data) v = 2.0 * unit_draw(rng) - 1.0;
  return t;
}

// Poisons the first weight-like leaf (fault-injection hook for the CLI).
inline void corrupt_leaves(const std::vector<ag::NamedParam>& leaves) {
  for (const auto& p : leaves) {
    const std::string& n = p.name;
    const bool weighty = n.find("kernel") != std::string::npos ||
                         n.find("weight") != std::string::npos;
    if (!weighty || p.var->value.data.empty()) continue;
    p.var->value.data[0] = std::numeric_limits<double>::quiet_NaN();
    return;
  }
  if (!leaves.empty() && !leaves[0].var->value.data.empty())
    leaves[0].var->value.data[0] = std::numeric_limits<double>::quiet_NaN();
}

inline CheckUnitResult run_check_unit(const std::string& name,
                                      const std::function<ag::Var()>& build,
                                      const std::vector<ag::NamedParam>& leaves,
                                      std::int64_t stride, bool corrupt) {
  if (corrupt) corrupt_leaves(leaves);
  const GradCheckReport rep = gradcheck(build, leaves, kGradCheckEps, stride);
  CheckUnitResult r;
  r.name = name;
  r.max_rel_err = rep.max_rel_err;
  r.finite = rep.all_finite;
  if (const GradCheckItem* w = rep.worst()) r.worst_leaf = w->name;
  for (const auto& it : rep.items) r.checked += it.checked;
  return r;
}

inline std::vector<ag::NamedParam> with_input(std::vector<ag::NamedParam> params,
                                              const ag::Var& x) {
  params.push_back({"input", x});
  return params;
}

// Shifts targets away from both the prediction and the smooth-L1 elbow so the
// check point is locally smooth.
inline Tensor elbow_safe_targets(const Tensor& pred) {
  static const double shifts[5] = {0.4, -0.5, 0.3, -0.35, 0.45};
  Tensor t = pred;
  for (std::size_t i = 0; i < t.data.size(); ++i) t.data[i] -= shifts[i % 5];
  return t;
}

inline CheckSuiteResult check_layers(bool corrupt_unit_set, const std::string& corrupt_unit) {
  CheckSuiteResult suite;
  suite.scope = "layers";
  std::mt19937_64 rng(17);

  auto unit = [&](const std::string& name, const std::function<ag::Var()>& build,
                  const std::vector<ag::NamedParam>& leaves, std::int64_t stride = 1) {
    suite.units.push_back(run_check_unit(
        name, build, leaves, stride, corrupt_unit_set && name == corrupt_unit));
  };

  {
    ConvSpec sp;
    sp.set_same_pad(3, 3);
    ConvLayer conv = make_conv(3, 4, 3, 3, sp, rng, "conv");
    ag::Var x = ag::leaf(check_input(2, 3, 6, 6, 101), true, "x");
    const Tensor w = check_input(2, 4, 6, 6, 102);
    unit("dense-conv3x3", [&]() { return ag::dot(conv.apply(x), w); },
         with_input(conv.params("conv."), x));
  }
  {
    ConvSpec sp;
    sp.groups = 3;
    sp.set_same_pad(5, 5);
    ConvLayer dw = make_conv(3, 3, 5, 5, sp, rng, "dw");
    ag::Var x = ag::leaf(check_input(2, 3, 6, 6, 103), true, "x");
    const Tensor w = check_input(2, 3, 6, 6, 104);
    unit("depthwise-conv5x5", [&]() { return ag::dot(dw.apply(x), w); },
         with_input(dw.params("dw."), x));
  }
  {
    ConvSpec sp;
    sp.groups = 3;
    sp.set_same_pad(1, 5);
    ConvLayer row = make_conv(3, 3, 1, 5, sp, rng, "row");
    ConvSpec sv;
    sv.groups = 3;
    sv.set_same_pad(5, 1);
    ConvLayer col = make_conv(3, 3, 5, 1, sv, rng, "col");
    ag::Var x = ag::leaf(check_input(1, 3, 7, 7, 105), true, "x");
    const Tensor w = check_input(1, 3, 7, 7, 106);
    auto leaves = with_input(row.params("row."), x);
    for (auto& p : col.params("col.")) leaves.push_back(p);
    unit("strip-conv-pair", [&]() { return ag::dot(col.apply(row.apply(x)), w); }, leaves);
  }
  {
    ConvLayer pw = make_pointwise(4, 3, rng, "pw");
    ag::Var x = ag::leaf(check_input(2, 4, 3, 3, 107), true, "x");
    const Tensor w = check_input(2, 3, 3, 3, 108);
    unit("pointwise-conv", [&]() { return ag::dot(pw.apply(x), w); },
         with_input(pw.params("pw."), x));
  }
  {
    LinearLayer fc = make_linear(6, 4, rng, "fc");
    ag::Var x = ag::leaf(check_input(3, 6, 1, 1, 109), true, "x");
    const Tensor w = check_input(3, 4, 1, 1, 110);
    unit("linear", [&]() { return ag::dot(fc.apply(x), w); },
         with_input(fc.params("fc."), x));
  }
  {
    NormLayer norm = make_norm(3, "norm");
    ag::Var x = ag::leaf(check_input(2, 3, 4, 4, 111), true, "x");
    const Tensor w = check_input(2, 3, 4, 4, 112);
    unit("norm-batch-stats", [&]() { return ag::dot(norm.apply(x, true, false), w); },
         with_input(norm.params("norm."), x));
    unit("norm-frozen", [&]() { return ag::dot(norm.apply(x, false), w); },
         with_input(norm.params("norm."), x));
  }
  {
    // Values sit at least 0.01 from the ReLU kink (seed chosen for margin).
    ag::Var x = ag::leaf(check_input(2, 3, 4, 4, 113), true, "x");
    double margin = 1e9;
    for (double v : x->value.data) margin = std::min(margin, std::abs(v));
    if (margin < 5.0 * kGradCheckEps)
      for (double& v : x->value.data)
        if (std::abs(v) < 5.0 * kGradCheckEps) v += 10.0 * kGradCheckEps;
    const Tensor w = check_input(2, 3, 4, 4, 114);
    unit("relu", [&]() { return ag::dot(ag::relu(x), w); }, {{"x", x}});
    unit("gelu", [&]() { return ag::dot(ag::gelu(x), w); }, {{"x", x}});
  }
  {
    ag::Var x = ag::leaf(check_input(2, 3, 5, 5, 115), true, "x");
    const Tensor w = check_input(2, 3, 1, 1, 116);
    unit("global-avg-pool", [&]() { return ag::dot(ag::global_avg_pool(x), w); }, {{"x", x}});
  }
  {
    ag::Var a = ag::leaf(check_input(2, 3, 4, 4, 117), true, "a");
    ag::Var b = ag::leaf(check_input(2, 3, 4, 4, 118), true, "b");
    const Tensor w = check_input(2, 3, 4, 4, 119);
    unit("elementwise-reweight", [&]() { return ag::dot(ag::mul(a, b), w); },
         {{"a", a}, {"b", b}});
    const Tensor w2 = check_input(2, 6, 4, 4, 120);
    unit("concat-channels", [&]() { return ag::dot(ag::concat_channels(a, b), w2); },
         {{"a", a}, {"b", b}});
  }
  {
    ag::Var logits = ag::leaf(check_input(3, 5, 1, 1, 121), true, "logits");
    const std::vector<int> labels = {0, 2, 4};
    unit("softmax-cross-entropy",
         [&]() { return ag::softmax_cross_entropy(logits, labels); }, {{"logits", logits}});
  }
  {
    ag::Var pred = ag::leaf(check_input(3, 4, 1, 1, 122), true, "pred");
    const Tensor target = elbow_safe_targets(pred->value);
    unit("smooth-l1", [&]() { return ag::smooth_l1(pred, target, kLocBeta); },
         {{"pred", pred}});
  }
  return suite;
}

inline CheckSuiteResult check_strip_module(bool corrupt_unit_set,
                                           const std::string& corrupt_unit) {
  CheckSuiteResult suite;
  suite.scope = "strip-module";
  const ModuleDesign designs[] = {ModuleDesign::kSequential,    ModuleDesign::kParallel,
                                  ModuleDesign::kSquareBig,     ModuleDesign::kDilatedSquare,
                                  ModuleDesign::kNoSquare,      ModuleDesign::kSingleSquare};
  for (ModuleDesign d : designs) {
    StripModuleConfig cfg;
    cfg.channels = 3;
    cfg.k = 5;
    cfg.design = d;
    cfg.big_side = 7;  // keep the big-square control small at check scale
    std::mt19937_64 rng(23);
    StripModuleParams p = init_strip_module(cfg, rng, "strip");
    ag::Var x = ag::leaf(check_input(2, 3, 8, 8, 131), true, "x");
    const Tensor w = check_input(2, 3, 8, 8, 132);
    suite.units.push_back(run_check_unit(
        design_name(d), [&]() { return ag::dot(strip_module_forward(p, x), w); },
        with_input(p.params("strip."), x), 1,
        corrupt_unit_set && design_name(d) == corrupt_unit));
  }
  return suite;
}

inline CheckSuiteResult check_head(bool corrupt_unit_set, const std::string& corrupt_unit) {
  CheckSuiteResult suite;
  suite.scope = "head";
  const HeadLayout layouts[] = {
      HeadLayout::kJointFc,           HeadLayout::kPerBranchConv,
      HeadLayout::kStripXY,           HeadLayout::kStripWH,
      HeadLayout::kStripTheta,        HeadLayout::kStripLocSeparateTheta,
      HeadLayout::kStripLocSharedTheta, HeadLayout::kStripLocStripTheta};
  for (HeadLayout l : layouts) {
    StripHeadConfig cfg;
    cfg.channels = 3;
    cfg.grid = 7;
    cfg.fc_dim = 8;
    cfg.num_classes = 3;
    cfg.strip_k = 7;
    cfg.layout = l;
    cfg.init_seed = 11;
    const StripHead head = make_strip_head(cfg);
    // Fresh-init pre-activations sit within the finite-difference step of the
    // ReLU kink; scaling the point clears it (margin ~0.037 at this seed).
    for (const auto& p : head.params())
      for (double& v : p.var->value.data) v *= 10.0;
    const Tensor roi = check_input(2, cfg.channels, cfg.grid, cfg.grid, 60);
    const std::vector<int> labels = {1, 3};
    const Tensor loc_t = check_input(2, 4, 1, 1, 1060);
    const Tensor theta_t = check_input(2, 1, 1, 1, 2060);
    suite.units.push_back(run_check_unit(
        head_layout_name(l),
        [&]() {
          return detection_loss(head.forward(ag::constant(roi)), labels, loc_t, theta_t).total;
        },
        head.params(), 3, corrupt_unit_set && head_layout_name(l) == corrupt_unit));
  }
  return suite;
}

inline CheckSuiteResult check_toy_net(bool corrupt_unit_set, const std::string& corrupt_unit) {
  CheckSuiteResult suite;
  suite.scope = "toy-net";
  ToyNetConfig tc;
  tc.channels = 4;
  tc.blocks = 1;
  tc.strip_k = 5;
  tc.square_side = 5;
  const ToyNet net = make_toy_net(tc);
  const Tensor x = check_input(2, 1, 16, 16, 141);
  const Tensor target = elbow_safe_targets(net.forward(ag::constant(x), true)->value);
  suite.units.push_back(run_check_unit(
      "toy-net",
      [&]() { return ag::smooth_l1(net.forward(ag::constant(x), true), target, kLocBeta); },
      net.params(), 5, corrupt_unit_set && corrupt_unit == "toy-net"));
  return suite;
}

}  // namespace detail

// corrupt_unit, when nonempty, injects a NaN into the named unit's first
// weight so the failure path stays demonstrable end to end.
inline CheckSuiteResult run_gradcheck_scope(const std::string& scope,
                                            const std::string& corrupt_unit = {}) {
  const bool c = !corrupt_unit.empty();
  if (scope == "layers") return detail::check_layers(c, corrupt_unit);
  if (scope == "strip-module") return detail::check_strip_module(c, corrupt_unit);
  if (scope == "head") return detail::check_head(c, corrupt_unit);
  if (scope == "toy-net") return detail::check_toy_net(c, corrupt_unit);
  throw std::invalid_argument("unknown gradcheck scope: " + scope +
                              " (expected layers | strip-module | head | toy-net | all)");
}

inline std::vector<CheckSuiteResult> run_gradcheck(const std::string& scope,
                                                   const std::string& corrupt_unit = {}) {
  std::vector<CheckSuiteResult> out;
  if (scope == "all") {
    for (const auto& s : gradcheck_scopes()) out.push_back(run_gradcheck_scope(s, corrupt_unit));
  } else {
    out.push_back(run_gradcheck_scope(scope, corrupt_unit));
  }
  return out;
}

inline std::string gradcheck_report_text(const std::vector<CheckSuiteResult>& suites,
                                         double tol = kGradCheckTol) {
  std::ostringstream os;
  os.setf(std::ios::scientific);
  os.precision(3);
  for (const auto& s : suites) {
    for (const auto& u : s.units) {
      os << (u.passed(tol) ? "pass" : "FAIL") << "  " << s.scope << "/" << u.name
         << "  max_rel_err " << u.max_rel_err;
      if (!u.finite) os << "  non-finite";
      if (!u.worst_leaf.empty()) os << "  (worst " << u.worst_leaf << ")";
      os << "\n";
    }
  }
  return os.str();
}

inline bool gradcheck_all_pass(const std::vector<CheckSuiteResult>& suites,
                               double tol = kGradCheckTol) {
  for (const auto& s : suites)
    if (!s.pass(tol)) return false;
  return true;
}

}  // namespace stripnet
