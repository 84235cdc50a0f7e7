#pragma once

// Decoupled detection head over pooled RoI features: classification and angle
// read a shared two-FC trunk, localization runs a small conv pipeline whose
// second stage is either another conv or a strip module depending on the
// layout. Eight layouts cover the design ablation grid; the default is the
// strip localization branch with the angle FC riding the shared trunk.

#include <cmath>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "stripnet/autograd.hpp"
#include "stripnet/backbone.hpp"
#include "stripnet/strip_module.hpp"
#include "stripnet/tensor.hpp"

namespace stripnet {

enum class HeadLayout {
  kJointFc,               // everything off the shared FC trunk
  kPerBranchConv,         // conv-conv localization, separate theta FC stack
  kStripXY,               // strip on the (x, y) half of localization
  kStripWH,               // strip on the (w, h) half of localization
  kStripTheta,            // conv-conv localization, strip on theta
  kStripLocSeparateTheta, // strip localization, separate theta FC stack
  kStripLocSharedTheta,   // strip localization, theta off the shared trunk (default)
  kStripLocStripTheta,    // strip localization and strip theta
};

inline const char* head_layout_name(HeadLayout l) {
  switch (l) {
    case HeadLayout::kJointFc: return "joint-fc";
    case HeadLayout::kPerBranchConv: return "per-branch-conv";
    case HeadLayout::kStripXY: return "strip-xy";
    case HeadLayout::kStripWH: return "strip-wh";
    case HeadLayout::kStripTheta: return "strip-theta";
    case HeadLayout::kStripLocSeparateTheta: return "strip-loc-separate-theta";
    case HeadLayout::kStripLocSharedTheta: return "strip-loc-shared-theta";
    case HeadLayout::kStripLocStripTheta: return "strip-loc-strip-theta";
  }
  return "?";
}

inline HeadLayout head_layout_by_name(const std::string& s) {
  for (HeadLayout l : {HeadLayout::kJointFc, HeadLayout::kPerBranchConv, HeadLayout::kStripXY,
                       HeadLayout::kStripWH, HeadLayout::kStripTheta,
                       HeadLayout::kStripLocSeparateTheta, HeadLayout::kStripLocSharedTheta,
                       HeadLayout::kStripLocStripTheta})
    if (s == head_layout_name(l)) return l;
  throw std::invalid_argument("unknown head layout: " + s);
}

// How each layout sources its two non-classification outputs.
namespace detail {

enum class ThetaForm { kSharedTrunk, kOwnFcStack, kConvStrip };
enum class LocForm { kDirectFc, kConvConv, kConvStrip, kSplitStripXY, kSplitStripWH };

inline ThetaForm theta_form(HeadLayout l) {
  switch (l) {
    case HeadLayout::kJointFc:
    case HeadLayout::kStripLocSharedTheta: return ThetaForm::kSharedTrunk;
    case HeadLayout::kStripTheta:
    case HeadLayout::kStripLocStripTheta: return ThetaForm::kConvStrip;
    default: return ThetaForm::kOwnFcStack;
  }
}

inline LocForm loc_form(HeadLayout l) {
  switch (l) {
    case HeadLayout::kJointFc: return LocForm::kDirectFc;
    case HeadLayout::kPerBranchConv:
    case HeadLayout::kStripTheta: return LocForm::kConvConv;
    case HeadLayout::kStripXY: return LocForm::kSplitStripXY;
    case HeadLayout::kStripWH: return LocForm::kSplitStripWH;
    default: return LocForm::kConvStrip;
  }
}

}  // namespace detail

struct StripHeadConfig {
  int channels = 256;
  int grid = 7;        // pooled RoI is grid x grid
  int fc_dim = 1024;
  int num_classes = 15;  // logits cover num_classes + 1 (background)
  int strip_k = 7;       // strip length inside head branches
  HeadLayout layout = HeadLayout::kStripLocSharedTheta;
  std::uint64_t init_seed = 7;

  void validate() const {
    if (channels < 1 || grid < 1 || fc_dim < 1 || num_classes < 1)
      throw std::invalid_argument("head: dims must be positive");
    strip_config().validate();
  }

  StripModuleConfig strip_config() const {
    StripModuleConfig sm;
    sm.channels = channels;
    sm.k = strip_k;
    sm.design = ModuleDesign::kSequential;
    return sm;
  }

  std::int64_t flat_dim() const {
    return static_cast<std::int64_t>(channels) * grid * grid;
  }
};

struct HeadOut {
  ag::Var cls;    // (N, num_classes + 1)
  ag::Var loc;    // (N, 4): dx, dy, dw, dh
  ag::Var theta;  // (N, 1): dtheta
};

struct StripHead {
  StripHeadConfig cfg;

  // Shared trunk: both the classifier and (in trunk-shared layouts) the angle
  // output read the same stored FC parameters.
  LinearLayer shared_fc1, shared_fc2, cls_fc;
  LinearLayer angle_fc;                 // final theta FC (trunk or own-stack layouts)
  LinearLayer theta_fc1, theta_fc2;     // own-stack theta layouts
  ConvLayer theta_conv;                 // strip-theta layouts
  StripModuleParams theta_strip;
  LinearLayer theta_out_fc;
  ConvLayer loc_conv1, loc_conv2;       // unified localization pipelines
  StripModuleParams loc_strip;
  LinearLayer loc_fc;
  ConvLayer xy_conv, xy_conv2;          // split localization pipelines
  StripModuleParams xy_strip;
  LinearLayer xy_fc;
  ConvLayer wh_conv, wh_conv2;
  StripModuleParams wh_strip;
  LinearLayer wh_fc;

  void check_input(const Tensor& roi) const {
    if (roi.c() != cfg.channels || roi.h() != cfg.grid || roi.w() != cfg.grid)
      throw std::invalid_argument("head: RoI tensor must be (N, " +
                                  std::to_string(cfg.channels) + ", " + std::to_string(cfg.grid) +
                                  ", " + std::to_string(cfg.grid) + ")");
  }

  ag::Var trunk(const ag::Var& roi) const {
    ag::Var flat = ag::flatten(roi);
    return ag::relu(shared_fc2.apply(ag::relu(shared_fc1.apply(flat))));
  }

  // Spatial features feeding the localization FC (the strip-side map for
  // split layouts, the RoI itself for the direct-FC baseline). The branch
  // pipelines carry no activation so the identity-kernel reduction below is
  // exact.
  ag::Var loc_features(const ag::Var& roi) const {
    switch (detail::loc_form(cfg.layout)) {
      case detail::LocForm::kDirectFc: return roi;
      case detail::LocForm::kConvConv: return loc_conv2.apply(loc_conv1.apply(roi));
      case detail::LocForm::kConvStrip:
        return strip_module_forward(loc_strip, loc_conv1.apply(roi));
      case detail::LocForm::kSplitStripXY:
        return strip_module_forward(xy_strip, xy_conv.apply(roi));
      case detail::LocForm::kSplitStripWH:
        return strip_module_forward(wh_strip, wh_conv.apply(roi));
    }
    throw std::logic_error("head: bad layout");
  }

  HeadOut forward(const ag::Var& roi) const {
    check_input(roi->value);
    HeadOut out;
    ag::Var t = trunk(roi);
    out.cls = cls_fc.apply(t);

    switch (detail::theta_form(cfg.layout)) {
      case detail::ThetaForm::kSharedTrunk:
        out.theta = angle_fc.apply(t);
        break;
      case detail::ThetaForm::kOwnFcStack: {
        ag::Var flat = ag::flatten(roi);
        ag::Var h = ag::relu(theta_fc2.apply(ag::relu(theta_fc1.apply(flat))));
        out.theta = angle_fc.apply(h);
        break;
      }
      case detail::ThetaForm::kConvStrip:
        out.theta = theta_out_fc.apply(
            ag::flatten(strip_module_forward(theta_strip, theta_conv.apply(roi))));
        break;
    }

    switch (detail::loc_form(cfg.layout)) {
      case detail::LocForm::kDirectFc:
        out.loc = loc_fc.apply(ag::flatten(roi));
        break;
      case detail::LocForm::kConvConv:
      case detail::LocForm::kConvStrip:
        out.loc = loc_fc.apply(ag::flatten(loc_features(roi)));
        break;
      case detail::LocForm::kSplitStripXY: {
        ag::Var xy = xy_fc.apply(ag::flatten(strip_module_forward(xy_strip, xy_conv.apply(roi))));
        ag::Var wh = wh_fc.apply(ag::flatten(wh_conv2.apply(wh_conv.apply(roi))));
        out.loc = ag::concat_channels(xy, wh);
        break;
      }
      case detail::LocForm::kSplitStripWH: {
        ag::Var xy = xy_fc.apply(ag::flatten(xy_conv2.apply(xy_conv.apply(roi))));
        ag::Var wh = wh_fc.apply(ag::flatten(strip_module_forward(wh_strip, wh_conv.apply(roi))));
        out.loc = ag::concat_channels(xy, wh);
        break;
      }
    }
    return out;
  }

  std::vector<ag::NamedParam> params() const {
    std::vector<ag::NamedParam> out;
    auto take = [&](std::vector<ag::NamedParam> v) {
      out.insert(out.end(), v.begin(), v.end());
    };
    take(shared_fc1.params("shared_fc1."));
    take(shared_fc2.params("shared_fc2."));
    take(cls_fc.params("cls_fc."));
    switch (detail::theta_form(cfg.layout)) {
      case detail::ThetaForm::kSharedTrunk:
        take(angle_fc.params("angle_fc."));
        break;
      case detail::ThetaForm::kOwnFcStack:
        take(theta_fc1.params("theta_fc1."));
        take(theta_fc2.params("theta_fc2."));
        take(angle_fc.params("angle_fc."));
        break;
      case detail::ThetaForm::kConvStrip:
        take(theta_conv.params("theta_conv."));
        take(theta_strip.params("theta_strip."));
        take(theta_out_fc.params("theta_out_fc."));
        break;
    }
    switch (detail::loc_form(cfg.layout)) {
      case detail::LocForm::kDirectFc:
        take(loc_fc.params("loc_fc."));
        break;
      case detail::LocForm::kConvConv:
        take(loc_conv1.params("loc_conv1."));
        take(loc_conv2.params("loc_conv2."));
        take(loc_fc.params("loc_fc."));
        break;
      case detail::LocForm::kConvStrip:
        take(loc_conv1.params("loc_conv1."));
        take(loc_strip.params("loc_strip."));
        take(loc_fc.params("loc_fc."));
        break;
      case detail::LocForm::kSplitStripXY:
        take(xy_conv.params("xy_conv."));
        take(xy_strip.params("xy_strip."));
        take(xy_fc.params("xy_fc."));
        take(wh_conv.params("wh_conv."));
        take(wh_conv2.params("wh_conv2."));
        take(wh_fc.params("wh_fc."));
        break;
      case detail::LocForm::kSplitStripWH:
        take(xy_conv.params("xy_conv."));
        take(xy_conv2.params("xy_conv2."));
        take(xy_fc.params("xy_fc."));
        take(wh_conv.params("wh_conv."));
        take(wh_strip.params("wh_strip."));
        take(wh_fc.params("wh_fc."));
        break;
    }
    return out;
  }

  std::int64_t count_parameters() const {
    std::int64_t n = 0;
    for (const auto& p : params()) n += p.var->value.numel();
    return n;
  }
};

inline StripHead make_strip_head(const StripHeadConfig& cfg) {
  cfg.validate();
  StripHead h;
  h.cfg = cfg;
  std::mt19937_64 rng(cfg.init_seed);
  const int C = cfg.channels;
  const std::int64_t flat = cfg.flat_dim();
  ConvSpec same3;
  same3.pad_top = same3.pad_bottom = same3.pad_left = same3.pad_right = 1;

  h.shared_fc1 = make_linear(static_cast<int>(flat), cfg.fc_dim, rng, "shared_fc1");
  h.shared_fc2 = make_linear(cfg.fc_dim, cfg.fc_dim, rng, "shared_fc2");
  h.cls_fc = make_linear(cfg.fc_dim, cfg.num_classes + 1, rng, "cls_fc");

  switch (detail::theta_form(cfg.layout)) {
    case detail::ThetaForm::kSharedTrunk:
      h.angle_fc = make_linear(cfg.fc_dim, 1, rng, "angle_fc");
      break;
    case detail::ThetaForm::kOwnFcStack:
      h.theta_fc1 = make_linear(static_cast<int>(flat), cfg.fc_dim, rng, "theta_fc1");
      h.theta_fc2 = make_linear(cfg.fc_dim, cfg.fc_dim, rng, "theta_fc2");
      h.angle_fc = make_linear(cfg.fc_dim, 1, rng, "angle_fc");
      break;
    case detail::ThetaForm::kConvStrip:
      h.theta_conv = make_conv(C, C, 3, 3, same3, rng, "theta_conv");
      h.theta_strip = init_strip_module(cfg.strip_config(), rng, "theta_strip");
      h.theta_out_fc = make_linear(static_cast<int>(flat), 1, rng, "theta_out_fc");
      break;
  }

  switch (detail::loc_form(cfg.layout)) {
    case detail::LocForm::kDirectFc:
      h.loc_fc = make_linear(static_cast<int>(flat), 4, rng, "loc_fc");
      break;
    case detail::LocForm::kConvConv:
      h.loc_conv1 = make_conv(C, C, 3, 3, same3, rng, "loc_conv1");
      h.loc_conv2 = make_conv(C, C, 3, 3, same3, rng, "loc_conv2");
      h.loc_fc = make_linear(static_cast<int>(flat), 4, rng, "loc_fc");
      break;
    case detail::LocForm::kConvStrip:
      h.loc_conv1 = make_conv(C, C, 3, 3, same3, rng, "loc_conv1");
      h.loc_strip = init_strip_module(cfg.strip_config(), rng, "loc_strip");
      h.loc_fc = make_linear(static_cast<int>(flat), 4, rng, "loc_fc");
      break;
    case detail::LocForm::kSplitStripXY:
      h.xy_conv = make_conv(C, C, 3, 3, same3, rng, "xy_conv");
      h.xy_strip = init_strip_module(cfg.strip_config(), rng, "xy_strip");
      h.xy_fc = make_linear(static_cast<int>(flat), 2, rng, "xy_fc");
      h.wh_conv = make_conv(C, C, 3, 3, same3, rng, "wh_conv");
      h.wh_conv2 = make_conv(C, C, 3, 3, same3, rng, "wh_conv2");
      h.wh_fc = make_linear(static_cast<int>(flat), 2, rng, "wh_fc");
      break;
    case detail::LocForm::kSplitStripWH:
      h.xy_conv = make_conv(C, C, 3, 3, same3, rng, "xy_conv");
      h.xy_conv2 = make_conv(C, C, 3, 3, same3, rng, "xy_conv2");
      h.xy_fc = make_linear(static_cast<int>(flat), 2, rng, "xy_fc");
      h.wh_conv = make_conv(C, C, 3, 3, same3, rng, "wh_conv");
      h.wh_strip = init_strip_module(cfg.strip_config(), rng, "wh_strip");
      h.wh_fc = make_linear(static_cast<int>(flat), 2, rng, "wh_fc");
      break;
  }
  return h;
}

// ---- training objective ----

inline constexpr double kHeadLocBeta = 1.0 / 9.0;

struct DetectionLoss {
  ag::Var cls, loc, angle, total;
};

// Cross-entropy on class logits plus smooth-L1 on the four box deltas and on
// dtheta, combined by the given weights.
inline DetectionLoss detection_loss(const HeadOut& out, const std::vector<int>& labels,
                                    const Tensor& loc_targets, const Tensor& theta_targets,
                                    double w_cls = 1.0, double w_loc = 1.0,
                                    double w_angle = 1.0) {
  for (double v : loc_targets.data)
    if (!std::isfinite(v)) throw std::invalid_argument("detection_loss: non-finite loc target");
  for (double v : theta_targets.data)
    if (!std::isfinite(v)) throw std::invalid_argument("detection_loss: non-finite theta target");
  DetectionLoss l;
  l.cls = ag::softmax_cross_entropy(out.cls, labels);
  l.loc = ag::smooth_l1(out.loc, loc_targets, kHeadLocBeta);
  l.angle = ag::smooth_l1(out.theta, theta_targets, kHeadLocBeta);
  l.total = ag::add(ag::scale(l.cls, w_cls),
                    ag::add(ag::scale(l.loc, w_loc), ag::scale(l.angle, w_angle)));
  return l;
}

}  // namespace stripnet
