#pragma once

// Synthetic slender-object scenes and a desk-scale comparison experiment:
// strip-kernel blocks against a parameter-matched square-kernel control on
// oriented-box regression.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "stripnet/autograd.hpp"
#include "stripnet/backbone.hpp"
#include "stripnet/eval.hpp"
#include "stripnet/geometry.hpp"
#include "stripnet/init.hpp"
#include "stripnet/strip_module.hpp"
#include "stripnet/tensor.hpp"

namespace stripnet {

namespace detail {

// Toolchain-independent draws: mt19937_64 output is pinned by the standard,
// the distribution adapters are not.
inline double unit_draw(std::mt19937_64& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;  // [0, 1)
}

inline double gauss_draw(std::mt19937_64& rng) {
  const double u1 = 1.0 - unit_draw(rng);  // (0, 1]
  const double u2 = unit_draw(rng);
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * kPi * u2);
}

template <typename T>
inline void shuffle_draws(std::vector<T>& v, std::mt19937_64& rng) {
  for (std::size_t i = v.size(); i > 1; --i)
    std::swap(v[i - 1], v[rng() % i]);
}

}  // namespace detail

// One pixel of anti-aliasing clearance kept between a box and the frame edge.
inline constexpr double kSceneMargin = 1.0;

enum class TextureMode { kFlat, kRamp };

struct SceneConfig {
  int image_size = 64;
  double ar_lo = 1.0, ar_hi = 10.0;        // long side / short side
  double scale_lo = 0.3, scale_hi = 0.6;   // long side as a fraction of the image
  double noise = 0.02;                     // gaussian pixel noise, 0 disables
  TextureMode texture = TextureMode::kRamp;
  std::uint64_t seed = 1;

  void validate() const {
    if (image_size < 16) throw std::invalid_argument("scene: image_size must be >= 16");
    if (!(ar_lo >= 1.0) || !(ar_hi >= ar_lo) || !std::isfinite(ar_hi))
      throw std::invalid_argument("scene: need 1 <= ar_lo <= ar_hi < inf");
    if (!(scale_lo > 0.0) || !(scale_hi >= scale_lo) || !(scale_hi < 1.0))
      throw std::invalid_argument("scene: need 0 < scale_lo <= scale_hi < 1");
    if (!(noise >= 0.0)) throw std::invalid_argument("scene: noise must be >= 0");
    // The squarest box at the largest scale has the widest bounding circle;
    // it must fit the frame at every rotation.
    const double w = image_size * scale_hi;
    const double h = w / ar_lo;
    if (std::hypot(w, h) / 2.0 + kSceneMargin >= image_size / 2.0)
      throw std::invalid_argument("scene: a box of this scale cannot fit at every angle");
  }
};

struct Scene {
  Tensor image;  // (1, 1, S, S), foreground brighter than background
  RBox box;      // canonical, fully inside the frame
};

// Exact pixel coverage: area of the unit pixel square clipped by the box.
inline double pixel_coverage(const Polygon& quad, double x0, double y0) {
  const Polygon pix{{x0, y0}, {x0 + 1.0, y0}, {x0 + 1.0, y0 + 1.0}, {x0, y0 + 1.0}};
  return polygon_area(clip_convex(pix, quad));
}

// Deterministic per (seed, index); the draw order below is part of the
// contract: ar, scale, theta, cx, cy, foreground, background, noise.
inline Scene generate_scene(const SceneConfig& cfg, std::int64_t index) {
  cfg.validate();
  std::mt19937_64 rng(derive_seed(cfg.seed, static_cast<std::uint64_t>(index)));
  const double S = static_cast<double>(cfg.image_size);

  const double ar = cfg.ar_lo + (cfg.ar_hi - cfg.ar_lo) * detail::unit_draw(rng);
  const double w = S * (cfg.scale_lo + (cfg.scale_hi - cfg.scale_lo) * detail::unit_draw(rng));
  const double h = w / ar;
  const double theta = -kHalfPi + kPi * detail::unit_draw(rng);

  const double c = std::cos(theta), s = std::sin(theta);
  const double half_w = (std::abs(w * c) + std::abs(h * s)) / 2.0;
  const double half_h = (std::abs(w * s) + std::abs(h * c)) / 2.0;
  const double cx = (half_w + kSceneMargin) +
                    (S - 2.0 * (half_w + kSceneMargin)) * detail::unit_draw(rng);
  const double cy = (half_h + kSceneMargin) +
                    (S - 2.0 * (half_h + kSceneMargin)) * detail::unit_draw(rng);

  Scene sc;
  sc.box = RBox{cx, cy, w, h, theta};  // ar >= 1 and theta in range: already canonical

  const double fg = 0.75 + 0.2 * detail::unit_draw(rng);
  const double b0 = 0.2 + 0.15 * detail::unit_draw(rng);
  double gx = 0.0, gy = 0.0;
  if (cfg.texture == TextureMode::kRamp) {
    gx = -0.1 + 0.2 * detail::unit_draw(rng);
    gy = -0.1 + 0.2 * detail::unit_draw(rng);
  }

  const auto quad_arr = corners(sc.box);
  const Polygon quad(quad_arr.begin(), quad_arr.end());
  const Aabb bb = aabb(sc.box);

  sc.image = Tensor(1, 1, cfg.image_size, cfg.image_size);
  for (int y = 0; y < cfg.image_size; ++y) {
    for (int x = 0; x < cfg.image_size; ++x) {
      double cov = 0.0;
      if (x + 1.0 > bb.x0 && x < bb.x1 && y + 1.0 > bb.y0 && y < bb.y1)
        cov = pixel_coverage(quad, x, y);
      const double bg = b0 + gx * ((x + 0.5) / S) + gy * ((y + 0.5) / S);
      sc.image.at(0, 0, y, x) = bg + (fg - bg) * cov;
    }
  }
  if (cfg.noise > 0.0)
    for (int y = 0; y < cfg.image_size; ++y)
      for (int x = 0; x < cfg.image_size; ++x)
        sc.image.at(0, 0, y, x) += cfg.noise * detail::gauss_draw(rng);
  return sc;
}

// Scenes are self-seeded by index, so parallel generation is deterministic.
inline std::vector<Scene> generate_dataset(const SceneConfig& cfg, int count) {
  cfg.validate();
  std::vector<Scene> out(static_cast<std::size_t>(count));
  parallel_for(count, [&](std::int64_t i) { out[static_cast<std::size_t>(i)] = generate_scene(cfg, i); });
  return out;
}

// Small oriented-box regressor: strided stem, two reweighting blocks, global
// average pooling, one linear layer for (dx, dy, dw, dh, dtheta).
struct ToyNetConfig {
  int in_channels = 1;
  int channels = 16;
  int blocks = 2;
  int ffn_ratio = 2;
  ModuleDesign design = ModuleDesign::kSequential;
  int strip_k = 11;
  int square_side = 7;  // kSingleSquare control
  int num_outputs = 5;
  std::uint64_t init_seed = 42;

  void validate() const {
    if (in_channels < 1 || channels < 1 || blocks < 1 || ffn_ratio < 1 || num_outputs < 1)
      throw std::invalid_argument("toy net: dims must be positive");
    strip_config().validate();
  }

  StripModuleConfig strip_config() const {
    StripModuleConfig sm;
    sm.channels = channels;
    sm.k = strip_k;
    sm.design = design;
    sm.single_side = square_side;
    return sm;
  }
};

struct ToyNet {
  ToyNetConfig cfg;
  ConvLayer stem;
  NormLayer stem_norm;
  std::vector<BasicBlock> blocks;
  LinearLayer head;

  ag::Var forward(const ag::Var& x, bool training) const {
    ag::Var cur = stem_norm.apply(stem.apply(x), training);
    for (const auto& b : blocks) cur = b.forward(cur, training);
    return head.apply(ag::global_avg_pool(cur));
  }

  std::vector<ag::NamedParam> params() const {
    std::vector<ag::NamedParam> out = stem.params("stem.");
    auto take = [&](std::vector<ag::NamedParam> v) { out.insert(out.end(), v.begin(), v.end()); };
    take(stem_norm.params("stem.norm."));
    for (std::size_t b = 0; b < blocks.size(); ++b)
      take(blocks[b].params("block" + std::to_string(b) + "."));
    take(head.params("head."));
    return out;
  }

  std::int64_t count_parameters() const {
    std::int64_t n = 0;
    for (const auto& p : params()) n += p.var->value.numel();
    return n;
  }
};

// The backbone default init (truncated normal, std 0.02) targets full-scale
// training; at toy scale it leaves the reweighting branch, a product of three
// such layers, numerically inert and its gradients vanish. Rescaling every
// weight to std sqrt(2 / fan_in) restores unit-scale signal through all
// branches; the +-2 sigma truncation scales along, so this equals having
// drawn at the target std.
inline void rescale_weights_fan_in(const std::vector<ag::NamedParam>& params) {
  for (const auto& p : params) {
    const std::string& n = p.name;
    const bool is_weight = (n.size() >= 7 && n.compare(n.size() - 7, 7, ".kernel") == 0) ||
                           (n.size() >= 7 && n.compare(n.size() - 7, 7, ".weight") == 0);
    if (!is_weight) continue;
    Tensor& w = p.var->value;
    const double fan = static_cast<double>(w.c() * w.h() * w.w());
    const double f = std::sqrt(2.0 / fan) / 0.02;
    for (double& v : w.data) v *= f;
  }
}

inline ToyNet make_toy_net(const ToyNetConfig& cfg) {
  cfg.validate();
  ToyNet net;
  net.cfg = cfg;
  std::mt19937_64 rng(cfg.init_seed);
  ConvSpec stem_spec;
  stem_spec.stride = 4;
  stem_spec.pad_top = stem_spec.pad_bottom = stem_spec.pad_left = stem_spec.pad_right = 2;
  net.stem = make_conv(cfg.in_channels, cfg.channels, 5, 5, stem_spec, rng, "stem");
  net.stem_norm = make_norm(cfg.channels, "stem.norm");
  for (int b = 0; b < cfg.blocks; ++b)
    net.blocks.push_back(make_basic_block(cfg.channels, cfg.strip_config(), cfg.ffn_ratio, rng,
                                          "block" + std::to_string(b) + "."));
  net.head = make_linear(cfg.channels, cfg.num_outputs, rng, "head");
  rescale_weights_fan_in(net.params());
  return net;
}

inline Tensor batch_images(const std::vector<Scene>& scenes, const std::vector<int>& idx) {
  if (idx.empty()) throw std::invalid_argument("batch_images: empty batch");
  const Tensor& first = scenes[static_cast<std::size_t>(idx[0])].image;
  Tensor out(static_cast<std::int64_t>(idx.size()), first.c(), first.h(), first.w());
  const std::int64_t per = first.numel();
  for (std::size_t b = 0; b < idx.size(); ++b)
    std::copy_n(scenes[static_cast<std::size_t>(idx[b])].image.data.data(), per,
                out.data.data() + static_cast<std::int64_t>(b) * per);
  return out;
}

inline Tensor batch_targets(const std::vector<Scene>& scenes, const std::vector<int>& idx,
                            const RBox& anchor) {
  Tensor out(static_cast<std::int64_t>(idx.size()), 5, 1, 1);
  for (std::size_t b = 0; b < idx.size(); ++b) {
    const BoxDelta d = encode_delta(anchor, scenes[static_cast<std::size_t>(idx[b])].box);
    const auto bi = static_cast<std::int64_t>(b);
    out.at(bi, 0, 0, 0) = d.dx;
    out.at(bi, 1, 0, 0) = d.dy;
    out.at(bi, 2, 0, 0) = d.dw;
    out.at(bi, 3, 0, 0) = d.dh;
    out.at(bi, 4, 0, 0) = d.dtheta;
  }
  return out;
}

inline constexpr double kLocBeta = 1.0 / 9.0;

struct TrainTrace {
  std::vector<double> epoch_mean_loss;
  double final_loss = std::numeric_limits<double>::quiet_NaN();
  int steps_run = 0;
};

// SGD with momentum on the smooth-L1 delta loss. The step size ramps linearly
// to lr over the first 5% of steps (momentum makes full-rate steps unstable on
// the steep surface right at init), then follows a half-cosine decay to zero,
// so every run finishes with a quiet tail and run-to-run spread in the final
// weights stays small. Batches walk a per-epoch reshuffled permutation of the
// training set; a trailing partial epoch is summarized like a full one.
inline TrainTrace train_toy_regressor(ToyNet& net, const std::vector<Scene>& train,
                                      const RBox& anchor, int steps, int batch, double lr,
                                      double momentum, std::uint64_t order_seed) {
  if (steps < 1 || batch < 1) throw std::invalid_argument("train: steps and batch must be >= 1");
  if (static_cast<std::size_t>(batch) > train.size())
    throw std::invalid_argument("train: batch larger than the training set");
  const std::vector<ag::NamedParam> params = net.params();
  ag::Sgd opt;
  opt.lr = lr;
  opt.momentum = momentum;
  std::mt19937_64 order_rng(order_seed);
  std::vector<int> perm(train.size());
  for (std::size_t i = 0; i < perm.size(); ++i) perm[i] = static_cast<int>(i);
  std::size_t pos = perm.size();  // forces a shuffle before the first batch

  TrainTrace trace;
  double epoch_acc = 0.0;
  int epoch_n = 0;
  const int warmup = std::max(1, steps / 20);
  for (int step = 0; step < steps; ++step) {
    if (step < warmup) {
      opt.lr = lr * (step + 1) / warmup;
    } else {
      opt.lr = lr * 0.5 * (1.0 + std::cos(kPi * (step - warmup) / std::max(1, steps - warmup)));
    }
    if (pos + static_cast<std::size_t>(batch) > perm.size()) {
      if (epoch_n > 0) {
        trace.epoch_mean_loss.push_back(epoch_acc / epoch_n);
        epoch_acc = 0.0;
        epoch_n = 0;
      }
      detail::shuffle_draws(perm, order_rng);
      pos = 0;
    }
    const std::vector<int> idx(perm.begin() + static_cast<std::ptrdiff_t>(pos),
                               perm.begin() + static_cast<std::ptrdiff_t>(pos) + batch);
    pos += static_cast<std::size_t>(batch);

    ag::Var x = ag::constant(batch_images(train, idx));
    ag::Var pred = net.forward(x, true);
    ag::Var loss = ag::smooth_l1(pred, batch_targets(train, idx, anchor), kLocBeta);
    const double lv = loss->value.data[0];
    if (!std::isfinite(lv))
      throw std::runtime_error("training diverged at step " + std::to_string(step));
    ag::zero_grads(params);
    ag::backward(loss);
    opt.step(params);
    epoch_acc += lv;
    ++epoch_n;
    trace.final_loss = lv;
    trace.steps_run = step + 1;
  }
  if (epoch_n > 0) trace.epoch_mean_loss.push_back(epoch_acc / epoch_n);
  return trace;
}

struct ArmMetrics {
  std::vector<double> bin_lo, bin_hi;
  std::vector<std::int64_t> bin_count;
  std::vector<double> bin_iou;        // NaN for an empty bin
  std::vector<double> bin_angle_deg;  // mean |angle error|, NaN for an empty bin
  double mean_iou = std::numeric_limits<double>::quiet_NaN();
  double slender_iou = std::numeric_limits<double>::quiet_NaN();  // ar >= slender_lo
  double squat_iou = std::numeric_limits<double>::quiet_NaN();    // ar < squat_hi
};

// Decodes predictions against the anchor and scores rotated IoU plus absolute
// angle error per aspect-ratio slice.
inline ArmMetrics evaluate_toy(const ToyNet& net, const std::vector<Scene>& test,
                               const RBox& anchor, const std::vector<double>& edges,
                               double slender_lo, double squat_hi, int eval_batch = 32) {
  validate_ar_edges(edges);
  if (test.empty()) throw std::invalid_argument("evaluate_toy: empty test set");
  const std::size_t nbins = edges.size() - 1;
  ArmMetrics m;
  m.bin_lo.assign(nbins, 0.0);
  m.bin_hi.assign(nbins, 0.0);
  for (std::size_t k = 0; k < nbins; ++k) {
    m.bin_lo[k] = edges[k];
    m.bin_hi[k] = edges[k + 1];
  }
  m.bin_count.assign(nbins, 0);
  std::vector<double> iou_acc(nbins, 0.0), ang_acc(nbins, 0.0);
  double all_acc = 0.0, slender_acc = 0.0, squat_acc = 0.0;
  std::int64_t slender_n = 0, squat_n = 0;

  for (std::size_t base = 0; base < test.size(); base += static_cast<std::size_t>(eval_batch)) {
    std::vector<int> idx;
    for (std::size_t i = base; i < std::min(base + static_cast<std::size_t>(eval_batch), test.size()); ++i)
      idx.push_back(static_cast<int>(i));
    ag::Var x = ag::constant(batch_images(test, idx));
    const Tensor pred = net.forward(x, false)->value;
    for (std::size_t b = 0; b < idx.size(); ++b) {
      const auto bi = static_cast<std::int64_t>(b);
      BoxDelta d;
      d.dx = pred.at(bi, 0, 0, 0);
      d.dy = pred.at(bi, 1, 0, 0);
      d.dw = pred.at(bi, 2, 0, 0);
      d.dh = pred.at(bi, 3, 0, 0);
      d.dtheta = pred.at(bi, 4, 0, 0);
      const RBox got = decode_delta(anchor, d);
      const RBox& want = test[static_cast<std::size_t>(idx[b])].box;
      const double overlap = iou(got, want);
      const double ang = std::abs(rad_to_deg(wrap_half_pi(got.theta - want.theta)));
      const double ar = aspect_ratio(want);
      all_acc += overlap;
      if (ar >= slender_lo) {
        slender_acc += overlap;
        ++slender_n;
      }
      if (ar < squat_hi) {
        squat_acc += overlap;
        ++squat_n;
      }
      const int bin = ar_bin(ar, edges);
      if (bin >= 0) {
        const auto k = static_cast<std::size_t>(bin);
        ++m.bin_count[k];
        iou_acc[k] += overlap;
        ang_acc[k] += ang;
      }
    }
  }
  m.bin_iou.assign(nbins, std::numeric_limits<double>::quiet_NaN());
  m.bin_angle_deg.assign(nbins, std::numeric_limits<double>::quiet_NaN());
  for (std::size_t k = 0; k < nbins; ++k)
    if (m.bin_count[k] > 0) {
      m.bin_iou[k] = iou_acc[k] / static_cast<double>(m.bin_count[k]);
      m.bin_angle_deg[k] = ang_acc[k] / static_cast<double>(m.bin_count[k]);
    }
  m.mean_iou = all_acc / static_cast<double>(test.size());
  if (slender_n > 0) m.slender_iou = slender_acc / static_cast<double>(slender_n);
  if (squat_n > 0) m.squat_iou = squat_acc / static_cast<double>(squat_n);
  return m;
}

enum class ArmKind { kStrip, kSquareMatched };

inline const char* arm_name(ArmKind a) {
  return a == ArmKind::kStrip ? "strip" : "square-matched";
}

inline ArmKind arm_by_name(const std::string& s) {
  if (s == "strip") return ArmKind::kStrip;
  if (s == "square-matched") return ArmKind::kSquareMatched;
  throw std::invalid_argument("unknown arm: " + s + " (expected strip | square-matched)");
}

struct ExperimentConfig {
  SceneConfig scene;  // scene.seed is overridden by seeds derived from `seed`
  ArmKind arm_a = ArmKind::kStrip;
  ArmKind arm_b = ArmKind::kSquareMatched;
  // Width 24 and 1024 training scenes give both arms enough capacity and data
  // to saturate the low-aspect-ratio bins; at width 16 the bin means are too
  // noisy for a stable comparison.
  int channels = 24;
  int blocks = 2;
  int ffn_ratio = 2;
  int strip_k = 11;
  int square_side = 7;
  int steps = 3000;
  int batch = 8;
  int train_size = 1024;
  int test_size = 1024;
  double lr = 0.02;  // peak rate; the cosine schedule averages to half of it
  double momentum = 0.9;
  std::vector<double> ar_edges = default_ar_edges();
  double slender_lo = 5.0;  // slender slice: ar >= this
  double squat_hi = 2.0;    // squat slice: ar < this
  RBox anchor{32.0, 32.0, 32.0, 12.0, 0.0};
  std::uint64_t seed = 1;

  void validate() const {
    scene.validate();
    if (steps < 1 || batch < 1 || train_size < 1 || test_size < 1)
      throw std::invalid_argument("experiment: counts must be positive");
    if (batch > train_size) throw std::invalid_argument("experiment: batch larger than train set");
    if (!(lr >= 0.0) || !(momentum >= 0.0) || !(momentum < 1.0))
      throw std::invalid_argument("experiment: bad optimizer settings");
    validate_ar_edges(ar_edges);
    canonical(anchor);  // rejects degenerate anchors
  }

  ToyNetConfig net_config(ArmKind arm, int slot) const {
    ToyNetConfig t;
    t.channels = channels;
    t.blocks = blocks;
    t.ffn_ratio = ffn_ratio;
    t.design = arm == ArmKind::kStrip ? ModuleDesign::kSequential : ModuleDesign::kSingleSquare;
    t.strip_k = strip_k;
    t.square_side = square_side;
    t.init_seed = derive_seed(seed, 100 + static_cast<std::uint64_t>(slot));
    return t;
  }
};

struct ArmReport {
  std::string arm;
  std::int64_t param_count = 0;
  TrainTrace trace;
  ArmMetrics metrics;
  double wall_seconds = 0.0;
};

struct ExperimentReport {
  ArmReport a, b;
  std::vector<double> bin_iou_delta;  // a minus b, NaN where either side is empty
  double slender_delta = std::numeric_limits<double>::quiet_NaN();
  double squat_delta = std::numeric_limits<double>::quiet_NaN();
  std::uint64_t seed = 0;
};

// Both arms see identical data and batch order; only the module design and
// the per-slot init stream differ.
inline ArmReport run_arm(const ExperimentConfig& cfg, ArmKind arm, int slot,
                         const std::vector<Scene>& train, const std::vector<Scene>& test) {
  const auto t0 = std::chrono::steady_clock::now();
  ToyNet net = make_toy_net(cfg.net_config(arm, slot));
  ArmReport r;
  r.arm = arm_name(arm);
  r.param_count = net.count_parameters();
  r.trace = train_toy_regressor(net, train, cfg.anchor, cfg.steps, cfg.batch, cfg.lr,
                                cfg.momentum, derive_seed(cfg.seed, 7));
  r.metrics = evaluate_toy(net, test, cfg.anchor, cfg.ar_edges, cfg.slender_lo, cfg.squat_hi);
  r.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return r;
}

inline ExperimentReport compare_square_vs_strip(const ExperimentConfig& cfg) {
  cfg.validate();
  SceneConfig train_sc = cfg.scene;
  train_sc.seed = derive_seed(cfg.seed, 1);
  SceneConfig test_sc = cfg.scene;
  test_sc.seed = derive_seed(cfg.seed, 2);
  const std::vector<Scene> train = generate_dataset(train_sc, cfg.train_size);
  const std::vector<Scene> test = generate_dataset(test_sc, cfg.test_size);

  ExperimentReport rep;
  rep.seed = cfg.seed;
  rep.a = run_arm(cfg, cfg.arm_a, 0, train, test);
  rep.b = run_arm(cfg, cfg.arm_b, 1, train, test);

  const double pa = static_cast<double>(rep.a.param_count);
  const double pb = static_cast<double>(rep.b.param_count);
  if (std::abs(pa - pb) / std::max(pa, pb) > 0.05)
    throw std::runtime_error("arm parameter counts differ by more than 5%: " +
                             std::to_string(rep.a.param_count) + " vs " +
                             std::to_string(rep.b.param_count));

  rep.bin_iou_delta.assign(rep.a.metrics.bin_iou.size(),
                           std::numeric_limits<double>::quiet_NaN());
  for (std::size_t k = 0; k < rep.bin_iou_delta.size(); ++k)
    rep.bin_iou_delta[k] = rep.a.metrics.bin_iou[k] - rep.b.metrics.bin_iou[k];
  rep.slender_delta = rep.a.metrics.slender_iou - rep.b.metrics.slender_iou;
  rep.squat_delta = rep.a.metrics.squat_iou - rep.b.metrics.squat_iou;
  return rep;
}

// JSON config/report round trip. Absent config keys keep their defaults.
inline nlohmann::json experiment_config_to_json(const ExperimentConfig& cfg) {
  nlohmann::json j;
  j["scene"] = {{"image_size", cfg.scene.image_size}, {"ar_lo", cfg.scene.ar_lo},
                {"ar_hi", cfg.scene.ar_hi},           {"scale_lo", cfg.scene.scale_lo},
                {"scale_hi", cfg.scene.scale_hi},     {"noise", cfg.scene.noise},
                {"texture", cfg.scene.texture == TextureMode::kRamp ? "ramp" : "flat"}};
  j["arm_a"] = arm_name(cfg.arm_a);
  j["arm_b"] = arm_name(cfg.arm_b);
  j["channels"] = cfg.channels;
  j["blocks"] = cfg.blocks;
  j["ffn_ratio"] = cfg.ffn_ratio;
  j["strip_k"] = cfg.strip_k;
  j["square_side"] = cfg.square_side;
  j["steps"] = cfg.steps;
  j["batch"] = cfg.batch;
  j["train_size"] = cfg.train_size;
  j["test_size"] = cfg.test_size;
  j["lr"] = cfg.lr;
  j["momentum"] = cfg.momentum;
  std::vector<double> edges = cfg.ar_edges;
  j["ar_edges"] = edges;  // inf serializes as null; reload maps null back
  j["slender_lo"] = cfg.slender_lo;
  j["squat_hi"] = cfg.squat_hi;
  j["anchor"] = {cfg.anchor.cx, cfg.anchor.cy, cfg.anchor.w, cfg.anchor.h, cfg.anchor.theta};
  j["seed"] = cfg.seed;
  return j;
}

inline ExperimentConfig experiment_config_from_json(const nlohmann::json& j) {
  ExperimentConfig cfg;
  if (j.contains("scene")) {
    const auto& s = j["scene"];
    if (s.contains("image_size")) cfg.scene.image_size = s["image_size"].get<int>();
    if (s.contains("ar_lo")) cfg.scene.ar_lo = s["ar_lo"].get<double>();
    if (s.contains("ar_hi")) cfg.scene.ar_hi = s["ar_hi"].get<double>();
    if (s.contains("scale_lo")) cfg.scene.scale_lo = s["scale_lo"].get<double>();
    if (s.contains("scale_hi")) cfg.scene.scale_hi = s["scale_hi"].get<double>();
    if (s.contains("noise")) cfg.scene.noise = s["noise"].get<double>();
    if (s.contains("texture")) {
      const std::string t = s["texture"].get<std::string>();
      if (t == "ramp") cfg.scene.texture = TextureMode::kRamp;
      else if (t == "flat") cfg.scene.texture = TextureMode::kFlat;
      else throw std::invalid_argument("config: texture must be flat | ramp");
    }
  }
  if (j.contains("arm_a")) cfg.arm_a = arm_by_name(j["arm_a"].get<std::string>());
  if (j.contains("arm_b")) cfg.arm_b = arm_by_name(j["arm_b"].get<std::string>());
  if (j.contains("channels")) cfg.channels = j["channels"].get<int>();
  if (j.contains("blocks")) cfg.blocks = j["blocks"].get<int>();
  if (j.contains("ffn_ratio")) cfg.ffn_ratio = j["ffn_ratio"].get<int>();
  if (j.contains("strip_k")) cfg.strip_k = j["strip_k"].get<int>();
  if (j.contains("square_side")) cfg.square_side = j["square_side"].get<int>();
  if (j.contains("steps")) cfg.steps = j["steps"].get<int>();
  if (j.contains("batch")) cfg.batch = j["batch"].get<int>();
  if (j.contains("train_size")) cfg.train_size = j["train_size"].get<int>();
  if (j.contains("test_size")) cfg.test_size = j["test_size"].get<int>();
  if (j.contains("lr")) cfg.lr = j["lr"].get<double>();
  if (j.contains("momentum")) cfg.momentum = j["momentum"].get<double>();
  if (j.contains("ar_edges")) {
    cfg.ar_edges.clear();
    for (const auto& e : j["ar_edges"])
      cfg.ar_edges.push_back(e.is_null() ? std::numeric_limits<double>::infinity()
                                         : e.get<double>());
  }
  if (j.contains("slender_lo")) cfg.slender_lo = j["slender_lo"].get<double>();
  if (j.contains("squat_hi")) cfg.squat_hi = j["squat_hi"].get<double>();
  if (j.contains("anchor")) {
    const auto& a = j["anchor"];
    if (a.size() != 5) throw std::invalid_argument("config: anchor needs 5 numbers");
    cfg.anchor = RBox{a[0].get<double>(), a[1].get<double>(), a[2].get<double>(),
                      a[3].get<double>(), a[4].get<double>()};
  }
  if (j.contains("seed")) cfg.seed = j["seed"].get<std::uint64_t>();
  return cfg;
}

namespace detail {
inline nlohmann::json arm_report_to_json(const ArmReport& r) {
  nlohmann::json j;
  j["arm"] = r.arm;
  j["param_count"] = r.param_count;
  j["steps_run"] = r.trace.steps_run;
  j["final_loss"] = r.trace.final_loss;
  j["epoch_mean_loss"] = r.trace.epoch_mean_loss;
  j["wall_seconds"] = r.wall_seconds;
  j["bin_lo"] = r.metrics.bin_lo;
  j["bin_hi"] = r.metrics.bin_hi;  // inf serializes as null
  j["bin_count"] = r.metrics.bin_count;
  j["bin_iou"] = r.metrics.bin_iou;
  j["bin_angle_deg"] = r.metrics.bin_angle_deg;
  j["mean_iou"] = r.metrics.mean_iou;
  j["slender_iou"] = r.metrics.slender_iou;
  j["squat_iou"] = r.metrics.squat_iou;
  return j;
}
}  // namespace detail

inline nlohmann::json experiment_report_to_json(const ExperimentReport& rep,
                                                const ExperimentConfig& cfg) {
  nlohmann::json j;
  j["config"] = experiment_config_to_json(cfg);
  j["seed"] = rep.seed;
  j["arm_a"] = detail::arm_report_to_json(rep.a);
  j["arm_b"] = detail::arm_report_to_json(rep.b);
  j["bin_iou_delta"] = rep.bin_iou_delta;
  j["slender_delta"] = rep.slender_delta;
  j["squat_delta"] = rep.squat_delta;
  return j;
}

// Aligned per-bin table, one row per aspect-ratio slice.
inline std::string experiment_report_table(const ExperimentReport& rep) {
  std::ostringstream os;
  os.setf(std::ios::fixed);
  os.precision(4);
  os << "bin            n(a)   iou(a)  ang(a)    n(b)   iou(b)  ang(b)    iou delta\n";
  const auto& A = rep.a.metrics;
  const auto& B = rep.b.metrics;
  for (std::size_t k = 0; k < A.bin_iou.size(); ++k) {
    std::ostringstream lbl;
    lbl << "[" << A.bin_lo[k] << ", ";
    if (std::isinf(A.bin_hi[k])) lbl << "inf";
    else lbl << A.bin_hi[k];
    lbl << ")";
    os << lbl.str();
    for (std::size_t pad = lbl.str().size(); pad < 12; ++pad) os << ' ';
    os << ' ' << A.bin_count[k] << "  " << A.bin_iou[k] << "  " << A.bin_angle_deg[k] << "   "
       << B.bin_count[k] << "  " << B.bin_iou[k] << "  " << B.bin_angle_deg[k] << "   "
       << rep.bin_iou_delta[k] << "\n";
  }
  os << "slender (ar >= 5): " << A.slender_iou << " vs " << B.slender_iou
     << " delta " << rep.slender_delta << "\n";
  os << "squat   (ar <  2): " << A.squat_iou << " vs " << B.squat_iou
     << " delta " << rep.squat_delta << "\n";
  return os.str();
}

inline std::string experiment_report_csv(const ExperimentReport& rep) {
  std::ostringstream os;
  os.precision(10);
  os << "bin_lo,bin_hi,count_a,iou_a,angle_a,count_b,iou_b,angle_b,iou_delta\n";
  const auto& A = rep.a.metrics;
  const auto& B = rep.b.metrics;
  for (std::size_t k = 0; k < A.bin_iou.size(); ++k)
    os << A.bin_lo[k] << ',' << A.bin_hi[k] << ',' << A.bin_count[k] << ',' << A.bin_iou[k]
       << ',' << A.bin_angle_deg[k] << ',' << B.bin_count[k] << ',' << B.bin_iou[k] << ','
       << B.bin_angle_deg[k] << ',' << rep.bin_iou_delta[k] << "\n";
  return os.str();
}

}  // namespace stripnet
