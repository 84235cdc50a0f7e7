#include <catch_amalgamated.hpp>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <string>
#include <vector>

#include "oracles.hpp"
#include "stripnet/gradcheck.hpp"
#include "stripnet/head.hpp"
#include "stripnet/io.hpp"

using namespace stripnet;

namespace {

const std::vector<HeadLayout> kAllLayouts = {
    HeadLayout::kJointFc,
    HeadLayout::kPerBranchConv,
    HeadLayout::kStripXY,
    HeadLayout::kStripWH,
    HeadLayout::kStripTheta,
    HeadLayout::kStripLocSeparateTheta,
    HeadLayout::kStripLocSharedTheta,
    HeadLayout::kStripLocStripTheta,
};

StripHeadConfig small_config(HeadLayout layout) {
  StripHeadConfig cfg;
  cfg.channels = 4;
  cfg.grid = 7;
  cfg.fc_dim = 16;
  cfg.num_classes = 3;
  cfg.strip_k = 7;
  cfg.layout = layout;
  cfg.init_seed = 11;
  return cfg;
}

Tensor random_roi(std::int64_t n, const StripHeadConfig& cfg, std::uint64_t seed) {
  return oracle::random_tensor(n, cfg.channels, cfg.grid, cfg.grid, seed);
}

// Depthwise delta kernels plus a constant-one pointwise output turn the strip
// module into the identity function on its input.
void set_strip_identity(StripModuleParams& p) {
  auto delta = [](const ag::Var& v) {
    Tensor& t = v->value;
    t.fill(0.0);
    for (std::int64_t c = 0; c < t.n(); ++c) t.at(c, 0, t.h() / 2, t.w() / 2) = 1.0;
  };
  if (p.square_k) delta(p.square_k);
  if (p.big_k) delta(p.big_k);
  if (p.h_k) delta(p.h_k);
  if (p.v_k) delta(p.v_k);
  for (const ag::Var& b : {p.square_b, p.big_b, p.h_b, p.v_b})
    if (b) b->value.fill(0.0);
  p.pw_k->value.fill(0.0);
  p.pw_b->value.fill(1.0);
}

void set_conv_identity(ConvLayer& l) {
  Tensor& k = l.kernel->value;
  k.fill(0.0);
  for (std::int64_t c = 0; c < k.n(); ++c) k.at(c, c, k.h() / 2, k.w() / 2) = 1.0;
  l.bias->value.fill(0.0);
}

void copy_linear(const LinearLayer& from, LinearLayer& to) {
  to.weight->value = from.weight->value;
  to.bias->value = from.bias->value;
}

}  // namespace

TEST_CASE("layout names round trip") {
  for (HeadLayout l : kAllLayouts) CHECK(head_layout_by_name(head_layout_name(l)) == l);
  CHECK_THROWS_AS(head_layout_by_name("fully-connected"), std::invalid_argument);
}

TEST_CASE("output shapes hold for every layout") {
  for (HeadLayout l : kAllLayouts) {
    INFO(head_layout_name(l));
    const StripHeadConfig cfg = small_config(l);
    const StripHead head = make_strip_head(cfg);
    const HeadOut out = head.forward(ag::constant(random_roi(3, cfg, 5)));
    CHECK(out.cls->value.n() == 3);
    CHECK(out.cls->value.c() == cfg.num_classes + 1);
    CHECK(out.loc->value.n() == 3);
    CHECK(out.loc->value.c() == 4);
    CHECK(out.theta->value.n() == 3);
    CHECK(out.theta->value.c() == 1);
  }
}

TEST_CASE("zero input with zero biases gives zero outputs in every layout") {
  for (HeadLayout l : kAllLayouts) {
    INFO(head_layout_name(l));
    const StripHeadConfig cfg = small_config(l);
    const StripHead head = make_strip_head(cfg);  // biases start at zero
    const HeadOut out =
        head.forward(ag::constant(Tensor(2, cfg.channels, cfg.grid, cfg.grid)));
    CHECK(max_abs(out.cls->value) == 0.0);
    CHECK(max_abs(out.loc->value) == 0.0);
    CHECK(max_abs(out.theta->value) == 0.0);
  }
}

TEST_CASE("head rejects mismatched RoI tensors") {
  const StripHeadConfig cfg = small_config(HeadLayout::kStripLocSharedTheta);
  const StripHead head = make_strip_head(cfg);
  CHECK_THROWS_AS(head.forward(ag::constant(Tensor(1, cfg.channels + 1, cfg.grid, cfg.grid))),
                  std::invalid_argument);
  CHECK_THROWS_AS(head.forward(ag::constant(Tensor(1, cfg.channels, 5, 5))),
                  std::invalid_argument);
}

TEST_CASE("layouts build exactly the branches they declare") {
  auto names = [](HeadLayout l) {
    std::vector<std::string> out;
    for (const auto& p : make_strip_head(small_config(l)).params()) out.push_back(p.name);
    return out;
  };
  auto has_prefix = [](const std::vector<std::string>& ns, const std::string& pre) {
    for (const auto& n : ns)
      if (n.rfind(pre, 0) == 0) return true;
    return false;
  };

  const auto joint = names(HeadLayout::kJointFc);
  CHECK(has_prefix(joint, "loc_fc."));
  CHECK_FALSE(has_prefix(joint, "loc_conv1."));
  CHECK_FALSE(has_prefix(joint, "loc_strip."));
  CHECK_FALSE(has_prefix(joint, "theta_fc1."));

  const auto def = names(HeadLayout::kStripLocSharedTheta);
  CHECK(has_prefix(def, "loc_conv1."));
  CHECK(has_prefix(def, "loc_strip."));
  CHECK(has_prefix(def, "angle_fc."));
  CHECK_FALSE(has_prefix(def, "loc_conv2."));
  CHECK_FALSE(has_prefix(def, "theta_fc1."));

  const auto sep = names(HeadLayout::kStripLocSeparateTheta);
  CHECK(has_prefix(sep, "theta_fc1."));
  CHECK(has_prefix(sep, "theta_fc2."));
  CHECK(has_prefix(sep, "loc_strip."));

  const auto tstrip = names(HeadLayout::kStripLocStripTheta);
  CHECK(has_prefix(tstrip, "theta_strip."));
  CHECK(has_prefix(tstrip, "theta_out_fc."));
  CHECK_FALSE(has_prefix(tstrip, "angle_fc."));

  const auto xy = names(HeadLayout::kStripXY);
  CHECK(has_prefix(xy, "xy_strip."));
  CHECK(has_prefix(xy, "wh_conv2."));
  CHECK_FALSE(has_prefix(xy, "wh_strip."));

  const auto wh = names(HeadLayout::kStripWH);
  CHECK(has_prefix(wh, "wh_strip."));
  CHECK(has_prefix(wh, "xy_conv2."));
  CHECK_FALSE(has_prefix(wh, "xy_strip."));
}

TEST_CASE("perturbing a shared FC weight moves classification and angle together") {
  const StripHeadConfig cfg = small_config(HeadLayout::kStripLocSharedTheta);
  StripHead head = make_strip_head(cfg);
  const ag::Var roi = ag::constant(random_roi(2, cfg, 21));

  const HeadOut before = head.forward(roi);
  const Tensor cls0 = before.cls->value;
  const Tensor theta0 = before.theta->value;
  const Tensor loc0 = before.loc->value;

  for (std::int64_t j = 0; j < head.shared_fc1.weight->value.c(); ++j)
    head.shared_fc1.weight->value.at(0, j, 0, 0) += 0.3;
  const HeadOut after = head.forward(roi);

  CHECK(max_abs_diff(after.cls->value, cls0) > 1e-6);
  CHECK(max_abs_diff(after.theta->value, theta0) > 1e-8);
  // The localization branch never reads the shared trunk.
  CHECK(max_abs_diff(after.loc->value, loc0) == 0.0);
}

TEST_CASE("a separate theta stack is independent of the classifier") {
  const StripHeadConfig cfg = small_config(HeadLayout::kStripLocSeparateTheta);
  StripHead head = make_strip_head(cfg);
  const ag::Var roi = ag::constant(random_roi(2, cfg, 22));

  const HeadOut before = head.forward(roi);
  for (std::int64_t j = 0; j < head.theta_fc1.weight->value.c(); ++j)
    head.theta_fc1.weight->value.at(0, j, 0, 0) += 0.3;
  const HeadOut after = head.forward(roi);

  CHECK(max_abs_diff(after.theta->value, before.theta->value) > 1e-8);
  CHECK(max_abs_diff(after.cls->value, before.cls->value) == 0.0);
}

TEST_CASE("shared FC gradients are the sum of the branch-isolated gradients") {
  const StripHeadConfig cfg = small_config(HeadLayout::kStripLocSharedTheta);
  StripHead head = make_strip_head(cfg);
  const ag::Var roi = ag::constant(random_roi(3, cfg, 31));
  const auto params = head.params();
  const std::vector<std::string> shared = {"shared_fc1.weight", "shared_fc1.bias",
                                           "shared_fc2.weight", "shared_fc2.bias"};
  auto grab = [&](int which) {
    ag::zero_grads(params);
    const HeadOut out = head.forward(roi);
    ag::Var loss = which == 0   ? ag::mean_all(out.cls)
                   : which == 1 ? ag::mean_all(out.theta)
                                : ag::add(ag::mean_all(out.cls), ag::mean_all(out.theta));
    ag::backward(loss);
    std::vector<Tensor> grads;
    for (const auto& p : params)
      for (const auto& name : shared)
        if (p.name == name) {
          p.var->ensure_grad();
          grads.push_back(p.var->grad);
        }
    REQUIRE(grads.size() == shared.size());
    return grads;
  };

  const auto g_cls = grab(0);
  const auto g_theta = grab(1);
  const auto g_joint = grab(2);
  for (std::size_t i = 0; i < g_joint.size(); ++i) {
    double worst = 0.0;
    for (std::size_t e = 0; e < g_joint[i].data.size(); ++e)
      worst = std::max(worst,
                       std::abs(g_joint[i].data[e] - (g_cls[i].data[e] + g_theta[i].data[e])));
    CHECK(worst < 1e-10);
  }
}

TEST_CASE("zero upstream gradient produces zero parameter gradients") {
  const StripHeadConfig cfg = small_config(HeadLayout::kStripLocSharedTheta);
  StripHead head = make_strip_head(cfg);
  const auto params = head.params();
  ag::zero_grads(params);
  const HeadOut out = head.forward(ag::constant(random_roi(2, cfg, 33)));
  ag::Var loss = ag::scale(ag::add(ag::mean_all(out.cls),
                                   ag::add(ag::mean_all(out.loc), ag::mean_all(out.theta))),
                           0.0);
  ag::backward(loss);
  for (const auto& p : params) {
    p.var->ensure_grad();
    CHECK(max_abs(p.var->grad) == 0.0);
  }
}

TEST_CASE("default layout reduces to the joint-fc baseline under identity kernels") {
  StripHeadConfig base = small_config(HeadLayout::kJointFc);
  const StripHead joint = make_strip_head(base);

  StripHeadConfig dcfg = small_config(HeadLayout::kStripLocSharedTheta);
  dcfg.init_seed = 99;  // deliberately different; weights are copied below
  StripHead def = make_strip_head(dcfg);
  copy_linear(joint.shared_fc1, def.shared_fc1);
  copy_linear(joint.shared_fc2, def.shared_fc2);
  copy_linear(joint.cls_fc, def.cls_fc);
  copy_linear(joint.angle_fc, def.angle_fc);
  copy_linear(joint.loc_fc, def.loc_fc);
  set_conv_identity(def.loc_conv1);
  set_strip_identity(def.loc_strip);

  const ag::Var roi = ag::constant(random_roi(3, base, 44));
  const HeadOut a = joint.forward(roi);
  const HeadOut b = def.forward(roi);
  CHECK(max_abs_diff(a.cls->value, b.cls->value) < 1e-9);
  CHECK(max_abs_diff(a.loc->value, b.loc->value) < 1e-9);
  CHECK(max_abs_diff(a.theta->value, b.theta->value) < 1e-9);
}

TEST_CASE("strip localization features see the whole grid, conv-conv only 5x5") {
  // Gradient support of the center cell of the pre-FC localization map.
  auto support = [](HeadLayout layout) {
    const StripHeadConfig cfg = small_config(layout);
    const StripHead head = make_strip_head(cfg);
    ag::Var roi = ag::leaf(random_roi(1, cfg, 55), true, "roi");
    ag::Var feat = head.loc_features(roi);
    Tensor pick(feat->value.n(), feat->value.c(), feat->value.h(), feat->value.w());
    pick.at(0, 0, cfg.grid / 2, cfg.grid / 2) = 1.0;
    roi->zero_grad();
    ag::backward(ag::dot(feat, pick));
    roi->ensure_grad();
    // A spatial cell is in the support if any input channel's gradient there
    // is nonzero.
    std::vector<std::vector<bool>> mask(static_cast<std::size_t>(cfg.grid),
                                        std::vector<bool>(static_cast<std::size_t>(cfg.grid)));
    for (int y = 0; y < cfg.grid; ++y)
      for (int x = 0; x < cfg.grid; ++x) {
        bool on = false;
        for (int c = 0; c < cfg.channels; ++c)
          on = on || roi->grad.at(0, c, y, x) != 0.0;
        mask[static_cast<std::size_t>(y)][static_cast<std::size_t>(x)] = on;
      }
    return mask;
  };

  const auto strip_mask = support(HeadLayout::kStripLocSharedTheta);
  for (int y = 0; y < 7; ++y)
    for (int x = 0; x < 7; ++x) {
      INFO("strip cell " << y << "," << x);
      CHECK(strip_mask[static_cast<std::size_t>(y)][static_cast<std::size_t>(x)]);
    }

  const auto conv_mask = support(HeadLayout::kPerBranchConv);
  for (int y = 0; y < 7; ++y)
    for (int x = 0; x < 7; ++x) {
      const bool inside = std::abs(y - 3) <= 2 && std::abs(x - 3) <= 2;
      INFO("conv cell " << y << "," << x);
      CHECK(conv_mask[static_cast<std::size_t>(y)][static_cast<std::size_t>(x)] == inside);
    }
}

TEST_CASE("full head gradcheck stays under 1e-4") {
  for (HeadLayout l : {HeadLayout::kStripLocSharedTheta, HeadLayout::kStripXY,
                       HeadLayout::kStripLocStripTheta}) {
    INFO(head_layout_name(l));
    StripHeadConfig cfg = small_config(l);
    cfg.channels = 3;
    cfg.fc_dim = 8;
    const StripHead head = make_strip_head(cfg);
    // At the fresh-init scale the second FC's pre-activations sit within the
    // finite-difference step of the ReLU kink, which corrupts the numerical
    // derivative. Scaling the point away from the kinks keeps the check
    // meaningful; this input leaves every pre-activation at least 0.03 from
    // zero, thirty times the step.
    for (const auto& p : head.params())
      for (double& v : p.var->value.data) v *= 10.0;
    const Tensor roi = random_roi(2, cfg, 60);
    const std::vector<int> labels = {1, 3};
    const Tensor loc_t = oracle::random_tensor(2, 4, 1, 1, 1060);
    const Tensor theta_t = oracle::random_tensor(2, 1, 1, 1, 2060);

    auto build = [&]() {
      return detection_loss(head.forward(ag::constant(roi)), labels, loc_t, theta_t).total;
    };
    const GradCheckReport rep = gradcheck(build, head.params(), 1e-3, 3);
    INFO("worst " << (rep.worst() ? rep.worst()->name : "none") << " " << rep.max_rel_err);
    CHECK(rep.pass(1e-4));
  }
}

TEST_CASE("detection loss components behave at the fixtures") {
  // Matching predictions zero the box and angle terms.
  Tensor logits(2, 16, 1, 1);
  const std::vector<int> labels = {0, 5};
  Tensor loc_t = oracle::random_tensor(2, 4, 1, 1, 70);
  Tensor theta_t = oracle::random_tensor(2, 1, 1, 1, 71);
  HeadOut out;
  out.cls = ag::constant(logits);
  out.loc = ag::constant(loc_t);
  out.theta = ag::constant(theta_t);
  const DetectionLoss l = detection_loss(out, labels, loc_t, theta_t);
  CHECK(l.loc->value.data[0] == 0.0);
  CHECK(l.angle->value.data[0] == 0.0);
  // Uniform logits over 16 classes: cross-entropy is ln 16.
  CHECK(l.cls->value.data[0] == Catch::Approx(std::log(16.0)).margin(1e-12));
  CHECK(l.total->value.data[0] == Catch::Approx(std::log(16.0)).margin(1e-12));

  // Weights scale each term.
  Tensor loc_off = loc_t;
  for (double& v : loc_off.data) v += 1.0;
  out.loc = ag::constant(loc_off);
  const DetectionLoss w = detection_loss(out, labels, loc_t, theta_t, 1.0, 2.0, 1.0);
  const DetectionLoss u = detection_loss(out, labels, loc_t, theta_t);
  CHECK(w.total->value.data[0] ==
        Catch::Approx(u.cls->value.data[0] + 2.0 * u.loc->value.data[0]).margin(1e-12));

  // Non-finite targets are rejected.
  Tensor bad = loc_t;
  bad.data[0] = std::numeric_limits<double>::quiet_NaN();
  CHECK_THROWS_AS(detection_loss(out, labels, bad, theta_t), std::invalid_argument);
}

TEST_CASE("smooth L1 is continuous and C1 at the beta boundary") {
  const double beta = kHeadLocBeta;
  const double eps = 1e-12;
  CHECK(std::abs(ag::smooth_l1_scalar(beta - eps, beta) - ag::smooth_l1_scalar(beta + eps, beta)) <
        1e-11);
  CHECK(std::abs(ag::smooth_l1_grad_scalar(beta - eps, beta) -
                 ag::smooth_l1_grad_scalar(beta + eps, beta)) < 1e-9);
  CHECK(ag::smooth_l1_scalar(beta, beta) == Catch::Approx(beta / 2.0).margin(1e-15));
}

TEST_CASE("checkpoints restore a head bit for bit") {
  const StripHeadConfig cfg = small_config(HeadLayout::kStripLocSharedTheta);
  const StripHead trained = make_strip_head(cfg);
  const ag::Var roi = ag::constant(random_roi(2, cfg, 88));
  const HeadOut want = trained.forward(roi);

  const std::string dir =
      (std::filesystem::temp_directory_path() / "stripnet_head_ck_test").string();
  std::filesystem::remove_all(dir);
  nlohmann::json meta;
  meta["layout"] = head_layout_name(cfg.layout);
  save_checkpoint(dir, trained.params(), meta);

  StripHeadConfig other = cfg;
  other.init_seed = 1234;
  StripHead restored = make_strip_head(other);
  const Checkpoint ck = load_checkpoint(dir);
  CHECK(ck.meta["layout"] == "strip-loc-shared-theta");
  load_checkpoint_into(dir, restored.params());

  const HeadOut got = restored.forward(roi);
  CHECK(max_abs_diff(got.cls->value, want.cls->value) == 0.0);
  CHECK(max_abs_diff(got.loc->value, want.loc->value) == 0.0);
  CHECK(max_abs_diff(got.theta->value, want.theta->value) == 0.0);

  // Restoring into a different layout fails loudly.
  StripHead wrong = make_strip_head(small_config(HeadLayout::kPerBranchConv));
  CHECK_THROWS_AS(load_checkpoint_into(dir, wrong.params()), std::runtime_error);
  std::filesystem::remove_all(dir);
}

TEST_CASE("tensor files reject corrupt payloads") {
  const Tensor t = oracle::random_tensor(2, 3, 4, 5, 90);
  const std::string buf = encode_tensor(t);
  const Tensor back = decode_tensor(buf);
  CHECK(max_abs_diff(t, back) == 0.0);

  std::string bad_magic = buf;
  bad_magic[0] = 'X';
  CHECK_THROWS_AS(decode_tensor(bad_magic), std::runtime_error);

  std::string truncated = buf.substr(0, buf.size() - 1);
  CHECK_THROWS_AS(decode_tensor(truncated), std::runtime_error);

  std::string bad_version = buf;
  bad_version[4] = 9;
  CHECK_THROWS_AS(decode_tensor(bad_version), std::runtime_error);
}
