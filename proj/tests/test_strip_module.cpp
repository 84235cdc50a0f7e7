#include <cmath>
#include <random>

#include <catch_amalgamated.hpp>

#include "oracles.hpp"
#include "stripnet/gradcheck.hpp"
#include "stripnet/strip_module.hpp"

using namespace stripnet;

namespace {

StripModuleParams make_module(int channels, int k, ModuleDesign design, std::uint64_t seed = 7,
                              bool row_first = true) {
  StripModuleConfig cfg;
  cfg.channels = channels;
  cfg.k = k;
  cfg.design = design;
  cfg.row_first = row_first;
  std::mt19937_64 rng(seed);
  return init_strip_module(cfg, rng);
}

// Delta depthwise kernels and an identity pointwise turn the attention
// pipeline into a passthrough.
void set_identity(StripModuleParams& p) {
  auto delta = [](const ag::Var& v) {
    if (!v) return;
    v->value.fill(0.0);
    const std::int64_t cy = v->value.h() / 2, cx = v->value.w() / 2;
    for (std::int64_t c = 0; c < v->value.n(); ++c) v->value.at(c, 0, cy, cx) = 1.0;
  };
  delta(p.square_k);
  delta(p.big_k);
  delta(p.h_k);
  delta(p.v_k);
  p.pw_k->value.fill(0.0);
  for (std::int64_t c = 0; c < p.pw_k->value.n(); ++c) p.pw_k->value.at(c, c, 0, 0) = 1.0;
  for (const auto& b : {p.square_b, p.big_b, p.h_b, p.v_b, p.pw_b})
    if (b) b->value.fill(0.0);
}

}  // namespace

TEST_CASE("parameter counts match the constructed leaves for every design", "[strip][params]") {
  for (ModuleDesign d : {ModuleDesign::kSequential, ModuleDesign::kParallel, ModuleDesign::kSquareBig,
                         ModuleDesign::kDilatedSquare, ModuleDesign::kNoSquare,
                         ModuleDesign::kSingleSquare}) {
    StripModuleConfig cfg;
    cfg.channels = 12;
    cfg.k = 7;
    cfg.design = d;
    std::mt19937_64 rng(3);
    StripModuleParams p = init_strip_module(cfg, rng);
    INFO(design_name(d));
    CHECK(p.param_count() == strip_module_param_count(cfg));
  }
}

TEST_CASE("default module at 64 channels, strip length 19", "[strip][params]") {
  StripModuleConfig cfg;
  cfg.channels = 64;
  cfg.k = 19;
  // weights: 64*25 (square) + 2*64*19 (strips) + 64*64 (pointwise) = 8128
  // biases: 4 * 64 = 256
  CHECK(strip_module_param_count(cfg) == 8128 + 256);

  std::mt19937_64 rng(11);
  StripModuleParams p = init_strip_module(cfg, rng);
  std::int64_t weights = 0, biases = 0;
  for (const auto& np : p.params("")) {
    if (np.name.find("bias") != std::string::npos)
      biases += np.var->value.numel();
    else
      weights += np.var->value.numel();
  }
  CHECK(weights == 8128);
  CHECK(biases == 256);
}

TEST_CASE("strip pipeline and a matched plain square have equal budgets", "[strip][params]") {
  // 25C + 11C + 11C + 3C == 49C + C at every width.
  for (int c : {8, 64, 160}) {
    StripModuleConfig seq;
    seq.channels = c;
    seq.k = 11;
    seq.design = ModuleDesign::kSequential;
    StripModuleConfig sq;
    sq.channels = c;
    sq.design = ModuleDesign::kSingleSquare;
    sq.single_side = 7;
    CHECK(strip_module_param_count(seq) == strip_module_param_count(sq));
  }
}

TEST_CASE("zero input is absorbed exactly", "[strip][forward]") {
  for (ModuleDesign d : {ModuleDesign::kSequential, ModuleDesign::kParallel, ModuleDesign::kNoSquare,
                         ModuleDesign::kSingleSquare}) {
    StripModuleParams p = make_module(4, 5, d);
    ag::Var x = ag::constant(Tensor::zeros(2, 4, 9, 9));
    ag::Var y = strip_module_forward(p, x);
    INFO(design_name(d));
    CHECK(max_abs(y->value) == 0.0);
  }
}

TEST_CASE("identity kernels square the input elementwise", "[strip][forward]") {
  StripModuleParams p = make_module(3, 5, ModuleDesign::kSequential);
  set_identity(p);
  Tensor xin = oracle::random_tensor(2, 3, 8, 8, 21);
  ag::Var x = ag::constant(xin);

  Tensor want = xin;
  for (auto& v : want.data) v *= v;

  ag::Var y = strip_module_forward(p, x);
  CHECK(max_abs_diff(y->value, want) <= 1e-12);

  ag::Var attn = strip_module_attention(p, x);
  CHECK(max_abs_diff(attn->value, xin) <= 1e-12);
}

TEST_CASE("strip order does not change the attention map", "[strip][forward]") {
  StripModuleParams p = make_module(4, 7, ModuleDesign::kSequential, 31, true);
  StripModuleParams q = p;  // same leaves
  q.cfg.row_first = false;

  ag::Var x = ag::constant(oracle::random_tensor(1, 4, 12, 12, 5));
  ag::Var a = strip_module_attention(p, x);
  ag::Var b = strip_module_attention(q, x);
  CHECK(max_abs_diff(a->value, b->value) <= 1e-9);
}

TEST_CASE("every design runs forward with the input shape preserved", "[strip][forward]") {
  for (ModuleDesign d : {ModuleDesign::kSequential, ModuleDesign::kParallel, ModuleDesign::kSquareBig,
                         ModuleDesign::kDilatedSquare, ModuleDesign::kNoSquare,
                         ModuleDesign::kSingleSquare}) {
    StripModuleConfig cfg;
    cfg.channels = 3;
    cfg.k = 5;
    cfg.big_side = 7;
    cfg.design = d;
    std::mt19937_64 rng(9);
    StripModuleParams p = init_strip_module(cfg, rng);
    ag::Var x = ag::constant(oracle::random_tensor(2, 3, 25, 25, 40 + static_cast<int>(d)));
    ag::Var y = strip_module_forward(p, x);
    INFO(design_name(d));
    CHECK(y->value.same_shape(x->value));
    CHECK(all_finite(y->value));
  }
}

TEST_CASE("module gradients agree with central differences", "[strip][grad]") {
  StripModuleConfig cfg;
  cfg.channels = 2;
  cfg.k = 3;
  cfg.design = ModuleDesign::kSequential;
  std::mt19937_64 rng(17);
  StripModuleParams p = init_strip_module(cfg, rng);
  // Nonzero biases so their gradients are exercised away from the init point.
  p.square_b->value.fill(0.03);
  p.h_b->value.fill(-0.02);
  p.v_b->value.fill(0.01);
  p.pw_b->value.fill(0.02);

  ag::Var x = ag::leaf(oracle::random_tensor(1, 2, 7, 7, 3), true, "x");
  Tensor seed = oracle::random_tensor(1, 2, 7, 7, 4);

  std::vector<ag::NamedParam> leaves = p.params("strip.");
  leaves.push_back({"x", x});
  GradCheckReport rep = gradcheck([&] { return ag::dot(strip_module_forward(p, x), seed); }, leaves);
  INFO(rep.worst()->name << " " << rep.max_rel_err);
  CHECK(rep.pass(1e-4));
}

TEST_CASE("parallel design gradients agree with central differences", "[strip][grad]") {
  StripModuleConfig cfg;
  cfg.channels = 2;
  cfg.k = 3;
  cfg.design = ModuleDesign::kParallel;
  std::mt19937_64 rng(19);
  StripModuleParams p = init_strip_module(cfg, rng);
  ag::Var x = ag::leaf(oracle::random_tensor(1, 2, 6, 6, 8), true, "x");
  Tensor seed = oracle::random_tensor(1, 2, 6, 6, 9);
  std::vector<ag::NamedParam> leaves = p.params("strip.");
  leaves.push_back({"x", x});
  GradCheckReport rep = gradcheck([&] { return ag::dot(strip_module_forward(p, x), seed); }, leaves);
  CHECK(rep.pass(1e-4));
}

TEST_CASE("attention map is independent of batch entries", "[strip][forward]") {
  // Depthwise and pointwise stages act per sample; batching must not mix them.
  StripModuleParams p = make_module(3, 5, ModuleDesign::kSequential, 23);
  Tensor a = oracle::random_tensor(1, 3, 9, 9, 51);
  Tensor b = oracle::random_tensor(1, 3, 9, 9, 52);
  Tensor both(2, 3, 9, 9);
  for (std::int64_t i = 0; i < a.numel(); ++i) both.data[static_cast<std::size_t>(i)] = a.data[static_cast<std::size_t>(i)];
  for (std::int64_t i = 0; i < b.numel(); ++i)
    both.data[static_cast<std::size_t>(a.numel() + i)] = b.data[static_cast<std::size_t>(i)];

  Tensor ya = strip_module_forward(p, ag::constant(a))->value;
  Tensor yb = strip_module_forward(p, ag::constant(b))->value;
  Tensor yboth = strip_module_forward(p, ag::constant(both))->value;
  for (std::int64_t i = 0; i < ya.numel(); ++i) {
    CHECK(yboth.data[static_cast<std::size_t>(i)] == ya.data[static_cast<std::size_t>(i)]);
    CHECK(yboth.data[static_cast<std::size_t>(ya.numel() + i)] == yb.data[static_cast<std::size_t>(i)]);
  }
}

TEST_CASE("config validation rejects bad strip shapes", "[strip][validate]") {
  StripModuleConfig cfg;
  cfg.k = 4;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  cfg.k = 19;
  cfg.channels = 0;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  cfg.channels = 8;
  cfg.square_side = 4;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
}
