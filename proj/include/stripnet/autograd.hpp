#pragma once

#include <functional>
#include <memory>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <utility>
#include <vector>

#include "stripnet/ops.hpp"
#include "stripnet/tensor.hpp"

namespace stripnet::ag {

// Define-by-run reverse-mode tape. Nodes record the op adjoint as a closure;
// replaying them in reverse topological order accumulates leaf gradients.
struct Node;
using Var = std::shared_ptr<Node>;

struct Node {
  Tensor value;
  Tensor grad;
  bool requires_grad = false;
  bool is_leaf = false;
  std::string name;
  std::vector<Var> parents;
  std::function<void(Node&)> backprop;

  void ensure_grad() {
    if (!grad.same_shape(value)) grad = Tensor(value.n(), value.c(), value.h(), value.w());
  }
  void zero_grad() {
    grad = Tensor(value.n(), value.c(), value.h(), value.w());
  }
};

inline Var leaf(Tensor v, bool requires_grad, std::string name = {}) {
  auto n = std::make_shared<Node>();
  n->value = std::move(v);
  n->requires_grad = requires_grad;
  n->is_leaf = true;
  n->name = std::move(name);
  return n;
}

inline Var constant(Tensor v) { return leaf(std::move(v), false); }

namespace detail {
inline bool any_requires(const std::vector<Var>& ps) {
  for (const auto& p : ps)
    if (p->requires_grad) return true;
  return false;
}

inline Var make_op(Tensor value, std::vector<Var> parents, std::function<void(Node&)> backprop) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  n->parents = std::move(parents);
  n->requires_grad = any_requires(n->parents);
  if (n->requires_grad) n->backprop = std::move(backprop);
  return n;
}

inline void accumulate(const Var& p, const Tensor& g) {
  if (!p->requires_grad) return;
  p->ensure_grad();
  for (std::int64_t i = 0; i < g.numel(); ++i)
    p->grad.data[static_cast<std::size_t>(i)] += g.data[static_cast<std::size_t>(i)];
}
}  // namespace detail

inline Var conv2d(const Var& x, const Var& kernel, const Var& bias, const ConvSpec& spec) {
  Tensor y = conv2d_forward(x->value, kernel->value, bias->value, spec);
  return detail::make_op(std::move(y), {x, kernel, bias}, [spec](Node& self) {
    const Var& x_ = self.parents[0];
    const Var& k_ = self.parents[1];
    const Var& b_ = self.parents[2];
    ConvGrads g = conv2d_backward(self.grad, x_->value, k_->value, spec);
    detail::accumulate(x_, g.grad_input);
    detail::accumulate(k_, g.grad_kernel);
    detail::accumulate(b_, g.grad_bias);
  });
}

inline Var linear(const Var& x, const Var& weight, const Var& bias) {
  Tensor y = linear_forward(x->value, weight->value, bias->value);
  return detail::make_op(std::move(y), {x, weight, bias}, [](Node& self) {
    const Var& x_ = self.parents[0];
    const Var& w_ = self.parents[1];
    const Var& b_ = self.parents[2];
    LinearGrads g = linear_backward(self.grad, x_->value, w_->value);
    detail::accumulate(x_, g.grad_input);
    detail::accumulate(w_, g.grad_weight);
    detail::accumulate(b_, g.grad_bias);
  });
}

inline Var relu(const Var& x) {
  return detail::make_op(relu_forward(x->value), {x}, [](Node& self) {
    detail::accumulate(self.parents[0], relu_backward(self.grad, self.parents[0]->value));
  });
}

// The Gaussian CDF from the forward pass is kept for the backward sweep so
// the gradient needs one exp per element instead of erf + exp. Same
// arithmetic as gelu_grad_scalar, tap for tap.
inline Var gelu(const Var& x) {
  const Tensor& xv = x->value;
  auto phi = std::make_shared<Tensor>(xv.n(), xv.c(), xv.h(), xv.w());
  Tensor y(xv.n(), xv.c(), xv.h(), xv.w());
  for (std::int64_t i = 0; i < xv.numel(); ++i) {
    const auto idx = static_cast<std::size_t>(i);
    const double v = xv.data[idx];
    const double e = std::erf(v / std::sqrt(2.0));
    phi->data[idx] = 0.5 * (1.0 + e);
    y.data[idx] = 0.5 * v * (1.0 + e);
  }
  return detail::make_op(std::move(y), {x}, [phi](Node& self) {
    const Tensor& xv_ = self.parents[0]->value;
    Tensor g = self.grad;
    for (std::int64_t i = 0; i < xv_.numel(); ++i) {
      const auto idx = static_cast<std::size_t>(i);
      const double xd = xv_.data[idx];
      const double pdf = std::exp(-0.5 * xd * xd) / std::sqrt(2.0 * 3.14159265358979323846);
      g.data[idx] *= phi->data[idx] + xd * pdf;
    }
    detail::accumulate(self.parents[0], g);
  });
}

inline Var add(const Var& a, const Var& b) {
  return detail::make_op(add_forward(a->value, b->value), {a, b}, [](Node& self) {
    detail::accumulate(self.parents[0], self.grad);
    detail::accumulate(self.parents[1], self.grad);
  });
}

inline Var mul(const Var& a, const Var& b) {
  return detail::make_op(mul_forward(a->value, b->value), {a, b}, [](Node& self) {
    detail::accumulate(self.parents[0], mul_forward(self.grad, self.parents[1]->value));
    detail::accumulate(self.parents[1], mul_forward(self.grad, self.parents[0]->value));
  });
}

// mode kBatchStats standardizes with batch statistics (reported via batch_out
// for running-average upkeep); kFrozen uses the supplied stats.
inline Var norm_channels(const Var& x, const Var& scale, const Var& shift, NormMode mode,
                         const NormStats& frozen, NormStats* batch_out, double eps = kNormEps) {
  NormStats batch;
  Tensor y = normalize_channels_forward(x->value, scale->value, shift->value, mode, frozen, &batch, eps);
  if (mode == NormMode::kBatchStats && batch_out) *batch_out = batch;
  NormStats used = (mode == NormMode::kBatchStats) ? batch : frozen;
  return detail::make_op(std::move(y), {x, scale, shift}, [mode, used, eps](Node& self) {
    NormGrads g = normalize_channels_backward(self.grad, self.parents[0]->value,
                                              self.parents[1]->value, mode, used, eps);
    detail::accumulate(self.parents[0], g.grad_input);
    detail::accumulate(self.parents[1], g.grad_scale);
    detail::accumulate(self.parents[2], g.grad_shift);
  });
}

inline Var reshape(const Var& x, std::int64_t n, std::int64_t c, std::int64_t h, std::int64_t w) {
  Tensor y = x->value.reshaped(n, c, h, w);
  return detail::make_op(std::move(y), {x}, [](Node& self) {
    const Var& x_ = self.parents[0];
    Tensor g = self.grad.reshaped(x_->value.n(), x_->value.c(), x_->value.h(), x_->value.w());
    detail::accumulate(x_, g);
  });
}

inline Var flatten(const Var& x) { return reshape(x, x->value.n(), x->value.numel() / std::max<std::int64_t>(x->value.n(), 1), 1, 1); }

inline Var global_avg_pool(const Var& x) {
  const std::int64_t n = x->value.n(), c = x->value.c(), h = x->value.h(), w = x->value.w();
  Tensor y(n, c, 1, 1);
  const double inv = 1.0 / static_cast<double>(h * w);
  for (std::int64_t ni = 0; ni < n; ++ni)
    for (std::int64_t ci = 0; ci < c; ++ci) {
      double acc = 0.0;
      for (std::int64_t yi = 0; yi < h; ++yi)
        for (std::int64_t xi = 0; xi < w; ++xi) acc += x->value.at(ni, ci, yi, xi);
      y.at(ni, ci, 0, 0) = acc * inv;
    }
  return detail::make_op(std::move(y), {x}, [](Node& self) {
    const Var& x_ = self.parents[0];
    const std::int64_t n = x_->value.n(), c = x_->value.c(), h = x_->value.h(), w = x_->value.w();
    const double inv = 1.0 / static_cast<double>(h * w);
    Tensor g(n, c, h, w);
    for (std::int64_t ni = 0; ni < n; ++ni)
      for (std::int64_t ci = 0; ci < c; ++ci) {
        const double gv = self.grad.at(ni, ci, 0, 0) * inv;
        for (std::int64_t yi = 0; yi < h; ++yi)
          for (std::int64_t xi = 0; xi < w; ++xi) g.at(ni, ci, yi, xi) = gv;
      }
    detail::accumulate(x_, g);
  });
}

// Channel concatenation; inputs agree on N, H, W. Gradient splits back.
inline Var concat_channels(const Var& a, const Var& b) {
  const Tensor& av = a->value;
  const Tensor& bv = b->value;
  if (av.n() != bv.n() || av.h() != bv.h() || av.w() != bv.w())
    throw std::invalid_argument("concat_channels: shape mismatch");
  const std::int64_t plane = av.h() * av.w();
  const std::int64_t ac = av.c() * plane, bc = bv.c() * plane;
  Tensor y(av.n(), av.c() + bv.c(), av.h(), av.w());
  for (std::int64_t ni = 0; ni < av.n(); ++ni) {
    std::copy_n(av.data.data() + ni * ac, ac, y.data.data() + ni * (ac + bc));
    std::copy_n(bv.data.data() + ni * bc, bc, y.data.data() + ni * (ac + bc) + ac);
  }
  return detail::make_op(std::move(y), {a, b}, [ac, bc](Node& self) {
    const Var& a_ = self.parents[0];
    const Var& b_ = self.parents[1];
    Tensor ga(a_->value.n(), a_->value.c(), a_->value.h(), a_->value.w());
    Tensor gb(b_->value.n(), b_->value.c(), b_->value.h(), b_->value.w());
    for (std::int64_t ni = 0; ni < ga.n(); ++ni) {
      std::copy_n(self.grad.data.data() + ni * (ac + bc), ac, ga.data.data() + ni * ac);
      std::copy_n(self.grad.data.data() + ni * (ac + bc) + ac, bc, gb.data.data() + ni * bc);
    }
    detail::accumulate(a_, ga);
    detail::accumulate(b_, gb);
  });
}

inline Var sum_all(const Var& x) {
  Tensor y(1, 1, 1, 1);
  double acc = 0.0;
  for (double v : x->value.data) acc += v;
  y.data[0] = acc;
  return detail::make_op(std::move(y), {x}, [](Node& self) {
    const Var& x_ = self.parents[0];
    Tensor g(x_->value.n(), x_->value.c(), x_->value.h(), x_->value.w());
    g.fill(self.grad.data[0]);
    detail::accumulate(x_, g);
  });
}

inline Var scale(const Var& x, double k) {
  Tensor y = x->value;
  for (double& v : y.data) v *= k;
  return detail::make_op(std::move(y), {x}, [k](Node& self) {
    Tensor g = self.grad;
    for (double& v : g.data) v *= k;
    detail::accumulate(self.parents[0], g);
  });
}

inline Var mean_all(const Var& x) { return scale(sum_all(x), 1.0 / static_cast<double>(x->value.numel())); }

// sum(x * w) with constant weights; used to seed arbitrary upstream gradients.
inline Var dot(const Var& x, const Tensor& w) {
  if (!x->value.same_shape(w)) throw std::invalid_argument("dot: shape mismatch");
  Tensor y(1, 1, 1, 1);
  y.data[0] = dot_all(x->value, w);
  return detail::make_op(std::move(y), {x}, [w](Node& self) {
    Tensor g = w;
    for (double& v : g.data) v *= self.grad.data[0];
    detail::accumulate(self.parents[0], g);
  });
}

// Mean over rows of softmax cross-entropy. logits: (N, K, 1, 1).
inline Var softmax_cross_entropy(const Var& logits, const std::vector<int>& labels) {
  const std::int64_t n = logits->value.n(), k = logits->value.c();
  if (static_cast<std::int64_t>(labels.size()) != n)
    throw std::invalid_argument("softmax_cross_entropy: label count mismatch");
  Tensor probs(n, k, 1, 1);
  double loss = 0.0;
  for (std::int64_t ni = 0; ni < n; ++ni) {
    const int lab = labels[static_cast<std::size_t>(ni)];
    if (lab < 0 || lab >= k) throw std::invalid_argument("softmax_cross_entropy: label out of range");
    double mx = logits->value.at(ni, 0, 0, 0);
    for (std::int64_t ki = 1; ki < k; ++ki) mx = std::max(mx, logits->value.at(ni, ki, 0, 0));
    double z = 0.0;
    for (std::int64_t ki = 0; ki < k; ++ki) z += std::exp(logits->value.at(ni, ki, 0, 0) - mx);
    const double logz = std::log(z) + mx;
    for (std::int64_t ki = 0; ki < k; ++ki)
      probs.at(ni, ki, 0, 0) = std::exp(logits->value.at(ni, ki, 0, 0) - logz);
    loss += logz - logits->value.at(ni, lab, 0, 0);
  }
  Tensor y(1, 1, 1, 1);
  y.data[0] = loss / static_cast<double>(n);
  return detail::make_op(std::move(y), {logits}, [probs, labels](Node& self) {
    const Var& l_ = self.parents[0];
    const std::int64_t n = l_->value.n(), k = l_->value.c();
    Tensor g(n, k, 1, 1);
    const double up = self.grad.data[0] / static_cast<double>(n);
    for (std::int64_t ni = 0; ni < n; ++ni)
      for (std::int64_t ki = 0; ki < k; ++ki) {
        double v = probs.at(ni, ki, 0, 0);
        if (ki == labels[static_cast<std::size_t>(ni)]) v -= 1.0;
        g.at(ni, ki, 0, 0) = v * up;
      }
    detail::accumulate(l_, g);
  });
}

inline double smooth_l1_scalar(double d, double beta) {
  const double a = std::fabs(d);
  return a < beta ? 0.5 * d * d / beta : a - 0.5 * beta;
}

inline double smooth_l1_grad_scalar(double d, double beta) {
  const double a = std::fabs(d);
  if (a < beta) return d / beta;
  return d > 0.0 ? 1.0 : -1.0;
}

// Sum over coordinates, mean over rows (dim 0). target is constant.
inline Var smooth_l1(const Var& pred, const Tensor& target, double beta) {
  if (!pred->value.same_shape(target)) throw std::invalid_argument("smooth_l1: shape mismatch");
  const std::int64_t n = std::max<std::int64_t>(pred->value.n(), 1);
  Tensor y(1, 1, 1, 1);
  double acc = 0.0;
  for (std::int64_t i = 0; i < pred->value.numel(); ++i)
    acc += smooth_l1_scalar(pred->value.data[static_cast<std::size_t>(i)] -
                                target.data[static_cast<std::size_t>(i)],
                            beta);
  y.data[0] = acc / static_cast<double>(n);
  return detail::make_op(std::move(y), {pred}, [target, beta, n](Node& self) {
    const Var& p_ = self.parents[0];
    Tensor g(p_->value.n(), p_->value.c(), p_->value.h(), p_->value.w());
    const double up = self.grad.data[0] / static_cast<double>(n);
    for (std::int64_t i = 0; i < g.numel(); ++i)
      g.data[static_cast<std::size_t>(i)] =
          up * smooth_l1_grad_scalar(p_->value.data[static_cast<std::size_t>(i)] -
                                         target.data[static_cast<std::size_t>(i)],
                                     beta);
    detail::accumulate(p_, g);
  });
}

namespace detail {
inline void topo_visit(const Var& v, std::unordered_set<Node*>& seen, std::vector<Var>& order) {
  if (seen.count(v.get())) return;
  seen.insert(v.get());
  for (const auto& p : v->parents) topo_visit(p, seen, order);
  order.push_back(v);
}
}  // namespace detail

// Reverse-mode sweep from a scalar root; leaf gradients accumulate (+=), so
// callers zero leaf grads between unrelated passes.
inline void backward(const Var& root) {
  if (root->value.numel() != 1) throw std::invalid_argument("backward: root must be scalar");
  std::unordered_set<Node*> seen;
  std::vector<Var> order;
  detail::topo_visit(root, seen, order);
  for (const auto& v : order)
    if (!v->is_leaf && v->requires_grad) v->zero_grad();
  root->ensure_grad();
  root->grad.data[0] = 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node& node = **it;
    if (!node.is_leaf && node.requires_grad && node.backprop) {
      node.ensure_grad();
      node.backprop(node);
    }
  }
}

struct NamedParam {
  std::string name;
  Var var;
};

inline void zero_grads(const std::vector<NamedParam>& params) {
  for (const auto& p : params) p.var->zero_grad();
}

// Classic momentum SGD: v = mu*v + g; p -= lr*v.
struct Sgd {
  double lr = 0.01;
  double momentum = 0.9;
  std::unordered_map<Node*, Tensor> velocity;

  void step(const std::vector<NamedParam>& params) {
    for (const auto& p : params) {
      Node& node = *p.var;
      node.ensure_grad();
      auto [it, inserted] = velocity.try_emplace(
          &node, Tensor(node.value.n(), node.value.c(), node.value.h(), node.value.w()));
      Tensor& vel = it->second;
      for (std::int64_t i = 0; i < node.value.numel(); ++i) {
        const auto idx = static_cast<std::size_t>(i);
        vel.data[idx] = momentum * vel.data[idx] + node.grad.data[idx];
        node.value.data[idx] -= lr * vel.data[idx];
      }
    }
  }
};

}  // namespace stripnet::ag
