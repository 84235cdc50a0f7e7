#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "stripnet/autograd.hpp"
#include "stripnet/tensor.hpp"

namespace stripnet {

struct GradCheckItem {
  std::string name;
  double max_rel_err = 0.0;
  bool finite = true;
  std::int64_t checked = 0;
};

struct GradCheckReport {
  double max_rel_err = 0.0;
  bool all_finite = true;
  std::vector<GradCheckItem> items;

  bool pass(double tol) const { return all_finite && max_rel_err < tol; }
  const GradCheckItem* worst() const {
    const GradCheckItem* w = nullptr;
    for (const auto& it : items)
      if (!w || it.max_rel_err > w->max_rel_err || (!it.finite && w->finite)) w = &it;
    return w;
  }
};

// Central-difference check of every element of every listed leaf against the
// analytic gradient of the scalar built by `build`. `build` must be a pure
// function of the leaf values. Relative error is
// |analytic - numeric| / max(1, |analytic|, |numeric|).
// stride > 1 checks a deterministic subset (large tensors).
inline GradCheckReport gradcheck(const std::function<ag::Var()>& build,
                                 const std::vector<ag::NamedParam>& leaves, double eps = 1e-3,
                                 std::int64_t stride = 1) {
  if (stride < 1) stride = 1;
  GradCheckReport report;
  for (const auto& leaf : leaves) leaf.var->zero_grad();
  ag::Var root = build();
  if (root->value.numel() != 1) throw std::invalid_argument("gradcheck: loss must be scalar");
  ag::backward(root);

  std::vector<Tensor> analytic;
  analytic.reserve(leaves.size());
  for (const auto& leaf : leaves) {
    leaf.var->ensure_grad();
    analytic.push_back(leaf.var->grad);
  }
  if (!std::isfinite(root->value.data[0])) report.all_finite = false;

  for (std::size_t li = 0; li < leaves.size(); ++li) {
    const auto& leaf = leaves[li];
    GradCheckItem item;
    item.name = leaf.name;
    Tensor& x = leaf.var->value;
    for (std::int64_t i = 0; i < x.numel(); i += stride) {
      const auto idx = static_cast<std::size_t>(i);
      const double a = analytic[li].data[idx];
      if (!std::isfinite(a)) {
        item.finite = false;
        ++item.checked;
        continue;
      }
      const double old = x.data[idx];
      x.data[idx] = old + eps;
      const double fp = build()->value.data[0];
      x.data[idx] = old - eps;
      const double fm = build()->value.data[0];
      x.data[idx] = old;
      if (!std::isfinite(fp) || !std::isfinite(fm)) {
        item.finite = false;
        ++item.checked;
        continue;
      }
      const double numeric = (fp - fm) / (2.0 * eps);
      const double rel = std::fabs(a - numeric) /
                         std::max({1.0, std::fabs(a), std::fabs(numeric)});
      item.max_rel_err = std::max(item.max_rel_err, rel);
      ++item.checked;
    }
    report.max_rel_err = std::max(report.max_rel_err, item.max_rel_err);
    report.all_finite = report.all_finite && item.finite;
    report.items.push_back(std::move(item));
  }
  return report;
}

}  // namespace stripnet
