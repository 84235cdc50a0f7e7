#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <stdexcept>
#include <vector>

#include "stripnet/geometry.hpp"

namespace stripnet {

struct Detection {
  int cls = 0;
  double score = 0.0;
  RBox box;
};

struct GroundTruth {
  int cls = 0;
  RBox box;
  bool difficult = false;
};

// One image's detections and annotations.
struct ImageEval {
  std::vector<Detection> dets;
  std::vector<GroundTruth> gts;
};

// kIgnored marks a detection whose best overlap is an ignored annotation
// (difficult, or outside the slice under evaluation); it counts as neither a
// hit nor a false alarm.
enum class MatchFlag { kTP, kFP, kIgnored };

using IgnorePredicate = std::function<bool(const GroundTruth&)>;

inline IgnorePredicate ignore_difficult() {
  return [](const GroundTruth& g) { return g.difficult; };
}

struct MatchedDetection {
  std::size_t image = 0;
  std::size_t index = 0;  // position within its image's detection list
  double score = 0.0;
  MatchFlag flag = MatchFlag::kFP;
};

struct MatchOutcome {
  std::vector<MatchedDetection> dets;  // global score order, ties by (image, index)
  std::int64_t num_gt = 0;             // countable annotations
};

// Greedy matching in global score order. Every detection is compared against
// the same-class annotations of its own image; the highest overlap wins (ties
// by annotation index). An overlap below the threshold is a false alarm; at
// or above it, the detection is a hit if the annotation is countable and
// still free, ignored if the annotation is ignored (ignored annotations are
// never consumed), and a false alarm if the annotation was already claimed.
inline MatchOutcome match_class(const std::vector<ImageEval>& images, int cls, double iou_thr,
                                const IgnorePredicate& ignore = ignore_difficult()) {
  MatchOutcome out;
  std::vector<std::vector<char>> claimed(images.size());
  for (std::size_t im = 0; im < images.size(); ++im) {
    claimed[im].assign(images[im].gts.size(), 0);
    for (const GroundTruth& g : images[im].gts)
      if (g.cls == cls && !ignore(g)) ++out.num_gt;
    for (std::size_t d = 0; d < images[im].dets.size(); ++d)
      if (images[im].dets[d].cls == cls)
        out.dets.push_back({im, d, images[im].dets[d].score, MatchFlag::kFP});
  }
  std::sort(out.dets.begin(), out.dets.end(), [](const MatchedDetection& a, const MatchedDetection& b) {
    if (a.score != b.score) return a.score > b.score;
    if (a.image != b.image) return a.image < b.image;
    return a.index < b.index;
  });

  for (MatchedDetection& md : out.dets) {
    const ImageEval& img = images[md.image];
    const RBox& dbox = img.dets[md.index].box;
    double best = 0.0;
    std::size_t best_gt = img.gts.size();
    for (std::size_t g = 0; g < img.gts.size(); ++g) {
      if (img.gts[g].cls != cls) continue;
      const double v = iou(dbox, img.gts[g].box);
      if (v > best) {
        best = v;
        best_gt = g;
      }
    }
    if (best_gt == img.gts.size() || best < iou_thr) {
      md.flag = MatchFlag::kFP;
    } else if (ignore(img.gts[best_gt])) {
      md.flag = MatchFlag::kIgnored;
    } else if (!claimed[md.image][best_gt]) {
      claimed[md.image][best_gt] = 1;
      md.flag = MatchFlag::kTP;
    } else {
      md.flag = MatchFlag::kFP;
    }
  }
  return out;
}

struct PrPoint {
  double recall = 0.0;
  double precision = 0.0;
};

// Precision/recall walk over score-ordered flags; ignored entries contribute
// nothing.
inline std::vector<PrPoint> pr_curve(const MatchOutcome& m) {
  std::vector<PrPoint> pts;
  std::int64_t tp = 0, fp = 0;
  for (const MatchedDetection& d : m.dets) {
    if (d.flag == MatchFlag::kIgnored) continue;
    if (d.flag == MatchFlag::kTP) ++tp;
    else ++fp;
    PrPoint p;
    p.precision = static_cast<double>(tp) / static_cast<double>(tp + fp);
    p.recall = m.num_gt > 0 ? static_cast<double>(tp) / static_cast<double>(m.num_gt) : 0.0;
    pts.push_back(p);
  }
  return pts;
}

enum class ApKind { kElevenPoint, kEnvelopeArea };

// kElevenPoint: mean of the best precision at recall >= t for the 11 levels
// t = 0.0, 0.1, ..., 1.0. kEnvelopeArea: area under the right-to-left
// precision envelope of the curve.
inline double average_precision(const std::vector<PrPoint>& curve, std::int64_t num_gt, ApKind kind) {
  if (num_gt <= 0) return std::numeric_limits<double>::quiet_NaN();
  if (curve.empty()) return 0.0;
  if (kind == ApKind::kElevenPoint) {
    double sum = 0.0;
    for (int i = 0; i <= 10; ++i) {
      const double t = static_cast<double>(i) / 10.0;
      double best = 0.0;
      for (const PrPoint& p : curve)
        if (p.recall >= t - 1e-12) best = std::max(best, p.precision);
      sum += best;
    }
    return sum / 11.0;
  }
  // Envelope: precision at recall r is the best precision at any recall >= r.
  std::vector<PrPoint> env = curve;
  for (std::size_t i = env.size() - 1; i-- > 0;)
    env[i].precision = std::max(env[i].precision, env[i + 1].precision);
  double area = 0.0;
  double prev_recall = 0.0;
  for (const PrPoint& p : env) {
    area += (p.recall - prev_recall) * p.precision;
    prev_recall = p.recall;
  }
  return area;
}

struct ClassEval {
  int cls = 0;
  std::int64_t tp = 0, fp = 0, ignored = 0, num_gt = 0;
  double ap07 = std::numeric_limits<double>::quiet_NaN();
  double ap12 = std::numeric_limits<double>::quiet_NaN();
  std::vector<PrPoint> curve;
};

inline ClassEval evaluate_class(const std::vector<ImageEval>& images, int cls, double iou_thr,
                                const IgnorePredicate& ignore = ignore_difficult()) {
  const MatchOutcome m = match_class(images, cls, iou_thr, ignore);
  ClassEval e;
  e.cls = cls;
  e.num_gt = m.num_gt;
  for (const MatchedDetection& d : m.dets) {
    if (d.flag == MatchFlag::kTP) ++e.tp;
    else if (d.flag == MatchFlag::kFP) ++e.fp;
    else ++e.ignored;
  }
  e.curve = pr_curve(m);
  e.ap07 = average_precision(e.curve, e.num_gt, ApKind::kElevenPoint);
  e.ap12 = average_precision(e.curve, e.num_gt, ApKind::kEnvelopeArea);
  return e;
}

// Mean over classes that have at least one countable annotation.
inline double mean_ap(const std::vector<ClassEval>& classes, ApKind kind) {
  double sum = 0.0;
  int n = 0;
  for (const ClassEval& e : classes) {
    if (e.num_gt <= 0) continue;
    sum += (kind == ApKind::kElevenPoint) ? e.ap07 : e.ap12;
    ++n;
  }
  return n > 0 ? sum / n : std::numeric_limits<double>::quiet_NaN();
}

// Aspect-ratio slicing. Side ratio of a canonical box is w/h >= 1; a
// degenerate short side counts as unbounded.
inline double aspect_ratio(const RBox& box) {
  const RBox c = canonical(box);
  if (c.h <= 0.0) return std::numeric_limits<double>::infinity();
  return c.w / c.h;
}

inline const std::vector<double>& default_ar_edges() {
  static const std::vector<double> edges{1.0, 2.0, 3.0, 5.0, 8.0,
                                         std::numeric_limits<double>::infinity()};
  return edges;
}

// Bin index for [edges[i], edges[i+1]), or -1 when outside every bin.
inline int ar_bin(double ar, const std::vector<double>& edges = default_ar_edges()) {
  for (std::size_t i = 0; i + 1 < edges.size(); ++i)
    if (ar >= edges[i] && ar < edges[i + 1]) return static_cast<int>(i);
  return -1;
}

// Shared bin edges cannot overlap or leave gaps by construction; the only
// malformed inputs are too-few or non-increasing edges.
inline void validate_ar_edges(const std::vector<double>& edges) {
  if (edges.size() < 2) throw std::invalid_argument("aspect-ratio bins: need at least one bin");
  for (std::size_t i = 0; i + 1 < edges.size(); ++i)
    if (!(edges[i] < edges[i + 1]))
      throw std::invalid_argument("aspect-ratio bins: edges must be strictly increasing");
}

struct BinRecall {
  double lo = 0.0, hi = 0.0;
  std::int64_t tp = 0, num_gt = 0;
  double recall = std::numeric_limits<double>::quiet_NaN();  // NaN for an empty bin
};

// Recall per aspect-ratio slice. Each slice is an independent matching pass
// in which annotations outside the slice (or difficult) are ignored, so a
// detection overlapping only out-of-slice annotations is not punished.
inline std::vector<BinRecall> ar_binned_recall(const std::vector<ImageEval>& images, int cls,
                                               double iou_thr,
                                               const std::vector<double>& edges = default_ar_edges()) {
  validate_ar_edges(edges);
  std::vector<BinRecall> bins(edges.size() - 1);
  for (std::size_t k = 0; k < bins.size(); ++k) {
    bins[k].lo = edges[k];
    bins[k].hi = edges[k + 1];
    const int want = static_cast<int>(k);
    const MatchOutcome m = match_class(images, cls, iou_thr, [&](const GroundTruth& g) {
      return g.difficult || ar_bin(aspect_ratio(g.box), edges) != want;
    });
    bins[k].num_gt = m.num_gt;
    for (const MatchedDetection& d : m.dets)
      if (d.flag == MatchFlag::kTP) ++bins[k].tp;
    if (m.num_gt > 0)
      bins[k].recall = static_cast<double>(bins[k].tp) / static_cast<double>(m.num_gt);
  }
  return bins;
}

struct BinAp {
  double lo = 0.0, hi = 0.0;
  ClassEval eval;  // ap07/ap12 are NaN when the slice holds no annotations
};

// AP per aspect-ratio slice under the same ignore rule as ar_binned_recall.
inline std::vector<BinAp> ar_binned_ap(const std::vector<ImageEval>& images, int cls,
                                       double iou_thr,
                                       const std::vector<double>& edges = default_ar_edges()) {
  validate_ar_edges(edges);
  std::vector<BinAp> bins(edges.size() - 1);
  for (std::size_t k = 0; k < bins.size(); ++k) {
    bins[k].lo = edges[k];
    bins[k].hi = edges[k + 1];
    const int want = static_cast<int>(k);
    bins[k].eval = evaluate_class(images, cls, iou_thr, [&](const GroundTruth& g) {
      return g.difficult || ar_bin(aspect_ratio(g.box), edges) != want;
    });
  }
  return bins;
}

}  // namespace stripnet
