#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <stdexcept>
#include <string>
#include <vector>

namespace stripnet {

inline constexpr double kPi = std::numbers::pi;
inline constexpr double kHalfPi = kPi / 2.0;

inline double deg_to_rad(double d) { return d * kPi / 180.0; }
inline double rad_to_deg(double r) { return r * 180.0 / kPi; }

struct Vec2 {
  double x = 0.0, y = 0.0;
};

inline Vec2 operator+(Vec2 a, Vec2 b) { return {a.x + b.x, a.y + b.y}; }
inline Vec2 operator-(Vec2 a, Vec2 b) { return {a.x - b.x, a.y - b.y}; }
inline Vec2 operator*(double k, Vec2 a) { return {k * a.x, k * a.y}; }
inline double cross(Vec2 a, Vec2 b) { return a.x * b.y - a.y * b.x; }
inline double dot(Vec2 a, Vec2 b) { return a.x * b.x + a.y * b.y; }
inline double norm(Vec2 a) { return std::hypot(a.x, a.y); }

// Rotated rectangle in mathematical orientation (y grows upward).
// Canonical form: w >= h and theta in [-pi/2, pi/2); theta is the angle of
// the w axis. The box is unchanged under theta -> theta + pi.
struct RBox {
  double cx = 0.0, cy = 0.0;
  double w = 0.0, h = 0.0;
  double theta = 0.0;

  double area() const { return w * h; }
};

// Wrap into [-pi/2, pi/2). In-range values pass through untouched, so
// wrapping is idempotent.
inline double wrap_half_pi(double t) {
  if (t >= -kHalfPi && t < kHalfPi) return t;
  t = std::fmod(t + kHalfPi, kPi);
  if (t < 0.0) t += kPi;
  return t - kHalfPi;
}

inline RBox canonical(RBox b) {
  if (b.w < 0.0 || b.h < 0.0) throw std::invalid_argument("canonical: negative box side");
  if (b.w < b.h) {
    std::swap(b.w, b.h);
    b.theta += kHalfPi;
  }
  b.theta = wrap_half_pi(b.theta);
  return b;
}

// Counterclockwise, starting at the (+w/2, +h/2) corner of the box frame.
inline std::array<Vec2, 4> corners(const RBox& b) {
  const double c = std::cos(b.theta), s = std::sin(b.theta);
  const Vec2 u{c * b.w / 2.0, s * b.w / 2.0};
  const Vec2 v{-s * b.h / 2.0, c * b.h / 2.0};
  const Vec2 ctr{b.cx, b.cy};
  return {ctr + u + v, ctr - u + v, ctr - u - v, ctr + u - v};
}

inline bool contains(const RBox& b, Vec2 p) {
  const double c = std::cos(b.theta), s = std::sin(b.theta);
  const double dx = p.x - b.cx, dy = p.y - b.cy;
  const double lu = c * dx + s * dy;
  const double lv = -s * dx + c * dy;
  return std::abs(lu) <= b.w / 2.0 && std::abs(lv) <= b.h / 2.0;
}

struct Aabb {
  double x0 = 0.0, y0 = 0.0, x1 = 0.0, y1 = 0.0;
};

inline Aabb aabb(const RBox& b) {
  const auto cs = corners(b);
  Aabb r{cs[0].x, cs[0].y, cs[0].x, cs[0].y};
  for (const Vec2& p : cs) {
    r.x0 = std::min(r.x0, p.x);
    r.y0 = std::min(r.y0, p.y);
    r.x1 = std::max(r.x1, p.x);
    r.y1 = std::max(r.y1, p.y);
  }
  return r;
}

using Polygon = std::vector<Vec2>;

// Signed shoelace area; positive for counterclockwise order.
inline double polygon_area_signed(const Polygon& p) {
  double a = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const Vec2& s = p[i];
    const Vec2& t = p[(i + 1) % p.size()];
    a += cross(s, t);
  }
  return a / 2.0;
}

inline double polygon_area(const Polygon& p) { return std::abs(polygon_area_signed(p)); }

// Sutherland-Hodgman clip of a convex subject by a convex counterclockwise
// clip polygon.
inline Polygon clip_convex(const Polygon& subject, const Polygon& clip) {
  Polygon out = subject;
  for (std::size_t i = 0; i < clip.size() && !out.empty(); ++i) {
    const Vec2 a = clip[i];
    const Vec2 b = clip[(i + 1) % clip.size()];
    const Vec2 edge = b - a;
    Polygon in;
    in.swap(out);
    for (std::size_t j = 0; j < in.size(); ++j) {
      const Vec2 p = in[j];
      const Vec2 q = in[(j + 1) % in.size()];
      const double dp = cross(edge, p - a);
      const double dq = cross(edge, q - a);
      if (dp >= 0.0) out.push_back(p);
      if ((dp >= 0.0) != (dq >= 0.0)) {
        const double t = dp / (dp - dq);
        out.push_back(p + t * (q - p));
      }
    }
  }
  return out;
}

inline double intersection_area(const RBox& a, const RBox& b) {
  const auto ca = corners(a), cb = corners(b);
  const Polygon clipped =
      clip_convex(Polygon(ca.begin(), ca.end()), Polygon(cb.begin(), cb.end()));
  if (clipped.size() < 3) return 0.0;
  return polygon_area(clipped);
}

inline double iou(const RBox& a, const RBox& b) {
  const double inter = intersection_area(a, b);
  const double uni = a.area() + b.area() - inter;
  if (uni <= 0.0) return 0.0;
  return inter / uni;
}

// Corner-offset encoding of a rotated box against its own bounding rectangle:
// the topmost vertex lies on the top edge of the bounding rectangle at x
// offset dalpha from the center, the rightmost vertex on the right edge at y
// offset dbeta. An axis-aligned box has no unique topmost vertex and encodes
// as dalpha = dbeta = 0.
struct MidpointCode {
  double cx = 0.0, cy = 0.0;
  double dalpha = 0.0, dbeta = 0.0;
  double wext = 0.0, hext = 0.0;  // bounding rectangle extents
};

inline MidpointCode encode_midpoint(const RBox& box) {
  const RBox b = canonical(box);
  const auto cs = corners(b);
  const Aabb r = aabb(b);
  MidpointCode m;
  m.cx = b.cx;
  m.cy = b.cy;
  m.wext = r.x1 - r.x0;
  m.hext = r.y1 - r.y0;

  const double tol = 1e-9 * std::max(1.0, std::max(std::abs(r.y1), std::abs(r.x1)));
  int top = -1, right = -1;
  int top_ties = 0, right_ties = 0;
  for (int i = 0; i < 4; ++i) {
    if (cs[static_cast<std::size_t>(i)].y > r.y1 - tol) {
      ++top_ties;
      top = i;
    }
    if (cs[static_cast<std::size_t>(i)].x > r.x1 - tol) {
      ++right_ties;
      right = i;
    }
  }
  m.dalpha = (top_ties > 1) ? 0.0 : cs[static_cast<std::size_t>(top)].x - b.cx;
  m.dbeta = (right_ties > 1) ? 0.0 : cs[static_cast<std::size_t>(right)].y - b.cy;
  return m;
}

inline RBox decode_midpoint(const MidpointCode& m) {
  if (!(m.wext > 0.0) || !(m.hext > 0.0))
    throw std::invalid_argument("decode_midpoint: extents must be positive");
  if (std::abs(m.dalpha) > m.wext / 2.0 + 1e-9 || std::abs(m.dbeta) > m.hext / 2.0 + 1e-9)
    throw std::invalid_argument("decode_midpoint: offset exceeds half extent");

  if (std::abs(m.dalpha) < 1e-12 && std::abs(m.dbeta) < 1e-12)
    return canonical({m.cx, m.cy, m.wext, m.hext, 0.0});

  // Topmost, rightmost, bottommost, leftmost vertices; the box is centrally
  // symmetric, so B and L mirror T and R.
  const Vec2 t{m.cx + m.dalpha, m.cy + m.hext / 2.0};
  const Vec2 r{m.cx + m.wext / 2.0, m.cy + m.dbeta};
  const Vec2 b{m.cx - m.dalpha, m.cy - m.hext / 2.0};

  const double side_tr = norm(r - t);
  const double side_rb = norm(b - r);
  RBox out;
  out.cx = m.cx;
  out.cy = m.cy;
  if (side_rb >= side_tr) {
    out.w = side_rb;
    out.h = side_tr;
    out.theta = std::atan2(b.y - r.y, b.x - r.x);
  } else {
    out.w = side_tr;
    out.h = side_rb;
    out.theta = std::atan2(r.y - t.y, r.x - t.x);
  }
  return canonical(out);
}

// Anchor-relative regression target: center offsets in the anchor frame
// normalized by the anchor sides, log size ratios, wrapped angle delta.
struct BoxDelta {
  double dx = 0.0, dy = 0.0;
  double dw = 0.0, dh = 0.0;
  double dtheta = 0.0;
};

inline BoxDelta encode_delta(const RBox& anchor, const RBox& target) {
  if (!(anchor.w > 0.0) || !(anchor.h > 0.0))
    throw std::invalid_argument("encode_delta: anchor sides must be positive");
  if (!(target.w > 0.0) || !(target.h > 0.0))
    throw std::invalid_argument("encode_delta: target sides must be positive");
  const double c = std::cos(anchor.theta), s = std::sin(anchor.theta);
  const double ox = target.cx - anchor.cx;
  const double oy = target.cy - anchor.cy;
  BoxDelta d;
  d.dx = (c * ox + s * oy) / anchor.w;
  d.dy = (-s * ox + c * oy) / anchor.h;
  d.dw = std::log(target.w / anchor.w);
  d.dh = std::log(target.h / anchor.h);
  d.dtheta = wrap_half_pi(target.theta - anchor.theta);
  return d;
}

inline RBox decode_delta(const RBox& anchor, const BoxDelta& d) {
  if (!(anchor.w > 0.0) || !(anchor.h > 0.0))
    throw std::invalid_argument("decode_delta: anchor sides must be positive");
  const double c = std::cos(anchor.theta), s = std::sin(anchor.theta);
  const double ox = d.dx * anchor.w;
  const double oy = d.dy * anchor.h;
  RBox out;
  out.cx = anchor.cx + c * ox - s * oy;
  out.cy = anchor.cy + s * ox + c * oy;
  out.w = anchor.w * std::exp(d.dw);
  out.h = anchor.h * std::exp(d.dh);
  out.theta = anchor.theta + d.dtheta;
  return canonical(out);
}

// Greedy non-maximum suppression. Candidates are visited by descending score
// (ties by ascending index); a candidate is dropped when its overlap with an
// already kept box strictly exceeds the threshold. Returns kept indices in
// visit order.
inline std::vector<std::size_t> nms(const std::vector<RBox>& boxes,
                                    const std::vector<double>& scores, double iou_thr) {
  if (boxes.size() != scores.size()) throw std::invalid_argument("nms: size mismatch");
  std::vector<std::size_t> order(boxes.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (scores[a] != scores[b]) return scores[a] > scores[b];
    return a < b;
  });
  std::vector<std::size_t> keep;
  for (std::size_t idx : order) {
    bool suppressed = false;
    for (std::size_t k : keep)
      if (iou(boxes[idx], boxes[k]) > iou_thr) {
        suppressed = true;
        break;
      }
    if (!suppressed) keep.push_back(idx);
  }
  return keep;
}

namespace detail {
// Andrew monotone chain; counterclockwise, collinear points dropped.
inline std::vector<Vec2> convex_hull(std::vector<Vec2> pts) {
  std::sort(pts.begin(), pts.end(), [](Vec2 a, Vec2 b) {
    if (a.x != b.x) return a.x < b.x;
    return a.y < b.y;
  });
  pts.erase(std::unique(pts.begin(), pts.end(),
                        [](Vec2 a, Vec2 b) { return a.x == b.x && a.y == b.y; }),
            pts.end());
  const std::size_t n = pts.size();
  if (n < 3) return pts;
  std::vector<Vec2> hull(2 * n);
  std::size_t k = 0;
  for (std::size_t i = 0; i < n; ++i) {
    while (k >= 2 && cross(hull[k - 1] - hull[k - 2], pts[i] - hull[k - 2]) <= 0.0) --k;
    hull[k++] = pts[i];
  }
  const std::size_t lower = k + 1;
  for (std::size_t i = n - 1; i-- > 0;) {
    while (k >= lower && cross(hull[k - 1] - hull[k - 2], pts[i] - hull[k - 2]) <= 0.0) --k;
    hull[k++] = pts[i];
  }
  hull.resize(k - 1);
  return hull;
}
}  // namespace detail

// Smallest-area enclosing rotated rectangle (rotating calipers over hull
// edges). Degenerate inputs give degenerate boxes: a point has zero sides,
// collinear points a zero-height segment box.
inline RBox min_area_rect(const std::vector<Vec2>& points) {
  if (points.empty()) throw std::invalid_argument("min_area_rect: no points");
  std::vector<Vec2> hull = detail::convex_hull(points);
  if (hull.size() == 1) return {hull[0].x, hull[0].y, 0.0, 0.0, 0.0};
  if (hull.size() == 2) {
    const Vec2 d = hull[1] - hull[0];
    RBox seg{(hull[0].x + hull[1].x) / 2.0, (hull[0].y + hull[1].y) / 2.0, norm(d), 0.0,
             std::atan2(d.y, d.x)};
    return canonical(seg);
  }
  double best_area = std::numeric_limits<double>::infinity();
  RBox best;
  for (std::size_t i = 0; i < hull.size(); ++i) {
    const Vec2 e = hull[(i + 1) % hull.size()] - hull[i];
    const double len = norm(e);
    if (len == 0.0) continue;
    const Vec2 u{e.x / len, e.y / len};
    const Vec2 v{-u.y, u.x};
    double lo_u = dot(u, hull[0]), hi_u = lo_u;
    double lo_v = dot(v, hull[0]), hi_v = lo_v;
    for (const Vec2& p : hull) {
      const double pu = dot(u, p), pv = dot(v, p);
      lo_u = std::min(lo_u, pu);
      hi_u = std::max(hi_u, pu);
      lo_v = std::min(lo_v, pv);
      hi_v = std::max(hi_v, pv);
    }
    const double area = (hi_u - lo_u) * (hi_v - lo_v);
    if (area < best_area) {
      best_area = area;
      const double mu = (lo_u + hi_u) / 2.0, mv = (lo_v + hi_v) / 2.0;
      best.cx = mu * u.x + mv * v.x;
      best.cy = mu * u.y + mv * v.y;
      best.w = hi_u - lo_u;
      best.h = hi_v - lo_v;
      best.theta = std::atan2(u.y, u.x);
    }
  }
  return canonical(best);
}

}  // namespace stripnet
