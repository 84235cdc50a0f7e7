#pragma once

// DOTA-style annotation ingestion, image tiling with a stride-and-clamp rule,
// and cross-tile detection merging. Text files carry angles in degrees; every
// in-memory box is radians.

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "stripnet/geometry.hpp"
#include "stripnet/textio.hpp"

namespace stripnet {

struct DotaRecord {
  RBox box;  // canonical
  std::string category;
  int difficulty = 0;
};

struct ScoredBox {
  RBox box;
  std::string category;
  double score = 0.0;
};

namespace detail {

inline std::vector<std::string> split_ws(const std::string& line) {
  std::istringstream is(line);
  std::vector<std::string> toks;
  std::string t;
  while (is >> t) toks.push_back(t);
  return toks;
}

[[noreturn]] inline void parse_fail(int line_no, const std::string& what) {
  throw std::invalid_argument("line " + std::to_string(line_no) + ": " + what);
}

inline double need_double(const std::string& tok, int line_no, const char* what) {
  double v;
  if (!parse_double_token(tok, v) || !std::isfinite(v))
    parse_fail(line_no, std::string("expected a finite number for ") + what + ", got '" + tok +
                            "'");
  return v;
}

}  // namespace detail

// Quad annotation line: 8 corner coordinates, category, difficulty flag.
// "imagesource:" / "gsd:" headers and blank lines are skipped. Parsing is
// all-or-nothing: the first malformed line aborts with its line number. Each
// quad becomes the canonical minimum-area enclosing rotated box.
inline std::vector<DotaRecord> parse_dota_annotations(const std::string& text) {
  std::vector<DotaRecord> out;
  std::istringstream is(text);
  std::string line;
  int line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    const auto toks = detail::split_ws(line);
    if (toks.empty()) continue;
    if (toks[0].rfind("imagesource:", 0) == 0 || toks[0].rfind("gsd:", 0) == 0) continue;
    if (toks.size() != 10)
      detail::parse_fail(line_no, "expected 8 coordinates + category + difficulty (10 tokens), "
                                  "got " + std::to_string(toks.size()));
    std::vector<Vec2> quad(4);
    for (int i = 0; i < 4; ++i) {
      quad[static_cast<std::size_t>(i)].x =
          detail::need_double(toks[static_cast<std::size_t>(2 * i)], line_no, "a coordinate");
      quad[static_cast<std::size_t>(i)].y =
          detail::need_double(toks[static_cast<std::size_t>(2 * i + 1)], line_no, "a coordinate");
    }
    DotaRecord rec;
    rec.box = min_area_rect(quad);
    rec.category = toks[8];
    if (!parse_int_token(toks[9], rec.difficulty) ||
        (rec.difficulty != 0 && rec.difficulty != 1))
      detail::parse_fail(line_no, "difficulty must be 0 or 1, got '" + toks[9] + "'");
    out.push_back(std::move(rec));
  }
  return out;
}

// ---- canonical ground-truth and detection text formats ----
// ground truth: category cx cy w h theta_deg difficulty
// detections:   category score cx cy w h theta_deg

namespace detail {
inline void print_num(std::ostringstream& os, double v) {
  os << ' ' << std::setprecision(17) << v;
}
}  // namespace detail

inline std::string format_ground_truth(const std::vector<DotaRecord>& recs) {
  std::ostringstream os;
  for (const auto& r : recs) {
    os << r.category;
    detail::print_num(os, r.box.cx);
    detail::print_num(os, r.box.cy);
    detail::print_num(os, r.box.w);
    detail::print_num(os, r.box.h);
    detail::print_num(os, rad_to_deg(r.box.theta));
    os << ' ' << r.difficulty << '\n';
  }
  return os.str();
}

inline std::vector<DotaRecord> parse_ground_truth(const std::string& text) {
  std::vector<DotaRecord> out;
  std::istringstream is(text);
  std::string line;
  int line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    const auto toks = detail::split_ws(line);
    if (toks.empty()) continue;
    if (toks.size() != 7)
      detail::parse_fail(line_no,
                         "expected category cx cy w h theta_deg difficulty (7 tokens), got " +
                             std::to_string(toks.size()));
    DotaRecord rec;
    rec.category = toks[0];
    rec.box.cx = detail::need_double(toks[1], line_no, "cx");
    rec.box.cy = detail::need_double(toks[2], line_no, "cy");
    rec.box.w = detail::need_double(toks[3], line_no, "w");
    rec.box.h = detail::need_double(toks[4], line_no, "h");
    rec.box.theta = deg_to_rad(detail::need_double(toks[5], line_no, "theta_deg"));
    if (!parse_int_token(toks[6], rec.difficulty) ||
        (rec.difficulty != 0 && rec.difficulty != 1))
      detail::parse_fail(line_no, "difficulty must be 0 or 1, got '" + toks[6] + "'");
    rec.box = canonical(rec.box);
    out.push_back(std::move(rec));
  }
  return out;
}

inline std::string format_detections(const std::vector<ScoredBox>& dets) {
  std::ostringstream os;
  for (const auto& d : dets) {
    os << d.category;
    detail::print_num(os, d.score);
    detail::print_num(os, d.box.cx);
    detail::print_num(os, d.box.cy);
    detail::print_num(os, d.box.w);
    detail::print_num(os, d.box.h);
    detail::print_num(os, rad_to_deg(d.box.theta));
    os << '\n';
  }
  return os.str();
}

inline std::vector<ScoredBox> parse_detections(const std::string& text) {
  std::vector<ScoredBox> out;
  std::istringstream is(text);
  std::string line;
  int line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    const auto toks = detail::split_ws(line);
    if (toks.empty()) continue;
    if (toks.size() != 7)
      detail::parse_fail(line_no,
                         "expected category score cx cy w h theta_deg (7 tokens), got " +
                             std::to_string(toks.size()));
    ScoredBox d;
    d.category = toks[0];
    d.score = detail::need_double(toks[1], line_no, "score");
    d.box.cx = detail::need_double(toks[2], line_no, "cx");
    d.box.cy = detail::need_double(toks[3], line_no, "cy");
    d.box.w = detail::need_double(toks[4], line_no, "w");
    d.box.h = detail::need_double(toks[5], line_no, "h");
    d.box.theta = deg_to_rad(detail::need_double(toks[6], line_no, "theta_deg"));
    d.box = canonical(d.box);
    out.push_back(std::move(d));
  }
  return out;
}

// ---- tiling ----

// Offsets 0, stride, 2*stride, ... with stride = patch - overlap; the final
// offset is clamped to max(0, dim - patch) so the last tile hugs the border
// instead of padding past it. Duplicates collapse (exact-fit dimensions).
inline std::vector<int> tile_offsets(int dim, int patch, int overlap) {
  if (dim < 1) throw std::invalid_argument("tile: dim must be >= 1");
  if (overlap < 0) throw std::invalid_argument("tile: overlap must be >= 0");
  if (patch <= overlap) throw std::invalid_argument("tile: patch must exceed overlap");
  const int stride = patch - overlap;
  std::vector<int> out;
  for (int x = 0; x + patch < dim; x += stride) out.push_back(x);
  out.push_back(std::max(0, dim - patch));
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

struct Tile {
  int x = 0, y = 0, w = 0, h = 0;
};

// Row-major grid of clamped tiles; tiles are patch-sized whenever the image
// is at least patch wide/tall.
inline std::vector<Tile> tile_grid(int width, int height, int patch, int overlap) {
  const std::vector<int> xs = tile_offsets(width, patch, overlap);
  const std::vector<int> ys = tile_offsets(height, patch, overlap);
  std::vector<Tile> out;
  out.reserve(xs.size() * ys.size());
  for (int y : ys)
    for (int x : xs)
      out.push_back(Tile{x, y, std::min(patch, width - x), std::min(patch, height - y)});
  return out;
}

enum class GtClip { kKeepWhole, kClipToTile };

// A box belongs to a tile iff its center lies inside; coordinates shift into
// the tile frame. kClipToTile replaces the box with the minimum-area box of
// its intersection with the tile rectangle.
inline std::vector<DotaRecord> tile_ground_truth(const std::vector<DotaRecord>& recs,
                                                 const Tile& tile, GtClip clip) {
  std::vector<DotaRecord> out;
  for (const auto& r : recs) {
    const double lx = r.box.cx - tile.x;
    const double ly = r.box.cy - tile.y;
    if (!(lx >= 0.0 && lx < tile.w && ly >= 0.0 && ly < tile.h)) continue;
    DotaRecord local = r;
    local.box.cx = lx;
    local.box.cy = ly;
    if (clip == GtClip::kClipToTile) {
      const auto cs = corners(local.box);
      const Polygon rect{{0.0, 0.0},
                         {static_cast<double>(tile.w), 0.0},
                         {static_cast<double>(tile.w), static_cast<double>(tile.h)},
                         {0.0, static_cast<double>(tile.h)}};
      const Polygon clipped = clip_convex(Polygon(cs.begin(), cs.end()), rect);
      if (clipped.size() < 3) continue;  // degenerate sliver, nothing left to keep
      local.box = min_area_rect(clipped);
    }
    out.push_back(std::move(local));
  }
  return out;
}

// ---- cross-tile merging ----

struct TileDetections {
  int offset_x = 0, offset_y = 0;
  std::vector<ScoredBox> dets;
};

// Un-offsets every tile's detections into image coordinates and runs
// per-category rotated NMS over the pool. Output order: descending score,
// ties by category then pool order (tile order, then in-tile order), so the
// result is reproducible for any input arrangement.
inline std::vector<ScoredBox> merge_detections(const std::vector<TileDetections>& tiles,
                                               double iou_thr) {
  if (!(iou_thr >= 0.0) || !(iou_thr <= 1.0))
    throw std::invalid_argument("merge: iou threshold must be in [0, 1]");
  std::vector<ScoredBox> pool;
  for (const auto& t : tiles)
    for (const auto& d : t.dets) {
      ScoredBox g = d;
      g.box.cx += t.offset_x;
      g.box.cy += t.offset_y;
      pool.push_back(std::move(g));
    }
  std::map<std::string, std::vector<std::size_t>> by_cat;
  for (std::size_t i = 0; i < pool.size(); ++i) by_cat[pool[i].category].push_back(i);

  std::vector<std::size_t> kept;
  for (const auto& [cat, idx] : by_cat) {
    std::vector<RBox> boxes;
    std::vector<double> scores;
    boxes.reserve(idx.size());
    for (std::size_t i : idx) {
      boxes.push_back(pool[i].box);
      scores.push_back(pool[i].score);
    }
    for (std::size_t k : nms(boxes, scores, iou_thr)) kept.push_back(idx[k]);
  }
  std::sort(kept.begin(), kept.end(), [&](std::size_t a, std::size_t b) {
    if (pool[a].score != pool[b].score) return pool[a].score > pool[b].score;
    if (pool[a].category != pool[b].category) return pool[a].category < pool[b].category;
    return a < b;
  });
  std::vector<ScoredBox> out;
  out.reserve(kept.size());
  for (std::size_t i : kept) out.push_back(pool[i]);
  return out;
}

}  // namespace stripnet
