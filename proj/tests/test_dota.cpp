#include <catch_amalgamated.hpp>

#include <cmath>
#include <sstream>
#include <string>
#include <vector>

#include "stripnet/dota.hpp"

using namespace stripnet;

namespace {

void check_box(const RBox& got, const RBox& want, double tol = 1e-9) {
  CHECK(got.cx == Catch::Approx(want.cx).margin(tol));
  CHECK(got.cy == Catch::Approx(want.cy).margin(tol));
  CHECK(got.w == Catch::Approx(want.w).margin(tol));
  CHECK(got.h == Catch::Approx(want.h).margin(tol));
  CHECK(got.theta == Catch::Approx(want.theta).margin(tol));
}

}  // namespace

TEST_CASE("axis-aligned quad becomes its center-size box") {
  const auto recs = parse_dota_annotations("100 100 200 100 200 150 100 150 ship 0\n");
  REQUIRE(recs.size() == 1);
  check_box(recs[0].box, RBox{150.0, 125.0, 100.0, 50.0, 0.0});
  CHECK(recs[0].category == "ship");
  CHECK(recs[0].difficulty == 0);
}

TEST_CASE("header lines and blanks are skipped") {
  const std::string text =
      "imagesource:GoogleEarth\n"
      "gsd:0.146343590398\n"
      "\n"
      "100 100 200 100 200 150 100 150 ship 1\n";
  const auto recs = parse_dota_annotations(text);
  REQUIRE(recs.size() == 1);
  CHECK(recs[0].difficulty == 1);
}

TEST_CASE("rotated quad recovers the rotated box") {
  // 45-degree square, diagonal 2*sqrt(2), centered at (10, 10).
  std::ostringstream os;
  os << (10.0 - std::sqrt(2.0)) << " 10 10 " << (10.0 - std::sqrt(2.0)) << ' '
     << (10.0 + std::sqrt(2.0)) << " 10 10 " << (10.0 + std::sqrt(2.0)) << " plane 0\n";
  const auto recs = parse_dota_annotations(os.str());
  REQUIRE(recs.size() == 1);
  CHECK(recs[0].box.cx == Catch::Approx(10.0).margin(1e-9));
  CHECK(recs[0].box.cy == Catch::Approx(10.0).margin(1e-9));
  CHECK(recs[0].box.w == Catch::Approx(2.0).margin(1e-9));
  CHECK(recs[0].box.h == Catch::Approx(2.0).margin(1e-9));
  CHECK(std::abs(std::abs(recs[0].box.theta) - kPi / 4.0) < 1e-9);
}

TEST_CASE("malformed annotation lines abort with their line number") {
  const std::string seven = "1 2 3 4 5 6 ship\n";
  CHECK_THROWS_WITH(parse_dota_annotations(seven), Catch::Matchers::ContainsSubstring("line 1"));

  const std::string bad_later =
      "100 100 200 100 200 150 100 150 ship 0\n"
      "imagesource:x\n"
      "1 2 3 4 5 6 7 oops ship 0\n";
  CHECK_THROWS_WITH(parse_dota_annotations(bad_later),
                    Catch::Matchers::ContainsSubstring("line 3"));

  CHECK_THROWS_AS(parse_dota_annotations("100 100 200 100 200 150 100 150 ship 2\n"),
                  std::invalid_argument);
  CHECK_THROWS_AS(parse_dota_annotations("nan 100 200 100 200 150 100 150 ship 0\n"),
                  std::invalid_argument);
}

TEST_CASE("windows line endings parse the same") {
  const auto recs =
      parse_dota_annotations("100 100 200 100 200 150 100 150 ship 0\r\n");
  REQUIRE(recs.size() == 1);
  CHECK(recs[0].category == "ship");
}

TEST_CASE("empty annotation text yields no records") {
  CHECK(parse_dota_annotations("").empty());
  CHECK(parse_dota_annotations("\n\n").empty());
}

TEST_CASE("ground-truth text round trips and stores degrees") {
  std::vector<DotaRecord> recs;
  recs.push_back(DotaRecord{canonical(RBox{10.5, 20.25, 8.0, 4.0, deg_to_rad(30.0)}), "ship", 0});
  recs.push_back(
      DotaRecord{canonical(RBox{-3.0, 7.0, 5.0, 5.0, deg_to_rad(-45.0)}), "plane", 1});
  const std::string text = format_ground_truth(recs);

  std::istringstream first_line(text.substr(0, text.find('\n')));
  std::vector<std::string> toks;
  std::string t;
  while (first_line >> t) toks.push_back(t);
  REQUIRE(toks.size() == 7);
  double deg = 0.0;
  REQUIRE(parse_double_token(toks[5], deg));
  CHECK(deg == Catch::Approx(30.0).margin(1e-9));

  const auto back = parse_ground_truth(text);
  REQUIRE(back.size() == 2);
  for (std::size_t i = 0; i < 2; ++i) {
    check_box(back[i].box, recs[i].box);
    CHECK(back[i].category == recs[i].category);
    CHECK(back[i].difficulty == recs[i].difficulty);
  }
}

TEST_CASE("detection text round trips") {
  std::vector<ScoredBox> dets;
  dets.push_back(ScoredBox{canonical(RBox{100.0, 50.0, 30.0, 10.0, deg_to_rad(60.0)}), "ship",
                           0.875});
  const std::string text = format_detections(dets);
  const auto back = parse_detections(text);
  REQUIRE(back.size() == 1);
  check_box(back[0].box, dets[0].box);
  CHECK(back[0].score == Catch::Approx(0.875).margin(1e-12));
  CHECK(back[0].category == "ship");

  CHECK_THROWS_WITH(parse_detections("ship 0.5 1 2 3 4\n"),
                    Catch::Matchers::ContainsSubstring("line 1"));
}

TEST_CASE("tile offsets follow the stride-and-clamp rule") {
  CHECK(tile_offsets(1024, 1024, 200) == std::vector<int>{0});
  CHECK(tile_offsets(1824, 1024, 200) == std::vector<int>{0, 800});
  CHECK(tile_offsets(2048, 1024, 0) == std::vector<int>{0, 1024});
  CHECK(tile_offsets(500, 1024, 200) == std::vector<int>{0});
  CHECK(tile_offsets(3000, 1024, 200) == std::vector<int>{0, 824, 1648, 1976});

  CHECK_THROWS_AS(tile_offsets(1024, 200, 200), std::invalid_argument);
  CHECK_THROWS_AS(tile_offsets(1024, 100, 200), std::invalid_argument);
  CHECK_THROWS_AS(tile_offsets(0, 1024, 200), std::invalid_argument);
  CHECK_THROWS_AS(tile_offsets(1024, 1024, -1), std::invalid_argument);
}

TEST_CASE("tile grid is row-major and clamped to the image") {
  const auto tiles = tile_grid(1824, 1024, 1024, 200);
  REQUIRE(tiles.size() == 2);
  CHECK(tiles[0].x == 0);
  CHECK(tiles[0].y == 0);
  CHECK(tiles[1].x == 800);
  CHECK(tiles[1].y == 0);
  for (const auto& t : tiles) {
    CHECK(t.w == 1024);
    CHECK(t.h == 1024);
  }

  const auto small = tile_grid(500, 300, 1024, 200);
  REQUIRE(small.size() == 1);
  CHECK(small[0].w == 500);
  CHECK(small[0].h == 300);
}

TEST_CASE("ground truth lands in the tile containing its center") {
  std::vector<DotaRecord> recs;
  recs.push_back(DotaRecord{RBox{100.0, 100.0, 40.0, 20.0, 0.0}, "ship", 0});   // inside
  recs.push_back(DotaRecord{RBox{900.0, 100.0, 40.0, 20.0, 0.0}, "ship", 0});   // outside
  const Tile tile{0, 0, 512, 512};

  const auto kept = tile_ground_truth(recs, tile, GtClip::kKeepWhole);
  REQUIRE(kept.size() == 1);
  check_box(kept[0].box, RBox{100.0, 100.0, 40.0, 20.0, 0.0});
}

TEST_CASE("tile shift moves coordinates into the tile frame") {
  std::vector<DotaRecord> recs;
  recs.push_back(DotaRecord{RBox{900.0, 700.0, 40.0, 20.0, 0.0}, "ship", 0});
  const Tile tile{800, 512, 512, 512};
  const auto kept = tile_ground_truth(recs, tile, GtClip::kKeepWhole);
  REQUIRE(kept.size() == 1);
  check_box(kept[0].box, RBox{100.0, 188.0, 40.0, 20.0, 0.0});
}

TEST_CASE("clipping trims a box that sticks out of the tile") {
  std::vector<DotaRecord> recs;
  recs.push_back(DotaRecord{RBox{90.0, 50.0, 40.0, 20.0, 0.0}, "ship", 0});  // spans x 70..110
  const Tile tile{0, 0, 100, 100};

  const auto whole = tile_ground_truth(recs, tile, GtClip::kKeepWhole);
  REQUIRE(whole.size() == 1);
  CHECK(whole[0].box.w == Catch::Approx(40.0).margin(1e-12));

  const auto clipped = tile_ground_truth(recs, tile, GtClip::kClipToTile);
  REQUIRE(clipped.size() == 1);
  check_box(clipped[0].box, RBox{85.0, 50.0, 30.0, 20.0, 0.0});
}

TEST_CASE("single-tile merge is the identity up to score ordering") {
  TileDetections tile;
  tile.dets.push_back(ScoredBox{RBox{50.0, 50.0, 10.0, 5.0, 0.1}, "ship", 0.4});
  tile.dets.push_back(ScoredBox{RBox{200.0, 50.0, 10.0, 5.0, -0.3}, "plane", 0.9});
  tile.dets.push_back(ScoredBox{RBox{50.0, 200.0, 10.0, 5.0, 0.0}, "ship", 0.6});

  const auto merged = merge_detections({tile}, 0.1);
  REQUIRE(merged.size() == 3);
  CHECK(merged[0].score == 0.9);
  CHECK(merged[1].score == 0.6);
  CHECK(merged[2].score == 0.4);
  CHECK(merged[0].category == "plane");
  check_box(merged[2].box, RBox{50.0, 50.0, 10.0, 5.0, 0.1});
}

TEST_CASE("duplicate detection across overlapping tiles keeps one survivor") {
  // Same physical box seen from two tiles with different local coordinates.
  TileDetections a;
  a.offset_x = 0;
  a.dets.push_back(ScoredBox{RBox{900.0, 100.0, 40.0, 20.0, 0.2}, "ship", 0.8});
  TileDetections b;
  b.offset_x = 800;
  b.dets.push_back(ScoredBox{RBox{100.0, 100.0, 40.0, 20.0, 0.2}, "ship", 0.7});

  const auto merged = merge_detections({a, b}, 0.5);
  REQUIRE(merged.size() == 1);
  CHECK(merged[0].score == 0.8);
  check_box(merged[0].box, RBox{900.0, 100.0, 40.0, 20.0, 0.2});
}

TEST_CASE("suppression chain matches the greedy hand trace") {
  // A at x 0, B at x 8, C at x 16, all 10x10: IoU(A,B) = IoU(B,C) = 1/9,
  // IoU(A,C) = 0. Greedy at 0.1: A kept, B suppressed by A, C kept because
  // the suppressed B no longer shields it.
  TileDetections tile;
  tile.dets.push_back(ScoredBox{RBox{0.0, 0.0, 10.0, 10.0, 0.0}, "ship", 0.9});
  tile.dets.push_back(ScoredBox{RBox{8.0, 0.0, 10.0, 10.0, 0.0}, "ship", 0.8});
  tile.dets.push_back(ScoredBox{RBox{16.0, 0.0, 10.0, 10.0, 0.0}, "ship", 0.7});

  const auto merged = merge_detections({tile}, 0.1);
  REQUIRE(merged.size() == 2);
  CHECK(merged[0].box.cx == 0.0);
  CHECK(merged[1].box.cx == 16.0);
}

TEST_CASE("different categories never suppress each other") {
  TileDetections tile;
  tile.dets.push_back(ScoredBox{RBox{50.0, 50.0, 10.0, 10.0, 0.0}, "ship", 0.9});
  tile.dets.push_back(ScoredBox{RBox{50.0, 50.0, 10.0, 10.0, 0.0}, "plane", 0.8});
  const auto merged = merge_detections({tile}, 0.1);
  CHECK(merged.size() == 2);
}

TEST_CASE("merge rejects thresholds outside the unit interval") {
  CHECK_THROWS_AS(merge_detections({}, -0.1), std::invalid_argument);
  CHECK_THROWS_AS(merge_detections({}, 1.5), std::invalid_argument);
  CHECK(merge_detections({}, 0.5).empty());
}
