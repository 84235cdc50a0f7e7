#include <filesystem>

#include <catch_amalgamated.hpp>

#include "stripnet/io.hpp"
#include "stripnet/tensor.hpp"

using stripnet::Tensor;

namespace {
std::filesystem::path temp_dir(const char* tag) {
  auto p = std::filesystem::temp_directory_path() / (std::string("stripnet_test_") + tag);
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}
}  // namespace

TEST_CASE("tensor indexing is NCHW row-major", "[tensor]") {
  Tensor t(2, 3, 4, 5);
  REQUIRE(t.numel() == 120);
  t.at(1, 2, 3, 4) = 7.0;
  REQUIRE(t.data[119] == 7.0);
  t.at(0, 0, 0, 1) = 3.0;
  REQUIRE(t.data[1] == 3.0);
  REQUIRE(t.index(0, 1, 0, 0) == 20);
  REQUIRE(t.index(1, 0, 0, 0) == 60);
}

TEST_CASE("tensor reshape preserves data and validates count", "[tensor]") {
  Tensor t = Tensor::of(1, 1, 2, 3, {1, 2, 3, 4, 5, 6});
  Tensor r = t.reshaped(1, 6, 1, 1);
  REQUIRE(r.at(0, 4, 0, 0) == 5.0);
  REQUIRE_THROWS_AS(t.reshaped(1, 5, 1, 1), std::invalid_argument);
}

TEST_CASE("tensor file round trip preserves bits", "[tensor][io]") {
  auto dir = temp_dir("tensor_io");
  Tensor t(2, 1, 3, 2);
  double x = 0.1;
  for (double& v : t.data) {
    v = x;
    x = x * -3.7 + 0.001;
  }
  t.data[3] = -0.0;
  stripnet::save_tensor(dir / "a.stnt", t);
  Tensor u = stripnet::load_tensor(dir / "a.stnt");
  REQUIRE(u.dims == t.dims);
  for (std::int64_t i = 0; i < t.numel(); ++i)
    REQUIRE(u.data[static_cast<std::size_t>(i)] == t.data[static_cast<std::size_t>(i)]);
}

TEST_CASE("tensor file header is the documented layout", "[tensor][io]") {
  auto dir = temp_dir("tensor_hdr");
  Tensor t(1, 2, 1, 1);
  t.data = {1.0, 2.0};
  stripnet::save_tensor(dir / "h.stnt", t);
  std::ifstream f(dir / "h.stnt", std::ios::binary);
  std::string bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  REQUIRE(bytes.size() == 4 + 1 + 32 + 16);
  REQUIRE(bytes.substr(0, 4) == "STNT");
  REQUIRE(bytes[4] == 1);
  // dims little-endian: N=1, C=2.
  REQUIRE(static_cast<unsigned char>(bytes[5]) == 1);
  REQUIRE(static_cast<unsigned char>(bytes[13]) == 2);
}

TEST_CASE("corrupt tensor files are rejected", "[tensor][io]") {
  auto dir = temp_dir("tensor_bad");
  stripnet::write_text_file(dir / "bad.stnt", "NOPE");
  REQUIRE_THROWS(stripnet::load_tensor(dir / "bad.stnt"));
  Tensor t(1, 1, 1, 1);
  stripnet::save_tensor(dir / "t.stnt", t);
  // Truncate.
  auto full = [&] {
    std::ifstream f(dir / "t.stnt", std::ios::binary);
    return std::string((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  }();
  stripnet::write_text_file(dir / "cut.stnt", full.substr(0, full.size() - 3));
  REQUIRE_THROWS(stripnet::load_tensor(dir / "cut.stnt"));
}

TEST_CASE("checkpoint round trip with metadata", "[tensor][io]") {
  auto dir = temp_dir("ckpt");
  std::map<std::string, Tensor> params;
  params["w"] = Tensor::of(1, 1, 1, 2, {1.5, -2.5});
  params["b"] = Tensor::of(1, 1, 1, 1, {0.25});
  nlohmann::json meta;
  meta["layout"] = "strip-loc-shared-theta";
  stripnet::save_checkpoint(dir / "ck", params, meta);
  auto ck = stripnet::load_checkpoint(dir / "ck");
  REQUIRE(ck.tensors.size() == 2);
  REQUIRE(ck.tensors.at("w").at(0, 0, 0, 1) == -2.5);
  REQUIRE(ck.meta.at("layout") == "strip-loc-shared-theta");
  REQUIRE(std::filesystem::exists(dir / "ck" / "manifest.json"));
}
